"""Convergence experiments: value convergence in N, propagation of chaos, semi-limit proxies.

Reports serialise to CSV with a ``#`` comment header carrying the library
version and the resolved configuration.  Floats are written with ``repr`` so
reruns with the same configuration produce identical bytes.  Wall-clock
runtime is measured but only written when explicitly requested, since it
would break byte-identical reruns.
"""

from __future__ import annotations

import io
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy import integrate, special, stats

from . import __version__
from .dynamics import ControlPolicy, MKVProblemSpec, simulate_batch
from .empirical import make_empirical, wasserstein2
from .solvers import PolicySearchResult, value_policy_search


@dataclass(frozen=True)
class TargetDistribution:
    """A target law with a sampler and analytic first two moments.

    One-dimensional targets may carry ``ppf`` (inverse CDF) and ``pdf`` for
    quantile initial data and exact W2 quadrature.  A point mass has
    ``atom`` set instead of a density.  ``partial_moments(y)`` optionally
    returns the integrals of ``1, t, t^2`` against the law over ``(-inf, y]``,
    which turns the W2 quadrature into closed form.
    """

    name: str
    d: int
    sampler: Callable[[np.random.Generator, int], np.ndarray]
    mean: np.ndarray
    var: np.ndarray
    ppf: Callable | None = None
    pdf: Callable | None = None
    support: tuple[float, float] = (-math.inf, math.inf)
    atom: np.ndarray | None = None
    partial_moments: Callable[[np.ndarray], tuple[np.ndarray, np.ndarray, np.ndarray]] | None = None


def _gaussian_partial_moments(mean: float, std: float):
    def moments(y):
        z = (np.asarray(y, dtype=float) - mean) / std
        cdf, dens = special.ndtr(z), stats.norm.pdf(z)
        zdens = np.where(np.isfinite(z), np.nan_to_num(z) * dens, 0.0)
        m1 = mean * cdf - std * dens
        m2 = mean**2 * cdf - 2 * mean * std * dens + std**2 * (cdf - zdens)
        return cdf, m1, m2

    return moments


def gaussian_target(mean: float = 0.0, std: float = 1.0) -> TargetDistribution:
    dist = stats.norm(mean, std)
    return TargetDistribution(
        name=f"gaussian({mean:g},{std:g})", d=1,
        sampler=lambda rng, n: rng.normal(mean, std, size=(n, 1)),
        mean=np.array([mean]), var=np.array([std**2]), ppf=dist.ppf, pdf=dist.pdf,
        partial_moments=_gaussian_partial_moments(mean, std),
    )


def uniform_target(lo: float = 0.0, hi: float = 1.0) -> TargetDistribution:
    dist = stats.uniform(lo, hi - lo)
    return TargetDistribution(
        name=f"uniform({lo:g},{hi:g})", d=1,
        sampler=lambda rng, n: rng.uniform(lo, hi, size=(n, 1)),
        mean=np.array([(lo + hi) / 2]), var=np.array([(hi - lo) ** 2 / 12]),
        ppf=dist.ppf, pdf=dist.pdf, support=(lo, hi),
        partial_moments=lambda y: tuple((np.clip(y, lo, hi) ** k - lo**k) / (k * (hi - lo)) for k in (1, 2, 3)),
    )


def point_target(location) -> TargetDistribution:
    loc = np.atleast_1d(np.asarray(location, dtype=float))
    d = loc.size
    return TargetDistribution(
        name=f"point({','.join(f'{v:g}' for v in loc)})", d=d,
        sampler=lambda rng, n: np.broadcast_to(loc, (n, d)).copy(),
        mean=loc, var=np.zeros(d), ppf=(lambda u: np.full_like(np.asarray(u, dtype=float), loc[0])) if d == 1 else None,
        atom=loc,
    )


def gaussian_nd_target(d: int, std: float = 1.0) -> TargetDistribution:
    return TargetDistribution(
        name=f"gaussian_iso(d={d},{std:g})", d=d,
        sampler=lambda rng, n: rng.normal(0.0, std, size=(n, d)),
        mean=np.zeros(d), var=np.full(d, std**2),
    )


TARGETS: dict[str, Callable[..., TargetDistribution]] = {
    "gaussian": gaussian_target,
    "uniform": uniform_target,
    "point": point_target,
    "gaussian_nd": gaussian_nd_target,
}


@dataclass(frozen=True)
class InitialDataSchedule:
    target: TargetDistribution
    Ns: tuple[int, ...]
    method: str = "quantile"
    seed: int = 0

    def __post_init__(self) -> None:
        if self.method not in ("quantile", "iid"):
            raise ValueError(f"unknown initial-data method {self.method!r}")
        if self.method == "quantile" and (self.target.d != 1 or self.target.ppf is None):
            raise ValueError("quantile initial data needs a one-dimensional target with an inverse CDF")
        ns = tuple(int(n) for n in self.Ns)
        if not ns or any(n < 1 for n in ns) or any(b <= a for a, b in zip(ns, ns[1:])):
            raise ValueError("Ns must be a nonempty strictly increasing list of positive counts")
        object.__setattr__(self, "Ns", ns)


@dataclass(frozen=True)
class InitialData:
    N: int
    x: np.ndarray
    w2: float
    w2_method: str


def quantile_points(target: TargetDistribution, N: int) -> np.ndarray:
    u = (np.arange(1, N + 1) - 0.5) / N
    return np.asarray(target.ppf(u), dtype=float).reshape(N, 1)


def w2_quantile_quadrature(x: np.ndarray, target: TargetDistribution) -> float:
    """Exact W2 between a one-dimensional cloud and ``target`` by integrating over quantile cells.

    The optimal coupling is monotone, so the i-th smallest atom receives the
    mass between the ``(i-1)/N`` and ``i/N`` quantiles.
    """
    pts = np.sort(np.asarray(x, dtype=float).reshape(-1))
    n = pts.size
    if target.atom is not None:
        return math.sqrt(float(np.mean((pts - target.atom[0]) ** 2)))
    edges = np.asarray(target.ppf(np.arange(n + 1) / n), dtype=float)
    edges[0], edges[-1] = target.support
    if target.partial_moments is not None:
        g0, g1, g2 = (np.diff(m) for m in target.partial_moments(edges))
        return math.sqrt(max(math.fsum(pts**2 * g0 - 2 * pts * g1 + g2), 0.0))
    total = []
    for i in range(n):
        val, _ = integrate.quad(lambda y: (y - pts[i]) ** 2 * target.pdf(y), edges[i], edges[i + 1], epsabs=1e-13, epsrel=1e-11, limit=200)
        total.append(val)
    return math.sqrt(max(math.fsum(total), 0.0))


def w2_reference_cloud(x: np.ndarray, target: TargetDistribution, M: int = 2048, seed: int = 0) -> float:
    """W2 to a reference cloud of about ``M`` atoms; each of the N atoms is replicated to match sizes.

    One-dimensional targets with an inverse CDF use quantile reference atoms;
    others use seeded draws.
    """
    x = np.asarray(x, dtype=float)
    n, d = x.shape
    k = max(1, M // n)
    m = n * k
    if d == 1 and target.ppf is not None:
        ref = quantile_points(target, m)
    else:
        ref = target.sampler(np.random.Generator(np.random.Philox(key=[seed, 2**62])), m)
    return wasserstein2(make_empirical(np.repeat(x, k, axis=0)), make_empirical(ref))[0]


def build_initial_data(schedule: InitialDataSchedule, reference_size: int = 2048) -> list[InitialData]:
    out = []
    t = schedule.target
    for N in schedule.Ns:
        if schedule.method == "quantile":
            x = quantile_points(t, N)
        else:
            rng = np.random.Generator(np.random.Philox(key=[schedule.seed, N]))
            x = np.asarray(t.sampler(rng, N), dtype=float).reshape(N, t.d)
        if t.d == 1 and (t.pdf is not None or t.atom is not None):
            out.append(InitialData(N, x, w2_quantile_quadrature(x, t), "quadrature"))
        else:
            out.append(InitialData(N, x, w2_reference_cloud(x, t, reference_size, schedule.seed), f"reference[{reference_size}]"))
    return out


def row_seed(seed: int, N: int) -> int:
    """Independent 64-bit seed for the schedule row with ``N`` particles."""
    return int(np.random.SeedSequence([seed, N]).generate_state(1, dtype=np.uint64)[0])


# ---------------------------------------------------------------- reports


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def csv_text(columns: Sequence[str], rows: Sequence[Sequence], config: dict, footer: dict | None = None) -> str:
    buf = io.StringIO()
    buf.write(f"# mfapprox {__version__}\n")
    for key in sorted(config):
        val = config[key]
        text = " ".join(_fmt(v) for v in val) if isinstance(val, (list, tuple)) else _fmt(val)
        buf.write(f"# {key} = {text}\n")
    buf.write(",".join(columns) + "\n")
    for row in rows:
        buf.write(",".join(_fmt(v) for v in row) + "\n")
    for key, val in (footer or {}).items():
        buf.write(f"# {key} = {_fmt(val)}\n")
    return buf.getvalue()


@dataclass(frozen=True)
class RateFit:
    slope: float
    ci_low: float
    ci_high: float
    rows_used: int


def fit_rate(Ns: Sequence[float], gaps: Sequence[float], ses: Sequence[float] | None = None, level: float = 0.95) -> RateFit | None:
    """Weighted least squares of ``log|gap|`` on ``log N``; ``None`` with fewer than 4 usable rows.

    Rows with zero gap are unusable.  When standard errors are supplied the
    weight of a row is ``(gap / se)^2``, the inverse delta-method variance of
    ``log|gap|``; rows with zero SE get the largest finite weight.
    """
    N = np.asarray(Ns, dtype=float)
    g = np.abs(np.asarray(gaps, dtype=float))
    keep = g > 0
    if keep.sum() < 4:
        return None
    xs, ys = np.log(N[keep]), np.log(g[keep])
    w = np.ones_like(xs)
    if ses is not None:
        se = np.asarray(ses, dtype=float)[keep]
        with np.errstate(divide="ignore"):
            w = np.where(se > 0, (g[keep] / np.where(se > 0, se, 1.0)) ** 2, np.inf)
        if np.all(np.isinf(w)):
            w = np.ones_like(xs)
        else:
            w = np.where(np.isinf(w), np.max(w[np.isfinite(w)]), w)
    W = np.sum(w)
    xm, ym = np.sum(w * xs) / W, np.sum(w * ys) / W
    sxx = np.sum(w * (xs - xm) ** 2)
    slope = float(np.sum(w * (xs - xm) * (ys - ym)) / sxx)
    resid = ys - (ym + slope * (xs - xm))
    dof = len(xs) - 2
    s2 = float(np.sum(w * resid**2) / dof)
    half = float(stats.t.ppf(0.5 + level / 2, dof) * math.sqrt(s2 / sxx))
    return RateFit(slope, slope - half, slope + half, int(keep.sum()))


@dataclass(frozen=True)
class ConvergenceRow:
    N: int
    value: float
    se: float
    w2: float
    oracle: float
    runtime: float

    @property
    def gap(self) -> float:
        return self.value - self.oracle


@dataclass(frozen=True)
class ConvergenceReport:
    preset: str
    rows: tuple[ConvergenceRow, ...]
    oracle: float
    rate: RateFit | None
    config: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if list(r.N for r in self.rows) != sorted(r.N for r in self.rows):
            raise ValueError("rows must be sorted by N")

    @property
    def gaps(self) -> np.ndarray:
        return np.array([abs(r.gap) for r in self.rows])

    def to_csv(self, include_runtime: bool = False) -> str:
        cols = ["N", "value_per_particle", "se", "w2_to_target", "oracle", "gap"] + (["runtime_s"] if include_runtime else [])
        rows = [[r.N, r.value, r.se, r.w2, r.oracle, r.gap] + ([r.runtime] if include_runtime else []) for r in self.rows]
        footer = {}
        if self.rate is not None:
            footer = {"rate_slope": self.rate.slope, "rate_ci_low": self.rate.ci_low, "rate_ci_high": self.rate.ci_high}
        return csv_text(cols, rows, {"preset": self.preset, **self.config}, footer)


@dataclass(frozen=True)
class ValuePreset:
    """Problem with a mean-field oracle ``oracle(target) = V(0, mu)``.

    ``exact_value(x)`` returns ``V^N(0, x) / N`` without sampling when known;
    ``family(N)`` lists candidate feedback policies for Monte Carlo search.
    """

    name: str
    problem: MKVProblemSpec
    oracle: Callable[[TargetDistribution], float]
    exact_value: Callable[[np.ndarray], float] | None = None
    family: Callable[[int], list[ControlPolicy]] | None = None
    bounded_data: bool = False


def run_value_convergence(
    preset: ValuePreset,
    schedule: InitialDataSchedule,
    solver: str = "exact",
    reps: int = 200,
    seed: int = 0,
    workers: int = 1,
) -> ConvergenceReport:
    """``V^N/N`` along the schedule against ``V(0, target)``."""
    if solver not in ("exact", "policy_search"):
        raise ValueError(f"unknown solver {solver!r}")
    if solver == "exact" and preset.exact_value is None:
        raise ValueError(f"preset {preset.name!r} has no exact N-particle value")
    if solver == "policy_search" and preset.family is None:
        raise ValueError(f"preset {preset.name!r} has no policy family")
    oracle = float(preset.oracle(schedule.target))
    data = build_initial_data(schedule)

    def one_row(item: InitialData) -> ConvergenceRow:
        start = time.perf_counter()
        try:
            if solver == "exact":
                value, se = float(preset.exact_value(item.x)), 0.0
            else:
                res: PolicySearchResult = value_policy_search(preset.problem, preset.family(item.N), item.N, item.x, reps, row_seed(seed, item.N))
                value, se = res.best.mean, res.best.std_error
        except Exception as exc:
            raise type(exc)(f"row N={item.N}: {exc}") from exc
        return ConvergenceRow(item.N, value, se, item.w2, oracle, time.perf_counter() - start)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(one_row, data))
    else:
        rows = [one_row(item) for item in data]
    rate = fit_rate([r.N for r in rows], [r.gap for r in rows], [r.se for r in rows] if solver != "exact" else None)
    config = {
        "target": schedule.target.name, "method": schedule.method, "Ns": list(schedule.Ns),
        "solver": solver, "seed": seed, "reps": reps if solver != "exact" else 0,
        "bounded_data": preset.bounded_data,
    }
    return ConvergenceReport(preset.name, tuple(rows), oracle, rate, config)


# ---------------------------------------------------------------- chaos


@dataclass(frozen=True)
class ChaosPreset:
    """Dynamics whose limiting terminal law gives an analytic ``target = g(law of X_T)``."""

    name: str
    problem: MKVProblemSpec
    policy: ControlPolicy
    initial: Callable[[int], np.ndarray]
    g: Callable[[np.ndarray], np.ndarray]
    target: float | None


@dataclass(frozen=True)
class ChaosRow:
    N: int
    estimate: float
    se: float
    budget: float

    def bias(self, target: float) -> float:
        return self.estimate - target

    def passed(self, target: float) -> bool:
        return abs(self.estimate - target) <= 3 * self.se + self.budget


@dataclass(frozen=True)
class ChaosReport:
    preset: str
    rows: tuple[ChaosRow, ...]
    target: float
    budget_constant: float
    config: dict = field(default_factory=dict)

    @property
    def verdicts(self) -> list[bool]:
        return [r.passed(self.target) for r in self.rows]

    def to_csv(self) -> str:
        cols = ["N", "estimate", "se", "target", "bias", "bias_budget", "verdict"]
        rows = [[r.N, r.estimate, r.se, self.target, r.bias(self.target), r.budget, "pass" if r.passed(self.target) else "fail"] for r in self.rows]
        return csv_text(cols, rows, {"preset": self.preset, **self.config}, {"bias_budget_C": self.budget_constant})


def chaos_samples(preset: ChaosPreset, N: int, reps: int, seed: int, workers: int = 1) -> np.ndarray:
    """``g(mu^N(X_T))`` for each replica."""
    out = simulate_batch(preset.problem, preset.policy, preset.initial(N), seed=seed, reps=reps, workers=workers)
    return np.asarray(preset.g(out.terminal), dtype=float)


def _mean_se(samples: np.ndarray) -> tuple[float, float]:
    # shifting by the first sample keeps constant samples exact
    shift = float(samples[0])
    dev = samples - shift
    se = float(np.std(dev, ddof=1) / math.sqrt(len(samples))) if len(samples) > 1 else 0.0
    return shift + float(np.mean(dev)), se


def run_chaos_experiment(
    preset: ChaosPreset,
    Ns: Sequence[int],
    reps: int,
    seed: int,
    pilot_Ns: Sequence[int] = (8, 16, 32),
    pilot_reps: int | None = None,
    workers: int = 1,
) -> ChaosReport:
    """Monte Carlo of ``E[g(mu^N(X_T))]`` per N, judged against the analytic limit.

    The bias budget is ``C / sqrt(N)`` where ``C`` is the largest
    ``|bias| sqrt(N)`` seen on pilot runs (drawn from a separate seed stream).
    """
    if preset.target is None:
        raise ValueError(f"preset {preset.name!r} has no analytic limit; refusing an unverifiable target")
    if reps < 1:
        raise ValueError("reps must be at least 1")
    target = float(preset.target)
    pilot_reps = pilot_reps or reps
    pilot_seed = row_seed(seed, 2**31)
    C = 0.0
    for n in pilot_Ns:
        est, _ = _mean_se(chaos_samples(preset, n, pilot_reps, row_seed(pilot_seed, n), workers))
        C = max(C, abs(est - target) * math.sqrt(n))
    rows = []
    for n in Ns:
        est, se = _mean_se(chaos_samples(preset, n, reps, row_seed(seed, n), workers))
        rows.append(ChaosRow(int(n), est, se, C / math.sqrt(n)))
    config = {"Ns": list(Ns), "reps": reps, "seed": seed, "pilot_Ns": list(pilot_Ns), "pilot_reps": pilot_reps, "dt": preset.problem.dt}
    return ChaosReport(preset.name, tuple(rows), target, C, config)


def bias_by_batch(preset: ChaosPreset, Ns: Sequence[int], reps: int, seeds: Sequence[int], workers: int = 1) -> np.ndarray:
    """``|bias|`` for each (seed batch, N), shape ``(len(seeds), len(Ns))``."""
    if preset.target is None:
        raise ValueError(f"preset {preset.name!r} has no analytic limit")
    out = np.empty((len(seeds), len(Ns)))
    for i, s in enumerate(seeds):
        for j, n in enumerate(Ns):
            out[i, j] = abs(_mean_se(chaos_samples(preset, n, reps, row_seed(s, n), workers))[0] - preset.target)
    return out


# ---------------------------------------------------------------- semi-limits


@dataclass(frozen=True)
class SemiLimits:
    """Tail minima and maxima of a value sequence, one entry per tail start.

    Finite-N diagnostics standing in for the relaxed lower and upper limits;
    ``lower``/``upper`` are taken on the tail starting at ``headline_start``.
    """

    tail_starts: np.ndarray
    tail_min: np.ndarray
    tail_max: np.ndarray
    headline_start: int

    @property
    def lower(self) -> float:
        return float(self.tail_min[self.headline_start])

    @property
    def upper(self) -> float:
        return float(self.tail_max[self.headline_start])

    @property
    def spread(self) -> np.ndarray:
        return self.tail_max - self.tail_min


def estimate_semilimits(values: Sequence[float]) -> SemiLimits:
    v = np.asarray(values, dtype=float)
    if v.ndim != 1 or v.size < 3:
        raise ValueError("semi-limit proxies need at least 3 values")
    tail_min = np.minimum.accumulate(v[::-1])[::-1]
    tail_max = np.maximum.accumulate(v[::-1])[::-1]
    return SemiLimits(np.arange(v.size), tail_min, tail_max, v.size // 2)


# ---------------------------------------------------------------- svg


def svg_line_chart(
    xs: Sequence[float],
    series: dict[str, Sequence[float]],
    title: str,
    xlabel: str,
    ylabel: str,
    log: bool = True,
    width: int = 480,
    height: int = 320,
) -> str:
    """Static SVG line chart; identical input gives identical text."""
    x = np.asarray(xs, dtype=float)
    tx = np.log10 if log else (lambda a: a)
    ys = {k: np.asarray(v, dtype=float) for k, v in series.items()}
    ok = {k: (x > 0) & (v > 0) if log else np.isfinite(v) for k, v in ys.items()}
    allx = tx(x[x > 0] if log else x)
    ally = np.concatenate([tx(v[ok[k]]) for k, v in ys.items()]) if ys else np.zeros(1)
    if ally.size == 0:
        ally = np.zeros(1)
    x0, x1 = float(allx.min()), float(allx.max())
    y0, y1 = float(ally.min()), float(ally.max())
    x1 = x1 if x1 > x0 else x0 + 1
    y1 = y1 if y1 > y0 else y0 + 1
    ml, mr, mt, mb = 60, 20, 30, 45
    pw, ph = width - ml - mr, height - mt - mb

    def px(v):
        return ml + (v - x0) / (x1 - x0) * pw

    def py(v):
        return mt + ph - (v - y0) / (y1 - y0) * ph

    colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"]
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="18" text-anchor="middle" font-size="13">{title}</text>',
        f'<line x1="{ml}" y1="{mt + ph}" x2="{ml + pw}" y2="{mt + ph}" stroke="black"/>',
        f'<line x1="{ml}" y1="{mt}" x2="{ml}" y2="{mt + ph}" stroke="black"/>',
        f'<text x="{ml + pw / 2:.1f}" y="{height - 8}" text-anchor="middle" font-size="11">{xlabel}{" (log10)" if log else ""}</text>',
        f'<text x="14" y="{mt + ph / 2:.1f}" text-anchor="middle" font-size="11" transform="rotate(-90 14 {mt + ph / 2:.1f})">{ylabel}{" (log10)" if log else ""}</text>',
    ]
    for v, anchor in ((x0, "start"), (x1, "end")):
        out.append(f'<text x="{px(v):.1f}" y="{mt + ph + 14}" text-anchor="{anchor}" font-size="10">{v:.3g}</text>')
    for v in (y0, y1):
        out.append(f'<text x="{ml - 4}" y="{py(v):.1f}" text-anchor="end" font-size="10">{v:.3g}</text>')
    for i, (name, v) in enumerate(ys.items()):
        m = ok[name]
        pts = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(tx(x[m]), tx(v[m])))
        c = colors[i % len(colors)]
        out.append(f'<polyline fill="none" stroke="{c}" stroke-width="1.5" points="{pts}"/>')
        out.append(f'<text x="{ml + pw - 4}" y="{mt + 14 + 14 * i}" text-anchor="end" font-size="10" fill="{c}">{name}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_text(path: str | Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8", newline="\n")
