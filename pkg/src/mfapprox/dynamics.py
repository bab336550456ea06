"""Euler-Maruyama simulation of controlled interacting particle systems.

Noise comes from counter-based streams: particle ``p`` of replica ``r`` under
master seed ``s`` owns ``Philox(key=[s, (r << 32) | p])`` and draws its whole
path of increments from it.  Adding particles or replicas therefore never
changes the noise of existing ones, and permuting stream ids permutes paths.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .empirical import EmpiricalMeasure, make_empirical
from .errors import BoundViolation, ShapeError
from .operators import HJBSpec

_NOISE_BUDGET = 8_000_000  # floats per simulated chunk


@dataclass(frozen=True)
class MKVProblemSpec(HJBSpec):
    """Controlled McKean-Vlasov problem: HJB coefficients plus an Euler step ``dt``."""

    dt: float = 1e-2

    def __post_init__(self) -> None:
        super().__post_init__()
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        steps = round(self.T / self.dt)
        if steps < 1 or abs(steps * self.dt - self.T) > 1e-9 * max(self.T, 1.0):
            raise ValueError(f"T={self.T} is not an integer multiple of dt={self.dt}")

    @property
    def steps(self) -> int:
        return round(self.T / self.dt)

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.steps + 1) * self.dt


def snap_to_grid(raw: np.ndarray, grid: np.ndarray) -> np.ndarray:
    """Nearest grid point for each action vector in ``raw`` (lower value wins ties in 1-D)."""
    raw = np.asarray(raw, dtype=float)
    if grid.shape[1] == 1:
        g = grid[:, 0]
        order = np.argsort(g, kind="stable")
        gs = g[order]
        r = raw[..., 0]
        hi = np.clip(np.searchsorted(gs, r), 1, max(len(gs) - 1, 1))
        lo = hi - 1
        if len(gs) == 1:
            pick = np.zeros_like(hi)
        else:
            pick = np.where(np.abs(r - gs[lo]) <= np.abs(gs[hi] - r), lo, hi)
        return gs[pick][..., None]
    dist = np.sum((raw[..., None, :] - grid) ** 2, axis=-1)
    return grid[np.argmin(dist, axis=-1)]


@dataclass(frozen=True)
class ControlPolicy:
    """Symmetric feedback ``a_i = feedback(t, X)[i]``, snapped onto the action grid.

    ``feedback`` maps ``(t, X)`` with ``X`` of shape ``(..., N, d)`` to raw
    actions ``(..., N, k)``.  It must be permutation-equivariant in the
    particle axis: particle ``i`` sees its own state and the empirical measure.
    """

    feedback: Callable[[float, np.ndarray], np.ndarray]
    name: str = "policy"
    params: tuple = ()

    def act(self, t: float, X: np.ndarray, grid: np.ndarray) -> np.ndarray:
        raw = np.broadcast_to(np.asarray(self.feedback(t, X), dtype=float), X.shape[:-1] + (grid.shape[1],))
        return snap_to_grid(raw, grid)


def constant_policy(value, name: str | None = None) -> ControlPolicy:
    v = np.atleast_1d(np.asarray(value, dtype=float))
    return ControlPolicy(lambda t, X: np.broadcast_to(v, X.shape[:-1] + v.shape), name=name or f"const{v.tolist()}", params=tuple(v))


def particle_stream(seed: int, rep: int, particle: int) -> np.random.Generator:
    if not (0 <= seed < 2**64 and 0 <= rep < 2**32 and 0 <= particle < 2**32):
        raise ValueError("seed must fit in 64 bits, replica and particle ids in 32 bits")
    return np.random.Generator(np.random.Philox(key=[seed, (rep << 32) | particle]))


def path_noise(seed: int, reps, particles, steps: int, d: int) -> np.ndarray:
    """Standard normal increments of shape ``(steps, len(reps), len(particles), d)``."""
    reps = list(reps)
    particles = list(particles)
    out = np.empty((steps, len(reps), len(particles), d))
    for a, r in enumerate(reps):
        for b, p in enumerate(particles):
            out[:, a, b, :] = particle_stream(seed, r, p).standard_normal((steps, d))
    return out


@dataclass(frozen=True)
class PathBundle:
    times: np.ndarray
    states: np.ndarray  # (steps+1, N, d)
    drifts: np.ndarray  # (steps, N, d)
    diffs: np.ndarray  # (steps, N, d, d)
    actions: np.ndarray  # (steps, N, k)
    seed: int
    stream_ids: tuple

    def __post_init__(self) -> None:
        for name in ("times", "states", "drifts", "diffs", "actions"):
            getattr(self, name).setflags(write=False)

    def terminal(self) -> EmpiricalMeasure:
        return make_empirical(self.states[-1])

    def write_csv(self, path: str | Path) -> None:
        """Rows ``step, time, particle, x0..x{d-1}`` with round-trip float text."""
        steps, n, d = self.states.shape
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["step", "time", "particle"] + [f"x{j}" for j in range(d)])
            for k in range(steps):
                for i in range(n):
                    w.writerow([k, repr(float(self.times[k])), i] + [repr(float(v)) for v in self.states[k, i]])


@dataclass(frozen=True)
class CharacteristicsReport:
    max_drift: float
    max_diff: float
    L: float

    @property
    def passed(self) -> bool:
        return self.max_drift <= self.L and self.max_diff <= self.L


def check_characteristics(bundle: PathBundle, L: float) -> CharacteristicsReport:
    """Largest coordinate of the recorded drift and diffusion over all steps."""
    md = float(np.max(np.abs(bundle.drifts), initial=0.0))
    ms = float(np.max(np.abs(bundle.diffs), initial=0.0))
    return CharacteristicsReport(md, ms, L)


def _enforce_bound(spec: MKVProblemSpec, t: float, bb: np.ndarray, ss: np.ndarray) -> tuple[float, float]:
    mb = float(np.max(np.abs(bb), initial=0.0))
    ms = float(np.max(np.abs(ss), initial=0.0))
    if mb > spec.L or ms > spec.L:
        raise BoundViolation(f"characteristics exceed L={spec.L} at t={t:.6g}: max|b|={mb:.6g}, max|sigma|={ms:.6g}")
    return mb, ms


def _euler(spec: MKVProblemSpec, policy: ControlPolicy, x0: np.ndarray, noise: np.ndarray, record: bool):
    """Core loop over a block of replicas; ``noise`` has shape ``(steps, R, N, d)``."""
    steps, R, n, d = noise.shape
    dt = spec.dt
    sqdt = math.sqrt(dt)
    X = np.broadcast_to(x0, (R, n, d)).copy()
    running = np.zeros((R, n))
    trace = {"states": [X.copy()], "drifts": [], "diffs": [], "actions": []} if record else None
    peak = [0.0, 0.0]
    for k in range(steps):
        t = k * dt
        a = policy.act(t, X, spec.actions)
        bb, ss, ff = spec.coefficients(t, X, X, a)
        mb, ms = _enforce_bound(spec, t, bb, ss)
        peak = [max(peak[0], mb), max(peak[1], ms)]
        running += ff * dt
        X = X + bb * dt + np.einsum("...ij,...j->...i", ss, noise[k]) * sqdt
        if record:
            trace["drifts"].append(bb.copy())
            trace["diffs"].append(ss.copy())
            trace["actions"].append(a.copy())
            trace["states"].append(X.copy())
    return X, running, peak, trace


def _check_x0(x0) -> np.ndarray:
    x0 = np.asarray(x0, dtype=float)
    if x0.ndim == 1:
        x0 = x0[:, None]
    if x0.ndim != 2:
        raise ShapeError("x0 must have shape (N, d)")
    return x0


def simulate_nparticle(spec: MKVProblemSpec, policy: ControlPolicy, x0, seed: int, stream_ids=None, rep: int = 0) -> PathBundle:
    """One path of the N-particle system with full per-step records."""
    x0 = _check_x0(x0)
    n, d = x0.shape
    ids = tuple(range(n)) if stream_ids is None else tuple(int(i) for i in stream_ids)
    if len(ids) != n:
        raise ShapeError(f"{len(ids)} stream ids for {n} particles")
    noise = path_noise(seed, [rep], ids, spec.steps, d)
    _, _, _, tr = _euler(spec, policy, x0, noise, record=True)
    k = spec.actions.shape[1]
    empty = (0, n)
    return PathBundle(
        times=spec.times,
        states=np.stack(tr["states"])[:, 0],
        drifts=np.stack(tr["drifts"])[:, 0] if tr["drifts"] else np.zeros(empty + (d,)),
        diffs=np.stack(tr["diffs"])[:, 0] if tr["diffs"] else np.zeros(empty + (d, d)),
        actions=np.stack(tr["actions"])[:, 0] if tr["actions"] else np.zeros(empty + (k,)),
        seed=seed,
        stream_ids=ids,
    )


@dataclass(frozen=True)
class BatchOutcome:
    """Monte Carlo replicas of one N-particle system.

    ``payoff[r]`` is the per-particle reward ``(1/N) sum_i int f dt + g(mu^N(X_T))``
    of replica ``r``.
    """

    terminal: np.ndarray  # (R, N, d)
    running: np.ndarray  # (R, N)
    payoff: np.ndarray  # (R,)
    max_drift: float
    max_diff: float


def _chunks(reps: int, rep_start: int, n: int, d: int, steps: int) -> list[range]:
    size = max(1, _NOISE_BUDGET // max(1, steps * n * d))
    return [range(s, min(s + size, rep_start + reps)) for s in range(rep_start, rep_start + reps, size)]


def simulate_batch(
    spec: MKVProblemSpec,
    policies,
    x0,
    seed: int,
    reps: int,
    rep_start: int = 0,
    workers: int = 1,
) -> list[BatchOutcome] | BatchOutcome:
    """Replicas ``rep_start .. rep_start+reps-1`` for one policy or a list of policies.

    A list of policies shares the same noise (common random numbers); the
    result is then a list in matching order.
    """
    single = isinstance(policies, ControlPolicy)
    plist = [policies] if single else list(policies)
    if reps < 1:
        raise ValueError("reps must be at least 1")
    x0 = _check_x0(x0)
    n, d = x0.shape
    steps = spec.steps
    has_g = spec.g is not None

    def run(block: range):
        noise = path_noise(seed, block, range(n), steps, d)
        out = []
        for pol in plist:
            X, running, peak, _ = _euler(spec, pol, x0, noise, record=False)
            term = np.asarray(spec.g(X), dtype=float) if has_g else np.zeros(len(block))
            out.append((X, running, np.mean(running, axis=1) + np.broadcast_to(term, (len(block),)), peak))
        return out

    blocks = _chunks(reps, rep_start, n, d, steps)
    if workers > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, blocks))
    else:
        results = [run(b) for b in blocks]

    outcomes = []
    for j in range(len(plist)):
        parts = [res[j] for res in results]
        outcomes.append(
            BatchOutcome(
                terminal=np.concatenate([p[0] for p in parts]),
                running=np.concatenate([p[1] for p in parts]),
                payoff=np.concatenate([p[2] for p in parts]),
                max_drift=max(p[3][0] for p in parts),
                max_diff=max(p[3][1] for p in parts),
            )
        )
    return outcomes[0] if single else outcomes


def simulate_limit_law(
    spec: MKVProblemSpec,
    policy: ControlPolicy,
    mu0_sampler: Callable[[np.random.Generator, int], np.ndarray],
    M: int,
    seed: int,
    exact_sampler: Callable[[np.ndarray, np.random.Generator], np.ndarray] | None = None,
) -> EmpiricalMeasure:
    """Surrogate for the law of ``X_T``: a large-M particle cloud, or exact draws if available.

    ``mu0_sampler(rng, M)`` returns ``(M, d)`` initial points.  When
    ``exact_sampler(x0, rng)`` is given (e.g. linear OU dynamics) it maps
    initial points to terminal points without time stepping.
    """
    if M < 1:
        raise ValueError("M must be at least 1")
    rng = np.random.Generator(np.random.Philox(key=[seed, 2**63]))
    x0 = _check_x0(mu0_sampler(rng, M))
    if exact_sampler is not None:
        return make_empirical(exact_sampler(x0, rng))
    return simulate_nparticle(spec, policy, x0, seed).terminal()


def ou_moments(kappa: float, sigma: float, T: float) -> tuple[float, float]:
    """Decay factor ``e^{-kappa T}`` and noise variance ``sigma^2 (1-e^{-2 kappa T}) / (2 kappa)``."""
    decay = math.exp(-kappa * T)
    if kappa == 0:
        return 1.0, sigma**2 * T
    return decay, sigma**2 * -math.expm1(-2 * kappa * T) / (2 * kappa)


def ou_problem(kappa: float = 1.0, sigma: float = 1.0, T: float = 1.0, dt: float = 1e-3, g=None, L: float = 50.0) -> MKVProblemSpec:
    """Uncontrolled mean-field OU: ``dX = kappa (mean(mu) - X) dt + sigma dW``."""

    def b(t, x, mu, a):
        return kappa * (np.mean(mu, axis=-2, keepdims=True) - x)

    def sig(t, x, mu, a):
        d = x.shape[-1]
        return sigma * np.eye(d)

    def f(t, x, mu, a):
        return 0.0

    return MKVProblemSpec(b=b, sigma=sig, f=f, g=g, actions=np.zeros((1, 1)), L=L, T=T, name="ou", dt=dt)


def ou_exact_sampler(kappa: float, sigma: float, T: float):
    """Exact terminal draws of the limiting OU law; the mean is the initial cloud's mean."""
    decay, var = ou_moments(kappa, sigma, T)

    def sample(x0: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        m0 = np.mean(x0, axis=0)
        return m0 + (x0 - m0) * decay + math.sqrt(var) * rng.standard_normal(x0.shape)

    return sample
