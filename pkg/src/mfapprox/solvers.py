"""Value computations: LQ Riccati oracles, Monte Carlo policy search, grid dynamic programming.

Per-particle convention: the N-particle value sums rewards over particles, so
every N-particle quantity returned here is divided by ``N``.  With that
normalisation ``V^N / N`` and the mean-field value ``V`` are directly comparable.

LQ model (one dimension)::

    dX_i = (a_i + kappa (mean - X_i)) dt + sigma0 dW_i
    f    = -(q x^2 + r a^2)          g(mu) = -c Var(mu)

Mean-field value ``V(t, mu) = -(P Var(mu) + S mean(mu)^2 + R)`` with, in
time-to-go ``tau = T - t``::

    P' = q - 2 kappa P - P^2 / r,   P(0) = c
    S' = q - S^2 / r,               S(0) = 0
    R' = sigma0^2 P,                R(0) = 0

N-particle value per particle ``-(A m2 + B xbar^2 + R_N)`` where ``m2`` is the
empirical second moment::

    A' = q - 2 kappa A - A^2 / r,               A(0) = c
    B' = 2 kappa A - (2 A B + B^2) / r,         B(0) = -c
    R_N' = sigma0^2 (A + B / N),                R_N(0) = 0

Both have optimal feedback ``a_i = -(alpha (x_i - xbar) + beta xbar) / r``
with ``alpha, beta`` the coefficients of the variance and the squared mean.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.interpolate import CubicHermiteSpline
from scipy.stats import norm

from .dynamics import ControlPolicy, MKVProblemSpec, simulate_batch
from .errors import SolverError
from .operators import action_grid

_BLOWUP = 1e8


@dataclass(frozen=True)
class LQSpec:
    """Parameters of the LQ model.

    ``state_bound`` is the a priori box the trajectories are assumed to stay
    in; it sets ``L = a_max + 2 kappa state_bound`` (drift) and is used to
    assert that the optimal feedback stays inside ``[-a_max, a_max]``.
    """

    kappa: float = 0.5
    sigma0: float = 0.5
    q: float = 0.5
    r: float = 1.0
    c: float = 1.0
    a_max: float = 16.0
    T: float = 1.0
    state_bound: float = 6.0

    def __post_init__(self) -> None:
        if not self.r > 0:
            raise ValueError("r must be positive")
        if min(self.q, self.c, self.sigma0, self.a_max, self.T, self.state_bound) < 0:
            raise ValueError("q, c, sigma0, a_max, T and state_bound must be nonnegative")

    @property
    def L(self) -> float:
        return max(self.a_max + 2 * abs(self.kappa) * self.state_bound, self.sigma0)


def _rk4(rhs: Callable[[np.ndarray], np.ndarray], y0: np.ndarray, T: float, n: int) -> np.ndarray:
    """Fixed-step classical Runge-Kutta from tau=0 to tau=T; returns ``(n+1, len(y0))``."""
    h = T / n
    out = np.empty((n + 1, len(y0)))
    y = np.asarray(y0, dtype=float)
    out[0] = y
    for j in range(n):
        k1 = rhs(y)
        k2 = rhs(y + 0.5 * h * k1)
        k3 = rhs(y + 0.5 * h * k2)
        k4 = rhs(y + h * k3)
        y = y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(y)) or np.max(np.abs(y)) > _BLOWUP:
            raise SolverError(f"Riccati blow-up at t={T - (j + 1) * h:.6g}; parameters rejected")
        out[j + 1] = y
    return out


def _fd_derivative(y: np.ndarray, h: float) -> np.ndarray:
    """Fourth-order finite-difference derivative along axis 0 (one-sided at the ends)."""
    n = y.shape[0]
    if n < 5:
        raise ValueError("need at least 5 grid points")
    d = np.empty_like(y)
    d[2:-2] = (y[:-4] - 8 * y[1:-3] + 8 * y[3:-1] - y[4:]) / (12 * h)
    c = np.array([-25, 48, -36, 16, -3]) / (12 * h)
    d[0] = c @ y[:5]
    d[1] = np.array([-3, -10, 18, -6, 1]) / (12 * h) @ y[:5]
    d[-1] = -(c @ y[::-1][:5])
    d[-2] = -(np.array([-3, -10, 18, -6, 1]) / (12 * h) @ y[::-1][:5])
    return d


class RiccatiSolution:
    """Coefficients of ``value(t, m, v) = -(var_coef v + mean2_coef m^2 + const)`` on a time grid.

    ``raw`` keeps the integrated ODE state in time-to-go order next to its
    right-hand side ``rhs`` so the residual can be recomputed independently.
    ``weights`` maps a raw state to ``(var_coef, mean2_coef, const)``.
    """

    def __init__(self, raw_tau: np.ndarray, rhs: Callable, weights: np.ndarray, T: float, r: float, label: str):
        n = raw_tau.shape[0] - 1
        self.times = np.linspace(0.0, T, n + 1)
        self.raw = raw_tau
        self.rhs = rhs
        self.r = r
        self.label = label
        self._h = T / n
        coef = raw_tau[::-1] @ weights.T
        dcoef = -(np.array([rhs(y) for y in raw_tau])[::-1] @ weights.T)  # d/dt = -d/dtau
        self.var_coef, self.mean2_coef, self.const = coef.T
        self._spline = CubicHermiteSpline(self.times, coef, dcoef, axis=0)

    @property
    def T(self) -> float:
        return float(self.times[-1])

    def coefficients(self, t: float) -> tuple[float, float, float]:
        if not (-1e-12 <= t <= self.T + 1e-12):
            raise ValueError(f"t={t} outside [0, {self.T}]")
        if t >= self.T:
            a, b, c = self.var_coef[-1], self.mean2_coef[-1], self.const[-1]
        else:
            a, b, c = self._spline(t)
        return float(a), float(b), float(c)

    def value_at(self, t: float, mean: float, variance: float) -> float:
        a, b, c = self.coefficients(t)
        return -(a * variance + b * mean**2 + c)

    def gains(self, t: float) -> tuple[float, float]:
        a, b, _ = self.coefficients(t)
        return a / self.r, b / self.r

    def residual(self) -> float:
        """Largest gap between a finite-difference derivative of the stored trajectory and the ODE."""
        lhs = _fd_derivative(self.raw, self._h)
        rhs = np.array([self.rhs(y) for y in self.raw])
        return float(np.max(np.abs(lhs - rhs)) / (1.0 + np.max(np.abs(rhs))))

    def max_action(self, state_bound: float) -> float:
        """A priori bound on ``|a|`` for states in ``[-state_bound, state_bound]``."""
        a = np.abs(self.var_coef) * 2 * state_bound + np.abs(self.mean2_coef) * state_bound
        return float(np.max(a) / self.r)


def solve_lq_meanfield(spec: LQSpec, steps: int = 2000, check_interior: bool = True) -> RiccatiSolution:
    """Mean-field LQ value by RK4 on the ``(P, S, R)`` system."""
    k, q, r, s2 = spec.kappa, spec.q, spec.r, spec.sigma0**2

    def rhs(y):
        P, S, _ = y
        return np.array([q - 2 * k * P - P * P / r, q - S * S / r, s2 * P])

    raw = _rk4(rhs, np.array([spec.c, 0.0, 0.0]), spec.T, steps)
    sol = RiccatiSolution(raw, rhs, np.eye(3), spec.T, r, "meanfield")
    if check_interior:
        _assert_interior(sol, spec)
    return sol


def solve_vn_lq_riccati(spec: LQSpec, N: int, steps: int = 2000, check_interior: bool = True) -> RiccatiSolution:
    """N-particle LQ value (per particle) via the symmetric ``(A, B, R_N)`` system."""
    if N < 1:
        raise ValueError("N must be at least 1")
    k, q, r, s2 = spec.kappa, spec.q, spec.r, spec.sigma0**2

    def rhs(y):
        A, B, _ = y
        return np.array([q - 2 * k * A - A * A / r, 2 * k * A - (2 * A * B + B * B) / r, s2 * (A + B / N)])

    raw = _rk4(rhs, np.array([spec.c, -spec.c, 0.0]), spec.T, steps)
    # -(A m2 + B xbar^2 + R) = -(A var + (A + B) xbar^2 + R)
    weights = np.array([[1.0, 0.0, 0.0], [1.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    sol = RiccatiSolution(raw, rhs, weights, spec.T, r, f"nparticle[N={N}]")
    if check_interior:
        _assert_interior(sol, spec)
    return sol


def _assert_interior(sol: RiccatiSolution, spec: LQSpec) -> None:
    need = sol.max_action(spec.state_bound)
    if need > spec.a_max:
        raise ValueError(f"optimal feedback reaches {need:.4g} > a_max={spec.a_max} on the state box; enlarge a_max")


def solve_vn_lq(spec: LQSpec, N: int, x0, t: float = 0.0, steps: int = 2000) -> float:
    """``V^N(t, x0) / N`` for the LQ model."""
    x = np.asarray(x0, dtype=float).reshape(-1)
    if x.size != N:
        raise ValueError(f"x0 has {x.size} particles, expected N={N}")
    sol = solve_vn_lq_riccati(spec, N, steps)
    m = float(np.mean(x))
    return sol.value_at(t, m, float(np.mean((x - m) ** 2)))


def lq_problem(spec: LQSpec, dt: float = 1e-2, n_actions: int = 3201) -> MKVProblemSpec:
    """The LQ model as a simulable problem with a fine action grid on ``[-a_max, a_max]``."""
    k, s0, q, r, c = spec.kappa, spec.sigma0, spec.q, spec.r, spec.c

    def b(t, x, mu, a):
        return a + k * (np.mean(mu, axis=-2, keepdims=True) - x)

    def sigma(t, x, mu, a):
        return np.full(x.shape[:-1] + (1, 1), s0)

    def f(t, x, mu, a):
        return -(q * x[..., 0] ** 2 + r * a[..., 0] ** 2)

    def g(mu):
        return -c * np.var(mu[..., 0], axis=-1)

    return MKVProblemSpec(b=b, sigma=sigma, f=f, g=g, actions=action_grid(-spec.a_max, spec.a_max, n_actions), L=spec.L, T=spec.T, name="lq", dt=dt)


def lq_feedback_policy(sol: RiccatiSolution, var_scale: float = 1.0, mean_scale: float = 1.0) -> ControlPolicy:
    """``a_i = -(s1 alpha (x_i - xbar) + s2 beta xbar) / r`` from a Riccati solution."""

    def feedback(t, X):
        ga, gb = sol.gains(min(t, sol.T))
        m = np.mean(X, axis=-2, keepdims=True)
        return -(var_scale * ga * (X - m) + mean_scale * gb * m)

    return ControlPolicy(feedback, name=f"lq_feedback({var_scale:g},{mean_scale:g})", params=(var_scale, mean_scale))


@dataclass(frozen=True)
class ValueEstimate:
    mean: float
    std_error: float
    n_samples: int
    method: str

    def __post_init__(self) -> None:
        if self.std_error < 0:
            raise ValueError("std_error must be nonnegative")

    @property
    def ci(self) -> tuple[float, float]:
        return self.mean - 3 * self.std_error, self.mean + 3 * self.std_error


def _estimate(samples: np.ndarray, method: str) -> ValueEstimate:
    n = len(samples)
    se = float(np.std(samples, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return ValueEstimate(float(np.mean(samples)), se, n, method)


@dataclass(frozen=True)
class PolicySearchResult:
    best: ValueEstimate
    index: int
    estimates: tuple[ValueEstimate, ...]
    policies: tuple[str, ...]


def value_policy_search(
    spec: MKVProblemSpec,
    family: Sequence[ControlPolicy],
    N: int,
    x0,
    reps: int,
    seed: int,
    workers: int = 1,
) -> PolicySearchResult:
    """Best Monte Carlo per-particle value over a finite policy family.

    All members are evaluated on the same noise, so differences between
    members are not blurred by sampling noise.  The first member attaining
    the maximum estimate wins.
    """
    family = list(family)
    if not family:
        raise ValueError("policy family is empty")
    if reps < 1:
        raise ValueError("Monte Carlo budget must be at least one replica")
    x = np.asarray(x0, dtype=float)
    x = x[:, None] if x.ndim == 1 else x
    if x.shape[0] != N:
        raise ValueError(f"x0 has {x.shape[0]} particles, expected N={N}")
    outcomes = simulate_batch(spec, family, x, seed=seed, reps=reps, workers=workers)
    estimates = tuple(_estimate(o.payoff, f"policy_search:{p.name}") for o, p in zip(outcomes, family))
    idx = int(np.argmax([e.mean for e in estimates]))
    return PolicySearchResult(estimates[idx], idx, estimates, tuple(p.name for p in family))


@dataclass(frozen=True)
class GridConfig:
    lo: float
    hi: float
    points: int
    dt: float | None = None
    safety: float = 0.9
    time_homogeneous: bool = False

    def __post_init__(self) -> None:
        if not self.hi > self.lo or self.points < 3:
            raise ValueError("grid needs hi > lo and at least 3 points")

    @property
    def axis(self) -> np.ndarray:
        return np.linspace(self.lo, self.hi, self.points)

    @property
    def h(self) -> float:
        return (self.hi - self.lo) / (self.points - 1)


@dataclass(frozen=True)
class GridSolution:
    """``values`` is ``V^N(0, .)`` on the tensor grid (reward summed over particles)."""

    axis: np.ndarray
    values: np.ndarray
    N: int
    dt: float
    steps: int

    @property
    def per_particle(self) -> np.ndarray:
        return self.values / self.N

    def interp(self, x) -> np.ndarray:
        if self.N != 1:
            raise ValueError("interpolation is provided for N=1 only")
        return np.interp(np.asarray(x, dtype=float), self.axis, self.values)


def _tables(spec: MKVProblemSpec, t: float, X: np.ndarray):
    a = spec.actions[:, None, None, :]
    bb, ss, ff = spec.coefficients(t, X[None], X[None], a)
    return bb[..., 0], ss[..., 0, 0] ** 2, ff  # (|A|, nodes, N) each


def _stable_dt(bb: np.ndarray, s2: np.ndarray, h: float) -> float:
    rate = np.sum(np.max(np.abs(bb) / h + s2 / h**2, axis=0), axis=-1)
    peak = float(np.max(rate))
    return math.inf if peak == 0 else 1.0 / peak


def solve_hjb_grid(spec: MKVProblemSpec, N: int, grid: GridConfig) -> GridSolution:
    """Explicit monotone scheme for the N-particle HJB in one space dimension per particle.

    Upwind differences for the drift, centred second differences for the
    diffusion, backward in time from ``u(T) = N g``.  At the box edges the
    outward drift term is dropped and the diffusion is reflected.
    """
    if N not in (1, 2):
        raise ValueError("grid solver supports N*d <= 2 (N in {1, 2}, d = 1)")
    if spec.g is None:
        raise ValueError("grid solver needs a terminal reward g")
    M, h = grid.points, grid.h
    axis = grid.axis
    mesh = np.meshgrid(*([axis] * N), indexing="ij")
    X = np.stack([m.ravel() for m in mesh], axis=-1)[..., None]  # (nodes, N, 1)
    if spec.actions.shape[1] != 1 and X.shape[-1] != 1:
        raise ValueError("grid solver expects d = 1")

    bb, s2, ff = _tables(spec, spec.T, X)
    limit = grid.safety * min(_stable_dt(bb, s2, h), _stable_dt(*_tables(spec, 0.0, X)[:2], h))
    if grid.dt is None:
        steps = max(1, math.ceil(spec.T / limit)) if math.isfinite(limit) else 1
    else:
        steps = max(1, round(spec.T / grid.dt))
    dt = spec.T / steps

    u = N * np.asarray(spec.g(X), dtype=float).reshape((M,) * N)
    for s in range(steps):
        t = spec.T - s * dt
        if s and not grid.time_homogeneous:
            bb, s2, ff = _tables(spec, t, X)
        if dt > _stable_dt(bb, s2, h) * (1 + 1e-12):
            raise SolverError(f"CFL violated at t={t:.6g}: dt={dt:.4g} > {_stable_dt(bb, s2, h):.4g}")
        ham = np.zeros(u.size)
        for i in range(N):
            fwd = np.zeros_like(u)
            bwd = np.zeros_like(u)
            lap = np.empty_like(u)
            sl = [slice(None)] * N

            def at(idx):
                sl_ = list(sl)
                sl_[i] = idx
                return tuple(sl_)

            fwd[at(slice(0, -1))] = (u[at(slice(1, None))] - u[at(slice(0, -1))]) / h
            bwd[at(slice(1, None))] = (u[at(slice(1, None))] - u[at(slice(0, -1))]) / h
            lap[at(slice(1, -1))] = (u[at(slice(2, None))] - 2 * u[at(slice(1, -1))] + u[at(slice(0, -2))]) / h**2
            lap[at(0)] = 2 * (u[at(1)] - u[at(0)]) / h**2
            lap[at(-1)] = 2 * (u[at(-2)] - u[at(-1)]) / h**2
            b_i = bb[:, :, i]
            term = np.maximum(b_i, 0) * fwd.ravel() + np.minimum(b_i, 0) * bwd.ravel() + 0.5 * s2[:, :, i] * lap.ravel() + ff[:, :, i]
            ham += np.max(term, axis=0)
        u = u + dt * ham.reshape(u.shape)
    return GridSolution(axis=axis, values=u, N=N, dt=dt, steps=steps)


def gaussian_clip_expectation(x, s: float, lo: float, hi: float) -> np.ndarray:
    """``E[clip(x + s Z, lo, hi)]`` for standard normal ``Z``."""
    x = np.asarray(x, dtype=float)
    if s == 0:
        return np.clip(x, lo, hi)
    al = (lo - x) / s
    be = (hi - x) / s
    return lo * norm.cdf(al) + hi * norm.sf(be) + x * (norm.cdf(be) - norm.cdf(al)) + s * (norm.pdf(al) - norm.pdf(be))
