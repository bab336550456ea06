"""Named problem presets addressable from configuration files."""

from __future__ import annotations

import math
from functools import lru_cache

import numpy as np

from .dynamics import ControlPolicy, MKVProblemSpec, constant_policy, ou_moments, ou_problem
from .lab import ChaosPreset, TargetDistribution, ValuePreset
from .operators import HJBSpec, IsaacsSpec, action_grid, random_hjb_spec
from .solvers import (
    GridConfig,
    gaussian_clip_expectation,
    LQSpec,
    lq_feedback_policy,
    lq_problem,
    solve_hjb_grid,
    solve_lq_meanfield,
    solve_vn_lq,
    solve_vn_lq_riccati,
)

# ---------------------------------------------------------------- dynamics


def bounded_drift_problem(sigma: float = 0.5, c: float = 1.0, T: float = 1.0, dt: float = 1e-2, n_actions: int = 21) -> MKVProblemSpec:
    """``dX = a dt + sigma dW`` with ``a`` in ``[-1, 1]``, no running reward, ``g = c <mu, cos>``.

    Bounded coefficients and bounded data, so every standing assumption of the
    convergence theory holds.  Particles do not interact, hence
    ``V^N(0, x) / N = <mu^N(x), u(0, .)>`` with ``u`` the one-particle value.
    """

    def b(t, x, mu, a):
        return a

    def sig(t, x, mu, a):
        return np.full(x.shape[:-1] + (1, 1), sigma)

    def f(t, x, mu, a):
        return 0.0

    def g(mu):
        return c * np.mean(np.cos(mu[..., 0]), axis=-1)

    return MKVProblemSpec(b=b, sigma=sig, f=f, g=g, actions=action_grid(-1.0, 1.0, n_actions), L=max(1.0, sigma), T=T, name="bounded_drift", dt=dt)


def toward_origin_policy(theta: float) -> ControlPolicy:
    """``a = clip(-theta sin x, -1, 1)``; ``theta = inf`` is the bang-bang rule ``-sign(sin x)``."""
    if math.isinf(theta):
        return ControlPolicy(lambda t, X: -np.sign(np.sin(X)), name="bang_bang", params=(theta,))
    return ControlPolicy(lambda t, X: np.clip(-theta * np.sin(X), -1, 1), name=f"toward_origin({theta:g})", params=(theta,))


def heat_problem(sigma: float = 0.8, clip: float = 1.0, T: float = 1.0, dt: float = 1e-2) -> MKVProblemSpec:
    """One particle, no drift, constant ``sigma``, terminal reward ``clip(x, -clip, clip)``."""

    def zero(t, x, mu, a):
        return 0.0

    def g(mu):
        return np.clip(np.mean(mu[..., 0], axis=-1), -clip, clip)

    return MKVProblemSpec(b=zero, sigma=lambda t, x, mu, a: sigma, f=zero, g=g, actions=[0.0], L=max(1.0, sigma), T=T, name="heat", dt=dt)


def heat_value(x, sigma: float = 0.8, clip: float = 1.0, T: float = 1.0) -> np.ndarray:
    """Gaussian convolution of the clipped terminal reward."""
    return gaussian_clip_expectation(x, sigma * math.sqrt(T), -clip, clip)


DYNAMICS = {
    "ou": lambda **kw: ou_problem(**kw),
    "lq": lambda dt=1e-2, **kw: lq_problem(LQSpec(**kw), dt=dt),
    "bounded_drift": bounded_drift_problem,
}

# ---------------------------------------------------------------- value presets


def lq_value_preset(spec: LQSpec | None = None, dt: float = 1e-2) -> ValuePreset:
    spec = spec or LQSpec()
    mf = solve_lq_meanfield(spec)

    def oracle(target: TargetDistribution) -> float:
        return mf.value_at(0.0, float(target.mean[0]), float(target.var[0]))

    def exact(x: np.ndarray) -> float:
        x = np.asarray(x, dtype=float).reshape(-1)
        return solve_vn_lq(spec, x.size, x)

    def family(N: int) -> list[ControlPolicy]:
        sol = solve_vn_lq_riccati(spec, N)
        return [lq_feedback_policy(sol, s1, s2) for s1 in (0.8, 1.0, 1.2) for s2 in (0.8, 1.0, 1.2)]

    return ValuePreset("lq", lq_problem(spec, dt=dt), oracle, exact, family, bounded_data=False)


@lru_cache(maxsize=8)
def _one_particle_value(sigma: float, c: float, T: float, points: int):
    # u is even and 2 pi periodic, so reflection at +-pi is exact
    prob = bounded_drift_problem(sigma=sigma, c=c, T=T)
    sol = solve_hjb_grid(prob, 1, GridConfig(-math.pi, math.pi, points, time_homogeneous=True))
    return sol.axis, sol.values


def periodic_value(sigma: float = 0.5, c: float = 1.0, T: float = 1.0, points: int = 201):
    """``u(0, .)`` of the one-particle bounded-drift problem as a callable on the real line."""
    axis, values = _one_particle_value(sigma, c, T, points)

    def u(x):
        y = np.mod(np.asarray(x, dtype=float) + math.pi, 2 * math.pi) - math.pi
        return np.interp(y, axis, values)

    return u


def bounded_value_preset(sigma: float = 0.5, c: float = 1.0, T: float = 1.0, dt: float = 1e-2, points: int = 201) -> ValuePreset:
    u = periodic_value(sigma, c, T, points)
    prob = bounded_drift_problem(sigma, c, T, dt)

    def oracle(target: TargetDistribution) -> float:
        if target.atom is not None:
            return float(u(target.atom[0]))
        if target.d != 1 or target.pdf is None:
            raise ValueError("bounded-drift oracle needs a one-dimensional target with a density")
        m, s = float(target.mean[0]), math.sqrt(float(target.var[0]))
        lo, hi = max(target.support[0], m - 12 * s), min(target.support[1], m + 12 * s)
        # u is linear between its periodic knots; Gauss-Legendre per cell is then near exact
        axis = _one_particle_value(sigma, c, T, points)[0]
        shifts = 2 * math.pi * np.arange(math.floor((lo + math.pi) / (2 * math.pi)), math.ceil((hi + math.pi) / (2 * math.pi)) + 1)
        knots = (axis[None, :-1] + shifts[:, None]).ravel()
        edges = np.unique(np.concatenate([[lo, hi], knots[(knots > lo) & (knots < hi)]]))
        nodes, weights = np.polynomial.legendre.leggauss(8)
        half = 0.5 * np.diff(edges)[:, None]
        y = 0.5 * (edges[:-1] + edges[1:])[:, None] + half * nodes
        return math.fsum((half * weights * u(y) * target.pdf(y)).ravel())

    def exact(x: np.ndarray) -> float:
        return float(np.mean(u(np.asarray(x, dtype=float).reshape(-1))))

    def family(N: int) -> list[ControlPolicy]:
        return [toward_origin_policy(th) for th in (1.0, 4.0, math.inf)]

    return ValuePreset("bounded_drift", prob, oracle, exact, family, bounded_data=True)


VALUE_PRESETS = {"lq": lq_value_preset, "bounded_drift": bounded_value_preset}

# ---------------------------------------------------------------- chaos presets


def ou_chaos_preset(kappa: float = 1.0, sigma: float = 1.0, T: float = 1.0, dt: float = 1e-3, x0: float = 0.0) -> ChaosPreset:
    """Mean-field OU from a point mass with ``g(mu) = <mu, cos>``.

    The limit law is Gaussian with mean ``x0`` and variance ``v_T``, so the
    target is ``cos(x0) exp(-v_T / 2)``.
    """

    def g(mu):
        return np.mean(np.cos(mu[..., 0]), axis=-1)

    _, v_T = ou_moments(kappa, sigma, T)
    return ChaosPreset(
        name="ou",
        problem=ou_problem(kappa, sigma, T, dt, g=g),
        policy=constant_policy(0.0),
        initial=lambda N: np.full((N, 1), x0),
        g=g,
        target=math.cos(x0) * math.exp(-v_T / 2),
    )


CHAOS_PRESETS = {"ou": ou_chaos_preset}

# ---------------------------------------------------------------- operator presets


def hjb_lq_operator_spec(**kw) -> HJBSpec:
    return lq_problem(LQSpec(**kw), n_actions=9)


def hjb_bounded_operator_spec(**kw) -> HJBSpec:
    return bounded_drift_problem(n_actions=9, **kw)


def isaacs_bilinear_spec() -> IsaacsSpec:
    """``f = a1 a2`` with both players on ``{-1, 1}`` and a drift pushed by both."""

    def b(t, x, mu, a1, a2):
        return 0.5 * (a1 - a2) + 0.1 * (np.mean(mu, axis=-2, keepdims=True) - x)

    def sig(t, x, mu, a1, a2):
        return np.full(np.broadcast_shapes(x.shape[:-1], a1.shape[:-1], a2.shape[:-1]) + (1, 1), 0.3)

    def f(t, x, mu, a1, a2):
        return a1[..., 0] * a2[..., 0]

    return IsaacsSpec(b, sig, f, [-1.0, 1.0], [-1.0, 1.0], L=2.0, T=1.0, name="isaacs_bilinear")


def linear_ou_coefficients(kappa: float = 1.0, sigma: float = 1.0):
    def b(t, x, mu):
        return kappa * (np.mean(mu, axis=-2, keepdims=True) - x)

    def sig(t, x, mu):
        return sigma * np.broadcast_to(np.eye(x.shape[-1]), x.shape[:-1] + (x.shape[-1], x.shape[-1]))

    return b, sig


OPERATOR_PRESETS = ("hjb_lq", "hjb_bounded", "isaacs_bilinear", "linear_ou", "random")


def operator_dimension(name: str) -> int | None:
    """Space dimension a preset is defined for; ``None`` when any dimension works."""
    return {"hjb_lq": 1, "hjb_bounded": 1, "isaacs_bilinear": 1}.get(name)


def make_operator_instance(name: str, rng: np.random.Generator, d: int):
    """Concrete coefficients for preset ``name``; ``random`` draws fresh ones from ``rng``."""
    if name == "hjb_lq":
        return hjb_lq_operator_spec()
    if name == "hjb_bounded":
        return hjb_bounded_operator_spec()
    if name == "isaacs_bilinear":
        return isaacs_bilinear_spec()
    if name == "linear_ou":
        return linear_ou_coefficients()
    if name == "random":
        return random_hjb_spec(rng, d=d, n_actions=int(rng.integers(1, 10)))
    raise KeyError(f"unknown operator preset {name!r}; choose from {', '.join(OPERATOR_PRESETS)}")
