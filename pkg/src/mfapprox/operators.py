"""Operators ``F(t, mu, y, Z, Gamma)`` on Wasserstein space and their particle lifts.

Coefficient callables share one broadcasting convention so that the same
functions drive operator evaluation, particle simulation and grid solvers::

    b(t, x, mu, a)      -> (..., M, d)      drift
    sigma(t, x, mu, a)  -> (..., M, d, d)   volatility (sigma^2 means sigma sigma^T)
    f(t, x, mu, a)      -> (..., M)         running reward
    g(mu)               -> (...)            terminal reward

with ``x`` of shape ``(..., M, d)`` (query points), ``mu`` of shape
``(..., N, d)`` (atoms of the empirical measure) and ``a`` of shape
``(..., M, k)``.  Leading axes broadcast, so a callable written with
``axis=-2`` reductions over ``mu`` works for a single configuration, for a
batch of Monte Carlo replicas and for a stack of candidate actions alike.
Isaacs coefficients take two action arguments ``(a1, a2)`` instead of ``a``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .empirical import EmpiricalMeasure, make_empirical
from .errors import ShapeError

FieldFn = Callable[[np.ndarray], np.ndarray]


def _full(arr, shape) -> np.ndarray:
    return np.broadcast_to(np.asarray(arr, dtype=float), shape)


def frob_pair(sigma: np.ndarray, gamma: np.ndarray) -> np.ndarray:
    """``sigma sigma^T : gamma`` over the trailing ``(d, d)`` axes."""
    ssT = np.einsum("...ij,...kj->...ik", sigma, sigma)
    return np.einsum("...ij,...ij->...", ssT, gamma)


@dataclass(frozen=True)
class SpatialFields:
    """Gradient-type field ``Z: R^d -> R^d`` and Hessian-type ``Gamma: R^d -> S_d``.

    ``growth`` is the constant ``C`` of the guard
    ``|Z(x)| + |Gamma(x)| <= C (1 + |x|^2)``; ``None`` skips the guard.
    """

    Z: FieldFn
    Gamma: FieldFn
    growth: float | None = None

    def at(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        pts = np.asarray(points, dtype=float)
        m, d = pts.shape
        z = _full(self.Z(pts), (m, d))
        gam = _full(self.Gamma(pts), (m, d, d))
        if not np.allclose(gam, np.swapaxes(gam, -1, -2), rtol=1e-12, atol=1e-14):
            raise ValueError("Gamma field is not symmetric")
        if self.growth is not None:
            size = np.linalg.norm(z, axis=-1) + np.linalg.norm(gam, axis=(-2, -1))
            cap = self.growth * (1.0 + np.sum(pts**2, axis=-1))
            if np.any(size > cap * (1 + 1e-12)):
                raise ValueError(f"fields violate the quadratic-growth guard with C={self.growth}")
        return z, gam


def constant_fields(z, gamma, d: int) -> SpatialFields:
    z_arr = np.broadcast_to(np.asarray(z, dtype=float), (d,))
    g_arr = np.broadcast_to(np.asarray(gamma, dtype=float), (d, d))
    return SpatialFields(
        Z=lambda x: np.broadcast_to(z_arr, x.shape),
        Gamma=lambda x: np.broadcast_to(g_arr, x.shape + (d,)),
    )


@dataclass(frozen=True)
class MeanFieldOperator:
    """Evaluation contract ``F(t, mu, y, fields) -> float`` with a label."""

    evaluate: Callable[[float, EmpiricalMeasure, float, SpatialFields], float]
    name: str = "F"

    def __call__(self, t: float, mu: EmpiricalMeasure, y: float, fields: SpatialFields) -> float:
        return float(self.evaluate(t, mu, y, fields))


@dataclass(frozen=True)
class HJBSpec:
    """Controlled coefficients over a finite action grid ``actions`` of shape ``(|A|, k)``."""

    b: Callable
    sigma: Callable
    f: Callable
    g: Callable | None
    actions: np.ndarray
    L: float
    T: float
    name: str = "hjb"

    def __post_init__(self) -> None:
        acts = np.asarray(self.actions, dtype=float)
        if acts.ndim == 1:
            acts = acts[:, None]
        if acts.shape[0] == 0:
            raise ValueError("action grid must be nonempty")
        acts.setflags(write=False)
        object.__setattr__(self, "actions", acts)

    def coefficients(self, t: float, x: np.ndarray, mu: np.ndarray, a: np.ndarray):
        """Drift, volatility and reward broadcast to a common leading shape."""
        lead = np.broadcast_shapes(x.shape[:-1], a.shape[:-1])
        d = x.shape[-1]
        bb = _full(self.b(t, x, mu, a), lead + (d,))
        ss = _full(self.sigma(t, x, mu, a), lead + (d, d))
        ff = _full(self.f(t, x, mu, a), lead)
        return bb, ss, ff

    def check_bounds(self, t: float, mu: EmpiricalMeasure) -> tuple[float, float]:
        """Largest coordinate of ``b`` and ``sigma`` over atoms and actions; raises above ``L``."""
        x = mu.points[None]
        bb, ss, _ = self.coefficients(t, x, x, self.actions[:, None, :])
        worst_b = float(np.max(np.abs(bb)))
        worst_s = float(np.max(np.abs(ss)))
        if max(worst_b, worst_s) > self.L:
            raise ValueError(f"coefficients exceed L={self.L}: |b|={worst_b:.4g}, |sigma|={worst_s:.4g}")
        return worst_b, worst_s


@dataclass(frozen=True)
class IsaacsSpec:
    """Two-player coefficients ``b(t, x, mu, a1, a2)`` etc. over grids ``A1``, ``A2``."""

    b: Callable
    sigma: Callable
    f: Callable
    actions1: np.ndarray
    actions2: np.ndarray
    L: float
    T: float
    g: Callable | None = None
    name: str = "isaacs"

    def __post_init__(self) -> None:
        for attr in ("actions1", "actions2"):
            acts = np.asarray(getattr(self, attr), dtype=float)
            if acts.ndim == 1:
                acts = acts[:, None]
            if acts.shape[0] == 0:
                raise ValueError(f"{attr} must be nonempty")
            acts.setflags(write=False)
            object.__setattr__(self, attr, acts)


def _hamiltonian_table(spec: HJBSpec, t: float, x: np.ndarray, z: np.ndarray, gamma: np.ndarray, f_weight: float) -> np.ndarray:
    """``b.z + 1/2 sigma^2:gamma + f_weight * f`` for every (action, atom): shape ``(|A|, N)``."""
    xs = x[None]
    bb, ss, ff = spec.coefficients(t, xs, xs, spec.actions[:, None, :])
    return np.sum(bb * z[None], axis=-1) + 0.5 * frob_pair(ss, gamma[None]) + f_weight * ff


def eval_hjb(spec: HJBSpec, t: float, mu: EmpiricalMeasure, fields: SpatialFields, y: float = 0.0) -> float:
    """``<mu, sup_a {b.Z + 1/2 sigma^2:Gamma + f}>`` for an empirical ``mu``.

    ``y`` is accepted for the operator signature; the mean-field HJB
    Hamiltonian does not depend on it.
    """
    z, gam = fields.at(mu.points)
    table = _hamiltonian_table(spec, t, mu.points, z, gam, 1.0)
    return float(np.mean(np.max(table, axis=0)))


def hjb_argmax(spec: HJBSpec, t: float, mu: EmpiricalMeasure, fields: SpatialFields) -> np.ndarray:
    """Index of the maximising action per atom (first index on ties)."""
    z, gam = fields.at(mu.points)
    return np.argmax(_hamiltonian_table(spec, t, mu.points, z, gam, 1.0), axis=0)


def hjb_operator(spec: HJBSpec) -> MeanFieldOperator:
    return MeanFieldOperator(lambda t, mu, y, fields: eval_hjb(spec, t, mu, fields, y), name=f"F_HJB[{spec.name}]")


def _isaacs_table(spec: IsaacsSpec, t: float, x: np.ndarray, z: np.ndarray, gamma: np.ndarray, f_weight: float) -> np.ndarray:
    """Hamiltonian over ``(a2, a1, atom)``: shape ``(|A2|, |A1|, N)``."""
    d = x.shape[-1]
    xs = x[None, None]
    a1 = spec.actions1[None, :, None, :]
    a2 = spec.actions2[:, None, None, :]
    lead = (spec.actions2.shape[0], spec.actions1.shape[0], x.shape[0])
    bb = _full(spec.b(t, xs, xs, a1, a2), lead + (d,))
    ss = _full(spec.sigma(t, xs, xs, a1, a2), lead + (d, d))
    ff = _full(spec.f(t, xs, xs, a1, a2), lead)
    return np.sum(bb * z, axis=-1) + 0.5 * frob_pair(ss, gamma) + f_weight * ff


def eval_isaacs(spec: IsaacsSpec, t: float, mu: EmpiricalMeasure, fields: SpatialFields, y: float = 0.0) -> float:
    """``<mu, inf_{a2} sup_{a1} {b.Z + 1/2 sigma^2:Gamma + f}>`` (inner sup first, per atom)."""
    z, gam = fields.at(mu.points)
    table = _isaacs_table(spec, t, mu.points, z, gam, 1.0)
    return float(np.mean(np.min(np.max(table, axis=1), axis=0)))


def eval_isaacs_supinf(spec: IsaacsSpec, t: float, mu: EmpiricalMeasure, fields: SpatialFields, y: float = 0.0) -> float:
    """The lower Hamiltonian ``<mu, sup_{a1} inf_{a2} {...}>``; never exceeds :func:`eval_isaacs`."""
    z, gam = fields.at(mu.points)
    table = _isaacs_table(spec, t, mu.points, z, gam, 1.0)
    return float(np.mean(np.max(np.min(table, axis=0), axis=0)))


def isaacs_operator(spec: IsaacsSpec) -> MeanFieldOperator:
    return MeanFieldOperator(lambda t, mu, y, fields: eval_isaacs(spec, t, mu, fields, y), name=f"F_plus[{spec.name}]")


def eval_linear_generator(b: Callable, sigma: Callable, t: float, mu: EmpiricalMeasure, fields: SpatialFields) -> float:
    """``<mu, b.Z + 1/2 sigma^2:Gamma>`` for uncontrolled ``b(t, x, mu)``, ``sigma(t, x, mu)``."""
    x = mu.points
    n, d = x.shape
    z, gam = fields.at(x)
    bb = _full(b(t, x, x), (n, d))
    ss = _full(sigma(t, x, x), (n, d, d))
    return float(np.mean(np.sum(bb * z, axis=-1) + 0.5 * frob_pair(ss, gam)))


def linear_operator(b: Callable, sigma: Callable, name: str = "linear") -> MeanFieldOperator:
    return MeanFieldOperator(lambda t, mu, y, fields: eval_linear_generator(b, sigma, t, mu, fields), name=name)


@dataclass(frozen=True)
class AtomFields(SpatialFields):
    """Indicator fields ``N z.1_x`` and ``N gamma.1_x`` supported on the atoms.

    Queries that hit an atom exactly return the scaled value; any other point
    falls through to ``off_support`` (zero unless given).
    """

    lookup: dict = field(default_factory=dict)

    @classmethod
    def build(cls, x: np.ndarray, z: np.ndarray, gamma: np.ndarray, off_support: SpatialFields | None = None) -> AtomFields:
        n, d = x.shape
        lookup: dict[bytes, int] = {}
        for i in range(n):
            key = np.ascontiguousarray(x[i]).tobytes()
            j = lookup.setdefault(key, i)
            if j != i and not (np.array_equal(z[i], z[j]) and np.array_equal(gamma[i], gamma[j])):
                raise ValueError(f"particles {j} and {i} collide with conflicting (z, gamma); lift is ill-posed")
        zN = n * z
        gN = n * gamma
        fallback = off_support or constant_fields(np.zeros(d), np.zeros((d, d)), d)

        def resolve(points: np.ndarray, table: np.ndarray, off: FieldFn) -> np.ndarray:
            out = np.empty((points.shape[0],) + table.shape[1:])
            miss = []
            for r in range(points.shape[0]):
                k = lookup.get(np.ascontiguousarray(points[r]).tobytes())
                if k is None:
                    miss.append(r)
                else:
                    out[r] = table[k]
            if miss:
                out[miss] = off(points[miss])
            return out

        return cls(
            Z=lambda q: resolve(np.asarray(q, dtype=float), zN, fallback.Z),
            Gamma=lambda q: resolve(np.asarray(q, dtype=float), gN, fallback.Gamma),
            lookup=lookup,
        )


def _check_lift_inputs(x, z, gamma, N: int | None = None):
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    gamma = np.asarray(gamma, dtype=float)
    if x.ndim != 2:
        raise ShapeError("x must have shape (N, d)")
    n, d = x.shape
    if N is not None and n != N:
        raise ShapeError(f"lift built for N={N}, got {n} particles")
    if z.shape != (n, d) or gamma.shape != (n, d, d):
        raise ShapeError(f"expected z {(n, d)} and gamma {(n, d, d)}, got {z.shape} and {gamma.shape}")
    return x, z, gamma


def lift_operator(F: MeanFieldOperator, N: int, off_support: SpatialFields | None = None):
    """Finite-dimensional lift ``F^N(t, x, y, z, gamma) = F(t, mu^N(x), y, N z.1_x, N gamma.1_x)``.

    ``z`` has shape ``(N, d)`` and ``gamma`` holds the diagonal blocks, shape
    ``(N, d, d)``.  ``off_support`` lets callers choose what the fields return
    away from the atoms; by locality of ``F`` it must not matter.
    """

    def lifted(t: float, x, y: float, z, gamma) -> float:
        x_, z_, g_ = _check_lift_inputs(x, z, gamma, N)
        fields = AtomFields.build(x_, z_, g_, off_support)
        return F(t, make_empirical(x_), y, fields)

    lifted.__name__ = f"lift_{F.name}_N{N}"
    return lifted


def hjb_lift_closed_form(spec: HJBSpec, t: float, x, z, gamma) -> float:
    """N-particle Hamiltonian ``sum_i max_a {b.z_i + 1/2 sigma^2:gamma_i + f/N}``.

    This is the operator of the per-particle normalised value ``V^N / N``
    (terminal data ``g(mu^N(x))``).  The reward enters with weight ``1/N``
    because the lift multiplies ``z`` and ``gamma`` by ``N`` but not ``f``.
    """
    x_, z_, g_ = _check_lift_inputs(x, z, gamma)
    n = x_.shape[0]
    table = _hamiltonian_table(spec, t, x_, z_, g_, 1.0 / n)
    return float(np.sum(np.max(table, axis=0)))


def isaacs_lift_closed_form(spec: IsaacsSpec, t: float, x, z, gamma) -> float:
    """``sum_i inf_{a2} sup_{a1} {b.z_i + 1/2 sigma^2:gamma_i + f/N}``."""
    x_, z_, g_ = _check_lift_inputs(x, z, gamma)
    n = x_.shape[0]
    table = _isaacs_table(spec, t, x_, z_, g_, 1.0 / n)
    return float(np.sum(np.min(np.max(table, axis=1), axis=0)))


def linear_lift_closed_form(b: Callable, sigma: Callable, t: float, x, z, gamma) -> float:
    """``b(x) . z + 1/2 sigma^2(x) : gamma`` summed over particles."""
    x_, z_, g_ = _check_lift_inputs(x, z, gamma)
    n, d = x_.shape
    bb = _full(b(t, x_, x_), (n, d))
    ss = _full(sigma(t, x_, x_), (n, d, d))
    return float(np.sum(np.sum(bb * z_, axis=-1) + 0.5 * frob_pair(ss, g_)))


def action_grid(low: float, high: float, points: int) -> np.ndarray:
    """Uniform grid on ``[low, high]`` as an ``(points, 1)`` action array."""
    if points < 1:
        raise ValueError("action grid needs at least one point")
    if points == 1:
        return np.array([[0.5 * (low + high)]])
    return np.linspace(low, high, points)[:, None]


def grid_mesh(actions: np.ndarray) -> float:
    """Largest spacing between consecutive one-dimensional grid points."""
    a = np.sort(np.asarray(actions, dtype=float).ravel())
    return float(np.max(np.diff(a))) if a.size > 1 else math.inf


def random_hjb_spec(rng: np.random.Generator, d: int, n_actions: int, k: int = 1, L: float = 2.0) -> HJBSpec:
    """Smooth bounded coefficients with random weights, for identity and locality checks.

    Every coefficient depends on ``(t, x, mean(mu), a)`` so that the
    measure argument, the position and the action all matter.
    """
    wx, wm, wa = rng.normal(size=(d, d)), rng.normal(size=(d, d)), rng.normal(size=(k, d))
    sx, sa = rng.normal(size=(d, d * d)), rng.normal(size=(k, d * d))
    fx, fm, fa = rng.normal(size=d), rng.normal(size=d), rng.normal(size=k)
    c0 = float(rng.normal())

    def b(t, x, mu, a):
        m = np.mean(mu, axis=-2, keepdims=True)
        return L * np.tanh(x @ wx + m @ wm + a @ wa + c0 * t)

    def sigma(t, x, mu, a):
        raw = np.tanh(x @ sx + a @ sa + c0)
        return L * raw.reshape(raw.shape[:-1] + (d, d))

    def f(t, x, mu, a):
        m = np.mean(mu, axis=-2, keepdims=True)
        return np.sin(x @ fx + t) * np.cos(m @ fm) + (a @ fa) - 0.5 * np.sum(a * a, axis=-1)

    def g(mu):
        return np.mean(np.cos(mu @ fx), axis=-1)

    actions = rng.uniform(-1.0, 1.0, size=(n_actions, k))
    return HJBSpec(b=b, sigma=sigma, f=f, g=g, actions=actions, L=L, T=1.0, name="random")
