"""Cylinder test functions on Wasserstein space and their particle lifts.

The test functions used throughout are semijets

    psi(s, nu) = v + a * (s - t) + <nu - mu, f>

anchored at ``(t, mu)``.  Their linear functional derivative is ``f`` itself,
so the lift ``phi^N(s, x) = psi(s, mu^N(x))`` has closed-form partials:

    d/ds phi^N        = a
    d/dx_i phi^N      = grad f(x_i) / N
    d^2/dx_i^2 phi^N  = hess f(x_i) / N

Arrays follow the ``(N, d)`` particle-major layout: row ``i`` is particle ``i``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .empirical import EmpiricalMeasure, make_empirical
from .errors import ShapeError

ArrayFn = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class SmoothScalarField:
    """A ``C^2`` function ``R^d -> R`` with analytic first and second derivatives.

    All callables are vectorised over a leading axis: ``value`` maps ``(M, d)``
    to ``(M,)``, ``gradient`` to ``(M, d)`` and ``hessian`` to ``(M, d, d)``.
    ``bound`` caps the sup norms of the value, gradient and Hessian (Frobenius);
    ``math.inf`` marks fields of quadratic growth.
    """

    value: ArrayFn
    gradient: ArrayFn
    hessian: ArrayFn
    dim: int
    bound: float = math.inf
    name: str = "field"
    approximate: bool = False

    def _checked(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim != 2 or x.shape[1] != self.dim:
            raise ShapeError(f"field {self.name!r} expects points of shape (M, {self.dim}), got {x.shape}")
        return x

    def eval(self, x: np.ndarray) -> np.ndarray:
        out = np.asarray(self.value(self._checked(x)), dtype=float)
        self._check_bound(out, "value")
        return out

    def grad(self, x: np.ndarray) -> np.ndarray:
        out = np.asarray(self.gradient(self._checked(x)), dtype=float)
        self._check_bound(np.linalg.norm(out, axis=-1), "gradient")
        return out

    def hess(self, x: np.ndarray) -> np.ndarray:
        out = np.asarray(self.hessian(self._checked(x)), dtype=float)
        if not np.allclose(out, np.swapaxes(out, -1, -2), rtol=1e-12, atol=1e-12):
            raise ValueError(f"Hessian of field {self.name!r} is not symmetric")
        self._check_bound(np.linalg.norm(out, axis=(-2, -1)), "hessian")
        return out

    def _check_bound(self, magnitudes: np.ndarray, what: str) -> None:
        if math.isinf(self.bound):
            return
        worst = float(np.max(np.abs(magnitudes))) if magnitudes.size else 0.0
        if worst > self.bound * (1 + 1e-12):
            raise ValueError(f"field {self.name!r}: {what} magnitude {worst:.6g} exceeds bound {self.bound:.6g}")

    def scaled(self, c: float) -> SmoothScalarField:
        """The field ``c * f`` (derivatives scale by the same factor)."""
        return SmoothScalarField(
            value=lambda x: c * self.value(x),
            gradient=lambda x: c * self.gradient(x),
            hessian=lambda x: c * self.hessian(x),
            dim=self.dim,
            bound=abs(c) * self.bound,
            name=f"{c}*{self.name}",
            approximate=self.approximate,
        )


def quadratic_field(dim: int = 1, scale: float = 1.0) -> SmoothScalarField:
    """``scale * |x|^2`` (quadratic growth, unbounded)."""
    eye = np.eye(dim)
    return SmoothScalarField(
        value=lambda x: scale * np.sum(x**2, axis=-1),
        gradient=lambda x: 2.0 * scale * x,
        hessian=lambda x: np.broadcast_to(2.0 * scale * eye, x.shape[:-1] + (dim, dim)).copy(),
        dim=dim,
        name="quadratic",
    )


def linear_field(weights, offset: float = 0.0) -> SmoothScalarField:
    w = np.atleast_1d(np.asarray(weights, dtype=float))
    dim = w.shape[0]
    return SmoothScalarField(
        value=lambda x: x @ w + offset,
        gradient=lambda x: np.broadcast_to(w, x.shape).copy(),
        hessian=lambda x: np.zeros(x.shape[:-1] + (dim, dim)),
        dim=dim,
        name="linear",
    )


def gauss_bump_field(center, width: float = 1.0, height: float = 1.0) -> SmoothScalarField:
    """``height * exp(-|x - center|^2 / (2 width^2))``."""
    c = np.atleast_1d(np.asarray(center, dtype=float))
    dim = c.shape[0]
    w2 = width * width
    eye = np.eye(dim)

    def value(x):
        return height * np.exp(-np.sum((x - c) ** 2, axis=-1) / (2 * w2))

    def gradient(x):
        return -(x - c) / w2 * value(x)[..., None]

    def hessian(x):
        r = x - c
        outer = r[..., :, None] * r[..., None, :] / (w2 * w2)
        return (outer - eye / w2) * value(x)[..., None, None]

    # sup_r e^{-s} 2s/w^2 = 2/(e w^2) for the rank-one part, plus sqrt(d)/w^2
    bound = abs(height) * max(1.0, 1.0 / width, (2.0 / math.e + math.sqrt(dim)) / w2)
    return SmoothScalarField(value, gradient, hessian, dim=dim, bound=bound, name="gauss_bump")


def cos_field(wavevector, phase: float = 0.0) -> SmoothScalarField:
    """``cos(k . x + phase)``."""
    k = np.atleast_1d(np.asarray(wavevector, dtype=float))
    dim = k.shape[0]
    kk = np.outer(k, k)
    knorm = float(np.linalg.norm(k))
    return SmoothScalarField(
        value=lambda x: np.cos(x @ k + phase),
        gradient=lambda x: -np.sin(x @ k + phase)[..., None] * k,
        hessian=lambda x: -np.cos(x @ k + phase)[..., None, None] * kk,
        dim=dim,
        bound=max(1.0, knorm, knorm * knorm),
        name="cos",
    )


def finite_difference_field(value: ArrayFn, dim: int, h: float = 1e-4, name: str = "fd") -> SmoothScalarField:
    """Wrap a bare value function with central-difference derivatives.

    The result is flagged ``approximate=True``; oracle tests require exact
    derivatives and should not use it.
    """
    eye = np.eye(dim)

    def gradient(x):
        return np.stack([(value(x + h * e) - value(x - h * e)) / (2 * h) for e in eye], axis=-1)

    def hessian(x):
        out = np.empty(x.shape[:-1] + (dim, dim))
        f0 = value(x)
        for a in range(dim):
            for b in range(a, dim):
                if a == b:
                    ea = eye[a] * h
                    out[..., a, a] = (value(x + ea) - 2 * f0 + value(x - ea)) / (h * h)
                else:
                    ea, eb = eye[a] * h, eye[b] * h
                    mixed = value(x + ea + eb) - value(x + ea - eb) - value(x - ea + eb) + value(x - ea - eb)
                    out[..., a, b] = out[..., b, a] = mixed / (4 * h * h)
        return out

    return SmoothScalarField(value, gradient, hessian, dim=dim, name=name, approximate=True)


FIELD_REGISTRY: dict[str, Callable[..., SmoothScalarField]] = {
    "quadratic": quadratic_field,
    "gauss_bump": gauss_bump_field,
    "cos": cos_field,
    "linear": linear_field,
}


def make_field(name: str, dim: int = 1, **params) -> SmoothScalarField:
    """Instantiate a registered field by name with sensible defaults for ``dim``."""
    if name not in FIELD_REGISTRY:
        raise KeyError(f"unknown field {name!r}; known: {sorted(FIELD_REGISTRY)}")
    if name == "quadratic":
        return quadratic_field(dim, **params)
    if name == "gauss_bump":
        params.setdefault("center", np.zeros(dim))
        return gauss_bump_field(**params)
    if name == "cos":
        params.setdefault("wavevector", np.ones(dim))
        return cos_field(**params)
    params.setdefault("weights", np.ones(dim))
    return linear_field(**params)


@dataclass(frozen=True)
class Semijet:
    """Test function ``v + a (s - anchor_t) + <nu - anchor_mu, f>``.

    ``anchor_mu`` is an empirical measure.  To anchor at a non-atomic law,
    pass a large sample of it; ``<mu, f>`` is then the sample average.
    """

    v: float
    a: float
    f: SmoothScalarField
    anchor_t: float
    anchor_mu: EmpiricalMeasure
    horizon: float | None = None

    def __post_init__(self) -> None:
        if self.anchor_mu.d != self.f.dim:
            raise ShapeError("anchor measure and test field have different dimensions")

    @property
    def anchor_pairing(self) -> float:
        return self.anchor_mu.integrate(self.f.eval)


def semijet_eval(psi: Semijet, s: float, nu: EmpiricalMeasure) -> float:
    if nu.d != psi.f.dim:
        raise ShapeError(f"measure has d={nu.d}, test field expects d={psi.f.dim}")
    if psi.horizon is not None and not (0.0 <= s <= psi.horizon):
        raise ValueError(f"time {s} outside [0, {psi.horizon}]")
    return psi.v + psi.a * (s - psi.anchor_t) + (nu.integrate(psi.f.eval) - psi.anchor_pairing)


@dataclass(frozen=True)
class LiftedTestFunction:
    """``phi^N(s, x) = psi(s, mu^N(x))`` on ``N``-particle configurations."""

    base: Semijet
    N: int

    def _config(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.N, self.base.f.dim):
            raise ShapeError(f"expected configuration of shape {(self.N, self.base.f.dim)}, got {x.shape}")
        return x

    def __call__(self, s: float, x: np.ndarray) -> float:
        return semijet_eval(self.base, s, make_empirical(self._config(x)))


def lift_partials(phi: LiftedTestFunction, s: float, x: np.ndarray) -> tuple[float, np.ndarray, np.ndarray]:
    """Closed-form ``(d_t, d_x, diagonal Hessian blocks)`` of a lifted semijet.

    Returns ``grad`` of shape ``(N, d)`` and ``hess_diag`` of shape ``(N, d, d)``.
    """
    x = phi._config(x)
    f = phi.base.f
    return phi.base.a, f.grad(x) / phi.N, f.hess(x) / phi.N


def finite_diff_partials(
    phi: LiftedTestFunction, s: float, x: np.ndarray, h: float = 1e-4
) -> tuple[float, np.ndarray, np.ndarray]:
    """Central-difference counterpart of :func:`lift_partials`."""
    if h <= 0:
        raise ValueError("finite-difference step must be positive")
    x = phi._config(x)
    n, d = x.shape
    dt = (phi(s + h, x) - phi(s - h, x)) / (2 * h)
    f0 = phi(s, x)
    grad = np.empty((n, d))
    hess = np.empty((n, d, d))

    def shifted(i, moves):
        y = x.copy()
        for k, step in moves:
            y[i, k] += step
        return phi(s, y)

    for i in range(n):
        for k in range(d):
            fp = shifted(i, [(k, h)])
            fm = shifted(i, [(k, -h)])
            grad[i, k] = (fp - fm) / (2 * h)
            hess[i, k, k] = (fp - 2 * f0 + fm) / (h * h)
        for k in range(d):
            for m in range(k + 1, d):
                mixed = (
                    shifted(i, [(k, h), (m, h)])
                    - shifted(i, [(k, h), (m, -h)])
                    - shifted(i, [(k, -h), (m, h)])
                    + shifted(i, [(k, -h), (m, -h)])
                )
                hess[i, k, m] = hess[i, m, k] = mixed / (4 * h * h)
    return dt, grad, hess


def functional_derivative_check(
    f: SmoothScalarField, mu: EmpiricalMeasure, nu: EmpiricalMeasure, nodes: int = 8
) -> float:
    """Residual of the linear-derivative identity for ``u(m) = <m, f>``.

    Evaluates ``|u(nu) - u(mu) - int_0^1 <nu - mu, delta_m u(m_lambda)> dlambda|``
    with Gauss-Legendre quadrature in ``lambda``.  Here ``delta_m u = f`` for
    every ``m_lambda``, so the residual is pure rounding.
    """
    if mu.d != nu.d or mu.d != f.dim:
        raise ShapeError("measures and field must share the same dimension")
    _, weights = np.polynomial.legendre.leggauss(nodes)
    weights = weights / 2.0  # map [-1, 1] onto [0, 1]
    pair_nu = nu.integrate(f.eval)
    pair_mu = mu.integrate(f.eval)
    integral = math.fsum(w * (pair_nu - pair_mu) for w in weights)
    return abs(pair_nu - pair_mu - integral)
