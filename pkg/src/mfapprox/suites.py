"""Seeded randomized check suites for the operator lift and the lifted derivatives."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .calculus import LiftedTestFunction, Semijet, cos_field, finite_diff_partials, gauss_bump_field, lift_partials, linear_field, quadratic_field
from .empirical import brute_force_w2, make_empirical, wasserstein2
from .operators import (
    HJBSpec,
    IsaacsSpec,
    MeanFieldOperator,
    SpatialFields,
    hjb_lift_closed_form,
    hjb_operator,
    isaacs_lift_closed_form,
    isaacs_operator,
    lift_operator,
    linear_lift_closed_form,
    linear_operator,
)
from .presets import make_operator_instance, operator_dimension


@dataclass
class SuiteResult:
    name: str
    instances: int
    tolerance: float
    worst: float = 0.0
    failures: list[dict] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures


def _operator(coeffs) -> MeanFieldOperator:
    if isinstance(coeffs, HJBSpec):
        return hjb_operator(coeffs)
    if isinstance(coeffs, IsaacsSpec):
        return isaacs_operator(coeffs)
    return linear_operator(*coeffs)


def _closed_form(coeffs, t, x, z, gam) -> float:
    """Particle Hamiltonian the lift must reproduce."""
    if isinstance(coeffs, HJBSpec):
        return hjb_lift_closed_form(coeffs, t, x, z, gam)
    if isinstance(coeffs, IsaacsSpec):
        return isaacs_lift_closed_form(coeffs, t, x, z, gam)
    return linear_lift_closed_form(*coeffs, t, x, z, gam)


def _draw(rng: np.random.Generator, preset: str, max_N: int, max_d: int):
    fixed = operator_dimension(preset)
    d = fixed or int(rng.integers(1, max_d + 1))
    n = int(rng.integers(1, max_N + 1))
    coeffs = make_operator_instance(preset, rng, d)
    x = rng.normal(size=(n, d))
    z = rng.normal(size=(n, d))
    s = rng.normal(size=(n, d, d))
    return coeffs, float(rng.uniform()), x, z, 0.5 * (s + np.swapaxes(s, -1, -2))


def lift_identity_suite(preset: str = "random", instances: int = 200, seed: int = 0, tol: float = 1e-12, max_N: int = 4, max_d: int = 2) -> SuiteResult:
    """``|F^N - closed form| <= tol (1 + |closed form|)`` on seeded random instances."""
    rng = np.random.default_rng(seed)
    res = SuiteResult(f"lift_identity[{preset}]", instances, tol)
    for k in range(instances):
        coeffs, t, x, z, gam = _draw(rng, preset, max_N, max_d)
        a = lift_operator(_operator(coeffs), x.shape[0])(t, x, 0.0, z, gam)
        b = _closed_form(coeffs, t, x, z, gam)
        err = abs(a - b) / (1 + abs(b))
        res.worst = max(res.worst, err)
        if not err <= tol:
            res.failures.append({"instance": k, "N": x.shape[0], "d": x.shape[1], "lifted": a, "closed_form": b, "scaled_error": err})
    return res


def locality_suite(preset: str = "random", instances: int = 50, seed: int = 0, max_N: int = 4, max_d: int = 2) -> SuiteResult:
    """Off-support field changes must leave the lift bit-identical."""
    rng = np.random.default_rng(seed)
    res = SuiteResult(f"locality[{preset}]", instances, 0.0)
    for k in range(instances):
        coeffs, t, x, z, gam = _draw(rng, preset, max_N, max_d)
        d = x.shape[1]
        amp = float(rng.uniform(1, 1e3))
        noise = SpatialFields(
            Z=lambda q, amp=amp: amp * np.sin(q + 1.0),
            Gamma=lambda q, amp=amp, d=d: amp * np.cos(q[:, :1, None]) * np.eye(d),
        )
        op = _operator(coeffs)
        a = lift_operator(op, x.shape[0])(t, x, 0.0, z, gam)
        b = lift_operator(op, x.shape[0], off_support=noise)(t, x, 0.0, z, gam)
        res.worst = max(res.worst, abs(a - b))
        if a != b:
            res.failures.append({"instance": k, "N": x.shape[0], "d": d, "plain": a, "perturbed": b})
    return res


def random_test_field(rng: np.random.Generator, d: int):
    kind = int(rng.integers(4))
    if kind == 0:
        return gauss_bump_field(rng.normal(size=d), width=rng.uniform(0.5, 2.0), height=rng.uniform(-2, 2))
    if kind == 1:
        return cos_field(rng.uniform(-2, 2, size=d), phase=rng.uniform(0, 2 * math.pi))
    if kind == 2:
        return quadratic_field(d, scale=rng.uniform(-1, 1))
    return linear_field(rng.normal(size=d), offset=rng.normal())


def derivative_suite(instances: int = 200, seed: int = 0, h: float = 1e-4, tol: float = 1e-5, max_N: int = 8, max_d: int = 3) -> SuiteResult:
    """Closed-form partials of lifted semijets against central differences, componentwise."""
    rng = np.random.default_rng(seed)
    res = SuiteResult("lifted_derivatives", instances, tol)
    for k in range(instances):
        n = int(rng.integers(1, max_N + 1))
        d = int(rng.integers(1, max_d + 1))
        f = random_test_field(rng, d)
        anchor = make_empirical(rng.normal(size=(4, d)))
        phi = LiftedTestFunction(Semijet(float(rng.normal()), float(rng.normal()), f, 0.0, anchor), N=n)
        x = rng.normal(size=(n, d))
        s = float(rng.uniform())
        exact = lift_partials(phi, s, x)
        approx = finite_diff_partials(phi, s, x, h=h)
        err = max(abs(exact[0] - approx[0]), float(np.max(np.abs(exact[1] - approx[1]))), float(np.max(np.abs(exact[2] - approx[2]))))
        res.worst = max(res.worst, err)
        if not err <= tol:
            res.failures.append({"instance": k, "N": n, "d": d, "field": f.name, "error": err})
    return res


def w2_oracle_suite(instances: int = 100, seed: int = 0, tol: float = 1e-9, max_N: int = 7, max_d: int = 3) -> SuiteResult:
    """Exact assignment W2 against permutation enumeration."""
    rng = np.random.default_rng(seed)
    res = SuiteResult("w2_oracle", instances, tol)
    for k in range(instances):
        n = int(rng.integers(1, max_N + 1))
        d = int(rng.integers(1, max_d + 1))
        mu = make_empirical(rng.normal(size=(n, d)))
        nu = make_empirical(rng.normal(size=(n, d)))
        err = abs(wasserstein2(mu, nu)[0] - brute_force_w2(mu, nu))
        res.worst = max(res.worst, err)
        if not err <= tol:
            res.failures.append({"instance": k, "N": n, "d": d, "error": err})
    return res
