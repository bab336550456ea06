import math

import numpy as np
import pytest

from mfapprox.calculus import (
    LiftedTestFunction,
    Semijet,
    cos_field,
    finite_diff_partials,
    functional_derivative_check,
    gauss_bump_field,
    lift_partials,
    linear_field,
    make_field,
    quadratic_field,
    semijet_eval,
)
from mfapprox.empirical import make_empirical
from mfapprox.errors import ShapeError


def zero_field(dim=1):
    return linear_field(np.zeros(dim))


def random_field(rng, d):
    kind = rng.integers(4)
    if kind == 0:
        return gauss_bump_field(rng.normal(size=d), width=rng.uniform(0.5, 2.0), height=rng.uniform(-2, 2))
    if kind == 1:
        return cos_field(rng.uniform(-2, 2, size=d), phase=rng.uniform(0, 2 * math.pi))
    if kind == 2:
        return quadratic_field(d, scale=rng.uniform(-1, 1))
    return linear_field(rng.normal(size=d), offset=rng.normal())


def test_anchor_identity_exact():
    rng = np.random.default_rng(0)
    for _ in range(20):
        d = int(rng.integers(1, 4))
        mu = make_empirical(rng.normal(size=(7, d)))
        v = float(rng.normal())
        psi = Semijet(v=v, a=float(rng.normal()), f=random_field(rng, d), anchor_t=0.3, anchor_mu=mu)
        assert semijet_eval(psi, 0.3, mu) == v


def test_pure_time_term():
    psi = Semijet(0.0, 2.0, zero_field(), anchor_t=0.1, anchor_mu=make_empirical([[0.0]]))
    assert semijet_eval(psi, 0.6, make_empirical([[5.0]])) == pytest.approx(1.0)


def test_linear_functional_term():
    psi = Semijet(0.0, 0.0, linear_field([1.0]), anchor_t=0.0, anchor_mu=make_empirical([[0.0]]))
    assert semijet_eval(psi, 0.0, make_empirical([[3.0]])) == 3.0


def test_dimension_mismatch():
    psi = Semijet(0.0, 0.0, linear_field([1.0]), anchor_t=0.0, anchor_mu=make_empirical([[0.0]]))
    with pytest.raises(ShapeError):
        semijet_eval(psi, 0.0, make_empirical([[0.0, 1.0]]))
    with pytest.raises(ShapeError):
        Semijet(0.0, 0.0, linear_field([1.0, 1.0]), anchor_t=0.0, anchor_mu=make_empirical([[0.0]]))


def test_time_outside_horizon():
    psi = Semijet(0.0, 1.0, zero_field(), 0.0, make_empirical([[0.0]]), horizon=1.0)
    with pytest.raises(ValueError):
        semijet_eval(psi, 1.5, make_empirical([[0.0]]))


def test_three_point_collinearity():
    rng = np.random.default_rng(4)
    mu = make_empirical(rng.normal(size=(5, 2)))
    psi = Semijet(0.7, -1.3, cos_field([1.0, -0.5]), anchor_t=0.2, anchor_mu=mu)
    nu = make_empirical(rng.normal(size=(5, 2)))
    s = np.array([0.0, 0.35, 0.9])
    vals = np.array([semijet_eval(psi, t, nu) for t in s])
    slope1 = (vals[1] - vals[0]) / (s[1] - s[0])
    slope2 = (vals[2] - vals[1]) / (s[2] - s[1])
    assert slope1 == pytest.approx(-1.3, rel=1e-12)
    assert slope2 == pytest.approx(-1.3, rel=1e-12)
    # affine in the pairing <nu, f>: scaling f scales the increment
    psi2 = Semijet(0.7, -1.3, psi.f.scaled(2.0), anchor_t=0.2, anchor_mu=mu)
    inc1 = semijet_eval(psi, 0.2, nu) - 0.7
    inc2 = semijet_eval(psi2, 0.2, nu) - 0.7
    assert inc2 == pytest.approx(2 * inc1, rel=1e-12)


def test_lift_partials_quadratic_example():
    f = quadratic_field(1)
    phi = LiftedTestFunction(Semijet(0.0, 0.4, f, 0.0, make_empirical([[0.0]])), N=4)
    dt, grad, hess = lift_partials(phi, 0.0, np.ones((4, 1)))
    assert dt == 0.4
    assert np.allclose(grad, 0.5)
    assert np.allclose(hess, 0.5)


def test_lifted_value_matches_semijet():
    rng = np.random.default_rng(9)
    mu = make_empirical(rng.normal(size=(3, 2)))
    phi = LiftedTestFunction(Semijet(1.0, 0.5, cos_field([1.0, 2.0]), 0.0, mu), N=6)
    x = rng.normal(size=(6, 2))
    assert phi(0.4, x) == semijet_eval(phi.base, 0.4, make_empirical(x))


def test_gauss_bump_matches_finite_differences():
    rng = np.random.default_rng(12)
    f = gauss_bump_field(center=[0.2], width=0.8)
    phi = LiftedTestFunction(Semijet(0.0, 1.0, f, 0.0, make_empirical([[0.0]])), N=3)
    x = rng.normal(size=(3, 1))
    exact = lift_partials(phi, 0.5, x)
    approx = finite_diff_partials(phi, 0.5, x, h=1e-4)
    assert np.max(np.abs(exact[1] - approx[1])) <= 1e-6
    assert np.max(np.abs(exact[2] - approx[2])) <= 1e-6


def test_linear_field_fd():
    phi = LiftedTestFunction(Semijet(0.0, 0.0, linear_field([2.0, -1.0]), 0.0, make_empirical([[0.0, 0.0]])), N=2)
    x = np.array([[0.3, 0.1], [-1.0, 2.0]])
    _, grad, hess = finite_diff_partials(phi, 0.0, x, h=1e-3)
    assert np.allclose(grad, lift_partials(phi, 0.0, x)[1], atol=1e-9)
    assert np.max(np.abs(hess)) <= 1e-6


def test_quadratic_gradient_error_bound():
    phi = LiftedTestFunction(Semijet(0.0, 0.0, quadratic_field(1), 0.0, make_empirical([[0.0]])), N=2)
    x = np.array([[0.7], [-1.2]])
    _, grad, _ = finite_diff_partials(phi, 0.0, x, h=1e-4)
    assert np.max(np.abs(grad - lift_partials(phi, 0.0, x)[1])) <= 1e-7


def test_fd_time_direction():
    phi = LiftedTestFunction(Semijet(0.0, -2.5, cos_field([1.0]), 0.5, make_empirical([[0.0]])), N=3)
    dt, _, _ = finite_diff_partials(phi, 0.5, np.zeros((3, 1)))
    assert dt == pytest.approx(-2.5, rel=1e-10)


def test_fd_step_must_be_positive():
    phi = LiftedTestFunction(Semijet(0.0, 0.0, zero_field(), 0.0, make_empirical([[0.0]])), N=1)
    with pytest.raises(ValueError):
        finite_diff_partials(phi, 0.0, np.zeros((1, 1)), h=0.0)


def test_derivative_identity_suite():
    rng = np.random.default_rng(51)
    worst = 0.0
    for _ in range(200):
        n = int(rng.integers(1, 9))
        d = int(rng.integers(1, 4))
        f = random_field(rng, d)
        mu = make_empirical(rng.normal(size=(4, d)))
        phi = LiftedTestFunction(Semijet(float(rng.normal()), float(rng.normal()), f, 0.0, mu), N=n)
        x = rng.normal(size=(n, d))
        exact = lift_partials(phi, 0.3, x)
        approx = finite_diff_partials(phi, 0.3, x, h=1e-4)
        err = max(abs(exact[0] - approx[0]), np.max(np.abs(exact[1] - approx[1])), np.max(np.abs(exact[2] - approx[2])))
        worst = max(worst, err)
    assert worst <= 1e-5


def test_scaling_is_exact_for_powers_of_two():
    rng = np.random.default_rng(2)
    f = cos_field([0.3, -1.1])
    mu = make_empirical(rng.normal(size=(3, 2)))
    x = rng.normal(size=(5, 2))
    base = lift_partials(LiftedTestFunction(Semijet(0.0, 1.0, f, 0.0, mu), 5), 0.0, x)
    for c in (2.0, 0.25, -4.0):
        scaled = lift_partials(LiftedTestFunction(Semijet(0.0, 1.0, f.scaled(c), 0.0, mu), 5), 0.0, x)
        assert np.array_equal(scaled[1], c * base[1])
        assert np.array_equal(scaled[2], c * base[2])
    scaled = lift_partials(LiftedTestFunction(Semijet(0.0, 1.0, f.scaled(0.3), 0.0, mu), 5), 0.0, x)
    assert np.allclose(scaled[1], 0.3 * base[1], rtol=1e-15, atol=0)


def test_functional_derivative_examples():
    rng = np.random.default_rng(3)
    mu = make_empirical(rng.normal(size=(4, 1)))
    assert functional_derivative_check(cos_field([1.0]), mu, mu) == 0.0
    assert functional_derivative_check(linear_field([1.0]), make_empirical([[0.0]]), make_empirical([[1.0]])) <= 1e-15
    for _ in range(50):
        d = int(rng.integers(1, 4))
        f = random_field(rng, d)
        a = make_empirical(rng.normal(size=(int(rng.integers(1, 10)), d)))
        b = make_empirical(rng.normal(size=(int(rng.integers(1, 10)), d)))
        assert functional_derivative_check(f, a, b) <= 1e-12


def test_bounds_enforced():
    f = cos_field([1.0])
    tight = type(f)(f.value, f.gradient, f.hessian, dim=1, bound=0.5, name="tight")
    with pytest.raises(ValueError):
        tight.eval(np.zeros((1, 1)))


def test_hessians_symmetric_and_bounded():
    rng = np.random.default_rng(8)
    for name in ("gauss_bump", "cos"):
        f = make_field(name, dim=3)
        x = rng.normal(size=(200, 3)) * 3
        f.eval(x), f.grad(x), f.hess(x)  # raises if a bound or symmetry check fails


def test_registry_unknown():
    with pytest.raises(KeyError):
        make_field("nope")
