import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mfapprox.dynamics import (
    ControlPolicy,
    MKVProblemSpec,
    check_characteristics,
    constant_policy,
    ou_exact_sampler,
    ou_moments,
    ou_problem,
    path_noise,
    simulate_batch,
    simulate_limit_law,
    simulate_nparticle,
    snap_to_grid,
)
from mfapprox.errors import BoundViolation, ShapeError


def zero(t, x, mu, a):
    return 0.0


def one(t, x, mu, a):
    return 1.0


def frozen(b=zero, sigma=zero, f=zero, g=None, T=1.0, dt=0.1, L=5.0, actions=(0.0,)):
    return MKVProblemSpec(b=b, sigma=sigma, f=f, g=g, actions=np.array(actions), L=L, T=T, dt=dt)


IDLE = constant_policy(0.0)


def test_spec_rejects_bad_step():
    with pytest.raises(ValueError):
        frozen(dt=0.3)
    with pytest.raises(ValueError):
        frozen(dt=0.0)
    assert frozen(dt=0.1).steps == 10


def test_frozen_paths_stay_put():
    x0 = np.array([[0.5], [-1.0], [2.0]])
    bundle = simulate_nparticle(frozen(), IDLE, x0, seed=1)
    assert np.array_equal(bundle.states, np.broadcast_to(x0, bundle.states.shape))
    report = check_characteristics(bundle, L=5.0)
    assert (report.max_drift, report.max_diff, report.passed) == (0.0, 0.0, True)


def test_unit_drift_is_exact():
    spec = frozen(b=one, dt=0.125)
    x0 = np.array([[0.0], [3.0]])
    bundle = simulate_nparticle(spec, IDLE, x0, seed=0)
    k = np.arange(spec.steps + 1)[:, None, None]
    assert np.array_equal(bundle.states, x0 + k * 0.125)
    assert check_characteristics(bundle, 5.0).max_drift == 1.0


def test_initial_state_and_read_only():
    bundle = simulate_nparticle(ou_problem(dt=0.1), IDLE, np.zeros((4, 1)), seed=3)
    assert np.array_equal(bundle.states[0], np.zeros((4, 1)))
    with pytest.raises(ValueError):
        bundle.states[0, 0, 0] = 1.0


def test_bound_violation_cites_L():
    spec = frozen(b=lambda t, x, mu, a: 10.0, L=2.0)
    with pytest.raises(BoundViolation, match="L=2"):
        simulate_nparticle(spec, IDLE, np.zeros((2, 1)), seed=0)


def test_shape_errors():
    with pytest.raises(ShapeError):
        simulate_nparticle(frozen(), IDLE, np.zeros((2, 1, 1)), seed=0)
    with pytest.raises(ShapeError):
        simulate_nparticle(frozen(), IDLE, np.zeros((2, 1)), seed=0, stream_ids=[0])


def test_determinism_bit_identical():
    spec = ou_problem(dt=0.01)
    x0 = np.linspace(-1, 1, 6)[:, None]
    a = simulate_nparticle(spec, IDLE, x0, seed=99)
    b = simulate_nparticle(spec, IDLE, x0, seed=99)
    assert np.array_equal(a.states, b.states)
    c = simulate_nparticle(spec, IDLE, x0, seed=100)
    assert not np.array_equal(a.states, c.states)


def test_streams_do_not_depend_on_particle_count():
    small = path_noise(5, [0, 1], range(3), 20, 2)
    large = path_noise(5, [0, 1, 2], range(7), 20, 2)
    assert np.array_equal(small, large[:, :2, :3])


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**63), st.permutations(list(range(5))))
def test_exchangeability(seed, perm):
    spec = ou_problem(kappa=1.5, sigma=0.7, dt=0.05)
    x0 = np.arange(5.0)[:, None] - 2.0
    base = simulate_nparticle(spec, IDLE, x0, seed=seed)
    perm = np.array(perm)
    moved = simulate_nparticle(spec, IDLE, x0[perm], seed=seed, stream_ids=perm)
    assert np.allclose(moved.states, base.states[:, perm], rtol=0, atol=1e-12)


def test_ou_particle_mean_within_four_se():
    kappa, sigma, n = 1.0, 1.0, 10
    spec = ou_problem(kappa, sigma, T=1.0, dt=0.01)
    x0 = np.linspace(-1, 2, n)[:, None]
    out = simulate_batch(spec, IDLE, x0, seed=7, reps=2000)
    means = out.terminal[:, :, 0].mean(axis=1)
    # the particle mean only diffuses: mean(x0) + sigma * W_T / sqrt(N)
    expected, sd = x0.mean(), sigma * math.sqrt(1.0 / n)
    se = sd / math.sqrt(len(means))
    assert abs(means.mean() - expected) <= 4 * se
    assert np.std(means, ddof=1) == pytest.approx(sd, rel=0.1)


def test_limit_law_exact_variance():
    spec = ou_problem()
    M = 200_000
    cloud = simulate_limit_law(spec, IDLE, lambda rng, m: np.zeros((m, 1)), M, seed=4, exact_sampler=ou_exact_sampler(1.0, 1.0, 1.0))
    v_T = (1 - math.exp(-2)) / 2
    assert v_T == pytest.approx(0.43233, abs=1e-5)
    var = cloud.variance()
    # SE of a Gaussian sample variance is v sqrt(2/(M-1))
    assert abs(float(np.squeeze(var)) - v_T) <= 4 * v_T * math.sqrt(2 / (M - 1))


def test_limit_law_surrogate_and_degenerate_cases():
    spec = ou_problem(dt=0.01)
    cloud = simulate_limit_law(spec, IDLE, lambda rng, m: np.zeros((m, 1)), 4000, seed=2)
    v_T = ou_moments(1.0, 1.0, 1.0)[1]
    assert float(np.squeeze(cloud.variance())) == pytest.approx(v_T, rel=0.08)
    start = np.array([[0.3], [1.0], [-2.0]])
    still = simulate_limit_law(frozen(), IDLE, lambda rng, m: start, 3, seed=0)
    assert np.array_equal(still.points, start)
    single = simulate_limit_law(spec, IDLE, lambda rng, m: np.ones((m, 1)), 1, seed=0)
    assert single.N == 1


def test_zero_noise_local_and_global_error():
    def b(t, x, mu, a):
        return np.sin(x) + 0.5 * np.mean(mu, axis=-2, keepdims=True) * np.cos(t)

    x0 = np.array([[0.2], [1.0], [-0.7]])

    def final(dt, T):
        spec = MKVProblemSpec(b=b, sigma=zero, f=zero, g=None, actions=np.zeros((1, 1)), L=5.0, T=T, dt=dt)
        return simulate_nparticle(spec, IDLE, x0, seed=0).states[-1]

    ref = final(1e-5 / 4, 0.2)
    local = [np.max(np.abs(final(h, h) - final(h / 256, h))) for h in (0.04, 0.02)]
    assert local[0] / local[1] == pytest.approx(4.0, rel=0.15)
    glob = [np.max(np.abs(final(h, 0.2) - ref)) for h in (0.02, 0.01)]
    assert glob[0] / glob[1] == pytest.approx(2.0, rel=0.15)


def test_snap_to_grid():
    grid = np.array([[1.0], [-1.0], [0.0]])
    raw = np.array([[0.4], [0.5], [0.6], [-7.0], [9.0]])
    assert snap_to_grid(raw, grid).ravel().tolist() == [0.0, 0.0, 1.0, -1.0, 1.0]
    grid2 = np.array([[0.0, 0.0], [1.0, 1.0]])
    assert snap_to_grid(np.array([[0.9, 0.8]]), grid2).tolist() == [[1.0, 1.0]]
    assert snap_to_grid(np.array([[5.0]]), np.array([[2.0]])).tolist() == [[2.0]]


def test_policy_actions_lie_on_grid():
    spec = frozen(b=lambda t, x, mu, a: a, actions=np.linspace(-1, 1, 5), L=2.0)
    pol = ControlPolicy(lambda t, X: np.sin(3 * X))
    bundle = simulate_nparticle(spec, pol, np.linspace(-2, 2, 7)[:, None], seed=0)
    assert np.all(np.isin(bundle.actions, spec.actions))


def test_batch_matches_single_paths_and_chunks():
    spec = ou_problem(dt=0.05)
    x0 = np.array([[0.0], [1.0]])
    batch = simulate_batch(spec, IDLE, x0, seed=11, reps=3, rep_start=2)
    for r in range(3):
        single = simulate_nparticle(spec, IDLE, x0, seed=11, rep=2 + r)
        assert np.array_equal(batch.terminal[r], single.states[-1])
    threaded = simulate_batch(spec, IDLE, x0, seed=11, reps=3, rep_start=2, workers=3)
    assert np.array_equal(threaded.terminal, batch.terminal)


def test_batch_payoff_and_crn():
    spec = frozen(
        b=lambda t, x, mu, a: a, sigma=lambda t, x, mu, a: 0.5, f=lambda t, x, mu, a: -a[..., 0] ** 2,
        g=lambda mu: np.mean(mu[..., 0], axis=-1), actions=[-1.0, 0.0, 1.0],
    )
    x0 = np.zeros((3, 1))
    res = simulate_batch(spec, [constant_policy(0.0), constant_policy(1.0)], x0, seed=3, reps=50)
    # identical noise: the drifted policy is the idle one shifted by T, minus the control cost T
    assert np.allclose(res[1].terminal, res[0].terminal + 1.0, atol=1e-12)
    assert np.allclose(res[1].payoff, res[0].payoff + 1.0 - 1.0, atol=1e-12)
    with pytest.raises(ValueError):
        simulate_batch(spec, IDLE, x0, seed=0, reps=0)


def test_path_csv(tmp_path):
    bundle = simulate_nparticle(ou_problem(dt=0.5), IDLE, np.zeros((2, 1)), seed=0)
    path = tmp_path / "paths.csv"
    bundle.write_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "step,time,particle,x0"
    assert len(lines) == 1 + 3 * 2
    again = tmp_path / "again.csv"
    simulate_nparticle(ou_problem(dt=0.5), IDLE, np.zeros((2, 1)), seed=0).write_csv(again)
    assert again.read_bytes() == path.read_bytes()
