import numpy as np
import pytest
from scipy.linalg import expm

from hybridvi import geom
from hybridvi import observer as obs
from hybridvi.geom import ExtendedPose, NavInput
from hybridvi.sensors import LandmarkSet, measure_landmarks

import oracles

E3 = np.array([0.0, 0.0, 1.0])


@pytest.fixture(scope="module")
def L():
    return LandmarkSet.cube(2.0)


@pytest.fixture(scope="module")
def gains(L):
    return obs.ObserverGains.for_landmarks(L)


def _state(X):
    return obs.ObserverState(X)


def test_gains_defaults(gains):
    assert gains.delta == pytest.approx(0.8)
    K = gains.gain_block()
    np.testing.assert_allclose(K[:3, :3], 9.81**2 * np.eye(3))
    np.testing.assert_array_equal(K[3:, 3:], [[9, 0], [25, 6]])
    assert gains.chart_rotations().shape == (9, 3, 3)
    with pytest.raises(obs.ObserverInputError):
        obs.ObserverGains(kv1=0.0)


def test_cost_examples(L, rng):
    X = oracles.random_extended(rng)
    m = measure_landmarks(X, L)
    assert obs.cost(X, m, L) == pytest.approx(0.0, abs=1e-20)
    d = np.array([0.3, -0.1, 0.2])
    Xd = ExtendedPose(X.rot, X.vel, X.pos + d)
    assert obs.cost(Xd, m, L) == pytest.approx(len(L) * d @ d, rel=1e-12)
    Rz = geom.rodrigues(np.pi, E3)
    Xr = ExtendedPose(Rz, np.zeros(3), np.zeros(3)) @ X
    brute = sum(np.sum((L.homogeneous[:, i] - Xr.matrix() @ m.beta[:, i]) ** 2) for i in range(len(L)))
    assert obs.cost(Xr, m, L) == pytest.approx(brute, rel=1e-12)


def test_count_mismatch(L):
    with pytest.raises(obs.ObserverInputError):
        obs.cost(ExtendedPose.identity(), np.zeros((5, 3)), L)


def test_correction_forms_agree(L, gains, rng):
    Lm = obs.Landmarks(L, gains)
    for _ in range(200):
        X, Xh = oracles.random_extended(rng), oracles.random_extended(rng)
        m = measure_landmarks(X, L)
        D1 = obs.correction(Xh, m, L, gains)
        D2 = obs.correction_from_error(X.matrix() @ geom.inv_se23(Xh.matrix()), Lm.M, Lm.K)
        assert np.max(np.abs(D1 - D2)) <= 1e-9 * max(1.0, np.max(np.abs(D1)))
        np.testing.assert_allclose(D1, geom.upsilon(D1), atol=0)


def test_correction_zero_at_truth(L, gains, rng):
    X = oracles.random_extended(rng)
    D = obs.correction(X, measure_landmarks(X, L), L, gains)
    assert np.max(np.abs(D)) < 1e-9


def _truth_at(X0, u, t):
    """Closed form of X' = X U + G X for constant input."""
    return expm(geom.gravity_matrix() * t) @ X0 @ expm(u.matrix() * t)


def test_flow_at_truth_tracks_truth(L, gains):
    u = NavInput([0.1, -0.2, 0.3], [0.5, 0.0, 9.81])
    X0 = ExtendedPose(geom.rodrigues(0.3, E3), [0.1, 0, 0], [0.2, 0.1, -0.3]).matrix()
    meas = lambda t: measure_landmarks(ExtendedPose.from_matrix(_truth_at(X0, u, t), tol=1e-9), L)
    st = _state(ExtendedPose.from_matrix(X0))
    for k in range(100):
        st = obs.flow(st, u, meas, L, gains, 1e-3, t0=k * 1e-3, substeps=5)
        assert np.max(np.abs(st.est.matrix() - _truth_at(X0, u, (k + 1) * 1e-3))) < 1e-8


def _position_offset_run(L, gains, d, T=1.0, dt=1e-3):
    X = ExtendedPose.identity()
    meas = measure_landmarks(X, L)
    u = NavInput(np.zeros(3), -geom.GRAVITY)
    st = _state(ExtendedPose(np.eye(3), np.zeros(3), d))
    n = obs.stiffness_substeps(L, gains, dt)
    out = [obs.estimation_error(X, st.est).tilde.pos]
    for _ in range(int(round(T / dt))):
        st = obs.flow(st, u, meas, L, gains, dt, substeps=n)
        out.append(obs.estimation_error(X, st.est).tilde.pos)
    return np.array(out)


def test_position_offset_matches_linear_oracle(L, gains):
    """For a centred cube a pure position offset obeys p'' + n^2 kp p' + n^2 kv2 p = 0."""
    d = np.array([0.4, -0.3, 0.2])
    p = _position_offset_run(L, gains, d)
    n = len(L)
    a, b = n * n * gains.kp, n * n * gains.kv2
    s = np.roots([1.0, a, b])
    c = np.linalg.solve([[1.0, 1.0], s], [1.0, -a])
    t = np.arange(len(p)) * 1e-3
    scale = (c[0] * np.exp(s[0] * t) + c[1] * np.exp(s[1] * t)).real
    np.testing.assert_allclose(p, -np.outer(scale, d), atol=1e-6)


@pytest.mark.xfail(strict=True, reason="the 2x2 position/velocity mode is overdamped but the "
                   "fast root makes the error cross zero once, about 2% overshoot")
def test_position_error_decreases_monotonically(L, gains):
    e = np.linalg.norm(_position_offset_run(L, gains, np.array([0.4, -0.3, 0.2])), axis=1)
    assert np.all(np.diff(e) < 0)


def _rk4(f, X, h, n):
    for _ in range(n):
        k1 = f(X)
        k2 = f(X + 0.5 * h * k1)
        k3 = f(X + 0.5 * h * k2)
        k4 = f(X + h * k3)
        X = X + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    return X


def test_error_dynamics_consistency(L, gains):
    """Central-differenced X~ matches G X~ - X~ G + X~ Delta to O(dt^2)."""
    G = geom.gravity_matrix()
    U = NavInput([0.2, 0.1, -0.3], [0.3, -0.2, 9.0]).matrix()
    X0 = ExtendedPose(geom.rodrigues(0.2, E3), [0.1, 0.2, 0.0], [0.3, -0.2, 0.1]).matrix()
    Xh0 = ExtendedPose(geom.rodrigues(-0.4, np.array([1.0, 0, 0])), [0.0, 0.1, 0.0],
                       [0.1, 0.1, 0.0]).matrix()
    Lm = obs.Landmarks(L, gains)
    beta = measure_landmarks(ExtendedPose.from_matrix(X0), L).beta
    truth = lambda X: X @ U + G @ X
    est = lambda X: obs.flow_rhs(X, U, G, beta, Lm.r, Lm.rK)
    Xt0 = X0 @ geom.inv_se23(Xh0)
    model = G @ Xt0 - Xt0 @ G + Xt0 @ obs.correction_array(Xh0, beta, Lm.r, Lm.rK)

    def err(dt):
        tilde = [_rk4(truth, X0, s / 10, 10) @ geom.inv_se23(_rk4(est, Xh0, s / 10, 10))
                 for s in (dt, -dt)]
        return np.max(np.abs((tilde[0] - tilde[1]) / (2 * dt) - model))

    e1, e2 = err(1e-5), err(5e-6)
    assert e1 < 1e-2 * np.max(np.abs(model))
    assert e1 / e2 > 3.0


def test_chart_candidates_single_axis(rng):
    g = obs.ObserverGains(axes=(E3,))
    X = oracles.random_extended(rng)
    c = obs.build_chart_candidates(_state(X), g)
    assert len(c) == 3
    R2 = geom.rodrigues(np.pi, E3)
    np.testing.assert_allclose(c[1].rot, R2 @ X.rot, atol=1e-15)
    np.testing.assert_allclose(c[1].vel, R2 @ X.vel, atol=1e-15)
    np.testing.assert_allclose(c[1].pos, R2 @ X.pos, atol=1e-15)
    # x and y axes flipped
    np.testing.assert_allclose(R2, np.diag([-1.0, -1.0, 1.0]), atol=1e-15)
    full = obs.build_chart_candidates(_state(X), obs.ObserverGains(axes=(E3,), q_values=(4,)))
    np.testing.assert_allclose(full[0].matrix(), X.matrix(), atol=1e-14)


def test_jump_check(L, gains, rng):
    X = oracles.random_extended(rng)
    m = measure_landmarks(X, L)
    d = obs.jump_check(_state(X), m, L, gains)
    assert not d.jump and d.gap <= 0.0
    Rpi = ExtendedPose(geom.rodrigues(np.pi, E3), np.zeros(3), np.zeros(3))
    Xh = Rpi @ X
    g1 = obs.ObserverGains(delta=gains.delta, axes=(E3,))
    d = obs.jump_check(_state(Xh), m, L, g1)
    assert d.jump and d.state.switch_index == 2 and d.state.jump_count == 1
    assert d.gap == pytest.approx(obs.cost(Xh, m, L), rel=1e-9)
    np.testing.assert_allclose(d.state.est.matrix(), X.matrix(), atol=1e-12)
    again = obs.jump_check(d.state, m, L, g1)
    assert not again.jump


def test_stiffness_substeps(L, gains):
    assert obs.stiffness_substeps(L, gains, 1e-3) == 5
    assert obs.stiffness_substeps(L, gains, 1e-5) == 1


def test_batched_convergence_small(L, gains, rng):
    """A handful of large-error initialisations converge with jumps."""
    res = run_batch(L, gains, rng, batch=6, T=6.0)
    assert res["n_jumps"] > 0
    assert res["p_err"].max() < 1e-3
    assert res["R_err"].max() < 1e-3


def run_batch(L, gains, rng, batch, T, dt=1e-3):
    from batch_observer import simulate
    return simulate(L, gains, rng, batch, T, dt)


@pytest.mark.xfail(strict=True, reason="the velocity error is never corrected, so V_o can grow along flows")
def test_vo_nonincreasing_along_flows(L, gains, rng):
    res = run_batch(L, gains, rng, batch=6, T=3.0)
    assert res["flow_worst"] <= 0.0


@pytest.mark.xfail(strict=True, reason="lambda_min(M^2) is 0 because M has an empty velocity row")
def test_gain_condition_nonnegative(L, gains, rng):
    Lm = obs.Landmarks(L, gains)
    worst = np.inf
    for _ in range(200):
        Xt = oracles.random_extended(rng).matrix()
        worst = min(worst, obs.gain_condition_margin(Xt, Lm.M, gains))
    assert worst >= 0.0
