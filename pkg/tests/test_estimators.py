import logging

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cyberdse.dynamics import ControlInput
from cyberdse.estimators import (CovarianceError, FilterConfig, calibrate_dj, cubature_points,
                                 forecast, generator_measurement, huber_weights, identify_attack,
                                 IdentificationState, measurement_update, rckf_update,
                                 read_trajectory, run_filter, sqrt_factor, write_trajectory)
from cyberdse.measurement import DEG, NoiseModel, noise_covariance, sample_stream


# --- factorisation and cubature points -------------------------------------------------

def test_sqrt_factor_examples():
    assert np.array_equal(sqrt_factor(np.eye(4)), np.eye(4))
    assert np.allclose(sqrt_factor(np.diag([4.0, 9, 1, 16])), np.diag([2.0, 3, 1, 4]), atol=0)
    rng = np.random.default_rng(0)
    A = rng.normal(size=(4, 4))
    P = A @ A.T + np.eye(4)
    S = sqrt_factor(P)
    assert np.max(np.abs(S @ S.T - P)) <= 1e-12
    assert np.allclose(S, np.tril(S))


def test_sqrt_factor_repairs_singular(caplog):
    v = np.array([1.0, 2.0, 0.5, -1.0])
    P = np.outer(v, v)                      # rank one, PSD
    repairs = []
    with caplog.at_level(logging.WARNING):
        S = sqrt_factor(P, repairs)
    assert repairs and 1e-12 <= repairs[0] <= 1e-6
    assert "jitter" in caplog.text
    assert np.max(np.abs(S @ S.T - P)) <= 1e-5


def test_sqrt_factor_rejects_indefinite():
    with pytest.raises(CovarianceError, match="eigenvalues"):
        sqrt_factor(np.diag([1.0, 1.0, -1e-3, 1.0]))


def test_cubature_points_layout():
    cs = cubature_points(np.zeros(4), np.eye(4))
    assert cs.points.shape == (4, 8)
    assert np.allclose(cs.weights, 1 / 8)
    expected = np.hstack([2 * np.eye(4), -2 * np.eye(4)])
    assert np.array_equal(cs.points, expected)


def test_cubature_moments():
    rng = np.random.default_rng(3)
    A = rng.normal(size=(4, 4))
    P = A @ A.T + 0.1 * np.eye(4)
    x = rng.normal(size=4)
    cs = cubature_points(x, sqrt_factor(P))
    assert np.allclose(cs.mean, x, rtol=0, atol=1e-14)
    assert np.max(np.abs(cs.covariance() - P)) <= 1e-10


# --- forecast and update ---------------------------------------------------------

def test_forecast_identity_map():
    P = np.diag([1e-2, 2e-3, 1e-4, 5e-4])
    x = np.array([0.1, 1.0, 1.1, 0.2])
    xp, Pp = forecast(x, P, np.zeros((4, 4)), lambda X: X)
    assert np.allclose(xp, x, atol=1e-15) and np.max(np.abs(Pp - P)) <= 1e-15


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_forecast_exact_for_affine_maps(seed):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(4, 4))
    b = rng.normal(size=4)
    L = rng.normal(size=(4, 4))
    P = L @ L.T + 0.01 * np.eye(4)
    Q = np.diag(rng.uniform(0, 1e-3, 4))
    x = rng.normal(size=4)
    xp, Pp = forecast(x, P, Q, lambda X: A @ X + b[:, None])
    assert np.max(np.abs(xp - (A @ x + b))) <= 1e-10 * max(1, np.abs(A @ x + b).max())
    ref = A @ P @ A.T + Q
    assert np.max(np.abs(Pp - ref)) <= 1e-10 * max(1, np.abs(ref).max())


def test_forecast_adds_q_verbatim():
    A = np.array([[1, 0.02, 0, 0], [0, 1, 0, 0], [0, 0, 0.99, 0], [0, 0, 0, 0.98]])
    P = np.diag([1e-3, 1e-4, 1e-4, 1e-4])
    _, P0 = forecast(np.zeros(4), P, np.zeros((4, 4)), lambda X: A @ X)
    _, P1 = forecast(np.zeros(4), P, 1e-5 * np.eye(4), lambda X: A @ X)
    assert np.allclose(P1 - P0, 1e-5 * np.eye(4), rtol=0, atol=1e-18)


def _nonlinear_case():
    from cyberdse.dynamics import GeneratorParams
    p = GeneratorParams(omega_b=2 * np.pi * 50)
    x_true = np.array([0.55, 1.0005, 1.08, 0.25])
    x_pred = x_true + np.array([0.004, -2e-4, 0.003, -0.002])
    P_pred = np.diag([1e-4, 1e-6, 1e-5, 1e-5])
    U, phi = 1.04, 0.05
    h = generator_measurement(U, phi, p)
    R = noise_covariance((U, phi), x_pred, p, NoiseModel())
    return p, x_true, x_pred, P_pred, h, R


def test_zero_innovation_keeps_forecast():
    p, x_true, x_pred, P_pred, h, R = _nonlinear_case()
    probe = measurement_update(x_pred, P_pred, np.zeros(3), R, h)
    res = measurement_update(x_pred, P_pred, probe.z_pred, R, h)
    assert np.allclose(res.x, x_pred, rtol=0, atol=1e-15)


def test_large_r_shrinks_correction():
    p, x_true, x_pred, P_pred, h, R = _nonlinear_case()
    z = h(x_true[:, None])[:, 0]
    a = measurement_update(x_pred, P_pred, z, R, h)
    b = measurement_update(x_pred, P_pred, z, R * 1e6, h)
    assert np.linalg.norm(b.x - x_pred) <= np.linalg.norm(a.x - x_pred) / 1e5


def test_matches_textbook_kalman_filter():
    rng = np.random.default_rng(42)
    A = np.array([[1.0, 0.02, 0, 0], [-0.05, 0.99, 0, 0.01], [0, 0, 0.97, 0.02], [0, 0, -0.01, 0.98]])
    C = np.array([[1.0, 0, 0, 0], [0, 1.0, 0, 0], [0.3, 0, 0.8, -0.5]])
    Q = np.diag([1e-6, 1e-7, 1e-6, 1e-6])
    R = np.diag([1e-3, 1e-5, 1e-4])
    x = np.array([0.5, 0.0, 1.0, 0.2])
    xs = np.zeros(4)
    P = np.eye(4) * 0.1
    xk, Pk = xs.copy(), P.copy()
    worst = 0.0
    for _ in range(100):
        x = A @ x + rng.multivariate_normal(np.zeros(4), Q)
        z = C @ x + rng.multivariate_normal(np.zeros(3), R)
        xp, Pp = forecast(xs, P, Q, lambda X: A @ X)
        res = measurement_update(xp, Pp, z, R, lambda X: C @ X)
        xs, P = res.x, res.P
        # reference filter
        xkp = A @ xk
        Pkp = A @ Pk @ A.T + Q
        K = Pkp @ C.T @ np.linalg.inv(C @ Pkp @ C.T + R)
        xk = xkp + K @ (z - C @ xkp)
        Pk = Pkp - K @ (C @ Pkp @ C.T + R) @ K.T
        worst = max(worst, np.max(np.abs(xs - xk)), np.max(np.abs(P - Pk)))
    assert worst <= 1e-8


# --- Huber weighting --------------------------------------------------------------

def test_huber_no_correction_inside_band():
    R = np.diag([1e-3, 1e-6, 1e-4])
    Pzz = R + np.diag([1e-4, 1e-7, 1e-5])
    hw = huber_weights(np.zeros(3), Pzz, R)
    assert np.array_equal(hw.R_bar, R) and not hw.triggered.any()


def test_huber_boundary_and_inflation():
    R = np.diag([1.0, 2.0, 3.0])
    Pzz = np.diag([4.0, 4.0, 4.0])
    r = np.array([1.5 * 2.0, 3.0 * 2.0, 0.5])      # r' = 1.5, 3, 0.25
    hw = huber_weights(r, Pzz, R, C=1.5)
    assert list(hw.triggered) == [False, True, False]
    assert hw.R_bar[0, 0] == 1.0
    assert hw.R_bar[1, 1] == pytest.approx(2 * 2.0, rel=1e-15)
    assert hw.R_bar[2, 2] == 3.0
    assert np.allclose(hw.P_bar @ hw.R_bar, np.eye(3))
    assert np.count_nonzero(hw.R_bar - np.diag(np.diag(hw.R_bar))) == 0


@settings(max_examples=200, deadline=None)
@given(r=st.lists(st.floats(-1e3, 1e3), min_size=3, max_size=3),
       s=st.lists(st.floats(1e-6, 10), min_size=3, max_size=3))
def test_huber_monotone(r, s):
    R = np.diag(s)
    Pzz = R * 1.5
    hw = huber_weights(np.array(r), Pzz, R)
    d, d0 = np.diag(hw.R_bar), np.diag(R)
    assert np.all(d >= d0)
    assert np.array_equal(d == d0, np.abs(hw.r_std) <= 1.5)


def test_huber_rejects_zero_variance():
    with pytest.raises(ValueError):
        huber_weights(np.ones(3), np.diag([1.0, 0.0, 1.0]), np.eye(3))


def test_rckf_bit_identical_without_trigger():
    p, x_true, x_pred, P_pred, h, R = _nonlinear_case()
    z = h(x_true[:, None])[:, 0]
    a = measurement_update(x_pred, P_pred, z, R, h)
    b = rckf_update(x_pred, P_pred, z, R, h)
    assert np.all(np.abs(a.r_std) <= 1.5)
    assert np.array_equal(a.x, b.x) and np.array_equal(a.P, b.P)


def test_rckf_resists_gross_error():
    p, x_true, x_pred, P_pred, h, R = _nonlinear_case()
    z = h(x_true[:, None])[:, 0]
    z[0] += 50 * 2 * DEG
    a = measurement_update(x_pred, P_pred, z, R, h)
    b = rckf_update(x_pred, P_pred, z, R, h)
    assert abs(b.x[0] - x_true[0]) <= 0.2 * abs(a.x[0] - x_true[0])


def test_rckf_resists_zeroed_vector(params, ninebus_truth):
    stream = sample_stream(ninebus_truth, NoiseModel(), 50, params, np.random.default_rng(0))
    tr = run_filter(stream, "ckf", params, NoiseModel(), ninebus_truth.x[0],
                    ControlInput(*ninebus_truth.u[0]))
    k = 100                                   # t = 2 s, inside the post-fault swing
    x_prev = tr.x_post[k - 1]
    P_prev = np.diag(tr.P_diag[k - 1])
    from cyberdse.estimators import generator_transition
    u = ControlInput(*ninebus_truth.u[k - 1][:2], stream.U[k - 1], stream.phi[k - 1])
    xp, Pp = forecast(x_prev, P_prev, 1e-8 * np.eye(4), generator_transition(u, params, 0.02))
    h = generator_measurement(stream.U[k], stream.phi[k], params)
    R = noise_covariance((stream.U[k], stream.phi[k]), xp, params, NoiseModel())
    a = measurement_update(xp, Pp, np.zeros(3), R, h)
    b = rckf_update(xp, Pp, np.zeros(3), R, h)
    assert np.linalg.norm(b.x - xp) <= 0.1 * np.linalg.norm(a.x - xp)


# --- identification ---------------------------------------------------------------

def test_calibrate_and_identify():
    ident = calibrate_dj([0.25] * 10)
    assert ident.D_J == 0.25
    x = np.array([0.5, 1.0, 1.0, 0.0])
    assert not identify_attack(x, x, ident)
    assert not identify_attack(x + [0.25, 0, 0, 0], x, ident)      # equality is not an attack
    assert identify_attack(x + [0.5, 0, 0, 0], x, ident)


def test_calibration_rescan_has_no_flags():
    rng = np.random.default_rng(2)
    pairs = [(rng.normal(size=4), rng.normal(size=4)) for _ in range(500)]
    ident = calibrate_dj(pairs)
    assert ident.D_J > 0
    assert not any(identify_attack(a, b, ident) for a, b in pairs)


def test_identification_errors():
    with pytest.raises(ValueError):
        calibrate_dj([])
    with pytest.raises(RuntimeError):
        identify_attack(np.zeros(4), np.zeros(4), IdentificationState())
    assert calibrate_dj([1.0, 2.0], safety_factor=1.5).threshold == 3.0


# --- full filter on the generator ---------------------------------------------------

@pytest.fixture(scope="module")
def clean_runs(params, ninebus_truth):
    stream = sample_stream(ninebus_truth, NoiseModel(), 50, params, np.random.default_rng(1))
    x0 = ninebus_truth.x[0] + np.random.default_rng(2).normal(0, 0.01, 4)
    c0 = ControlInput(*ninebus_truth.u[0])
    return stream, {m: run_filter(stream, m, params, NoiseModel(), x0, c0) for m in ("ckf", "rckf")}


def test_filter_tracks_truth(clean_runs, ninebus_truth):
    _, runs = clean_runs
    for tr in runs.values():
        err = tr.x_post[25:, 0] - ninebus_truth.x[25:, 0]
        assert np.sqrt(np.mean(err ** 2)) < 5e-3
        assert np.sqrt(np.mean((tr.x_post[25:, 1] - ninebus_truth.x[25:, 1]) ** 2)) < 5e-4


def test_filter_covariance_health(clean_runs):
    _, runs = clean_runs
    for tr in runs.values():
        assert np.nanmax(tr.max_asym) <= 1e-10
        assert np.nanmin(tr.min_eig) >= -1e-10
        assert tr.repairs == []


def test_filter_rejects_unknown_method(clean_runs, params, ninebus_truth):
    stream, _ = clean_runs
    with pytest.raises(ValueError):
        run_filter(stream, "ukf", params, NoiseModel(), ninebus_truth.x[0],
                   ControlInput(*ninebus_truth.u[0]))
    with pytest.raises(ValueError):
        FilterConfig(C=0)


def test_linear_terminal_hold_option(clean_runs, params, ninebus_truth):
    stream, runs = clean_runs
    tr = run_filter(stream, "ckf", params, NoiseModel(), runs["ckf"].x_post[0],
                    ControlInput(*ninebus_truth.u[0]), FilterConfig(terminal_hold="linear"))
    err = tr.x_post[25:, 0] - ninebus_truth.x[25:, 0]
    assert np.sqrt(np.mean(err ** 2)) < 5e-3


def test_trajectory_round_trip(tmp_path, clean_runs):
    _, runs = clean_runs
    tr = runs["rckf"]
    tr.flag_with(calibrate_dj(tr.gaps[26:]))
    back = read_trajectory(write_trajectory(tmp_path / "t.csv", tr), "rckf")
    assert np.array_equal(back.x_post, tr.x_post) and np.array_equal(back.P_diag, tr.P_diag)
    assert np.array_equal(back.flags, tr.flags)
    head = (tmp_path / "t.csv").read_text().splitlines()[0].split(",")
    assert len(head) == 1 + 4 + 4 + 4 + 3 + 3 + 1
