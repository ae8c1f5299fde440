import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from uwbcal import geom, models
from uwbcal.models import GRAVITY, ImuSample, NavState, NoiseConfig

from .conftest import random_state


def hover_inputs(x):
    R = geom.quat_to_rot(x.q)
    return ImuSample(x.t, R.T @ GRAVITY + x.b_a, x.b_w.copy())


def fine_propagate(x, u, T, n):
    """Reference integration: ``n`` RK4 substeps with the input held."""
    dt = T / n
    for _ in range(n):
        x = models.integrate(x, u, dt)[0]
    return x


def test_hover_equilibrium(rng):
    x = random_state(rng).replace(v=np.zeros(3))
    u = hover_inputs(x)
    y = models.propagate(x, u, 0.05)
    assert y.t == pytest.approx(x.t + 0.05)
    np.testing.assert_allclose(y.p, x.p, atol=1e-14)
    np.testing.assert_allclose(y.v, 0.0, atol=1e-14)
    np.testing.assert_allclose(y.q, x.q, atol=1e-14)
    np.testing.assert_array_equal(y.p_iu, x.p_iu)
    assert y.t_d == x.t_d


def test_free_fall_closed_form():
    b_a = np.array([0.01, -0.02, 0.03])
    b_w = np.array([0.001, 0.0, -0.002])
    v0 = np.array([0.5, -0.3, 1.0])
    x = NavState(0.0, np.zeros(3), v0, geom.IDENTITY, b_a, b_w)
    y = models.integrate(x, ImuSample(0.0, b_a, b_w), 1.0)[0]
    np.testing.assert_allclose(y.v, v0 + [0, 0, -9.8], atol=1e-12)
    np.testing.assert_allclose(y.p, v0 - [0, 0, 4.9], atol=1e-12)


def test_pure_spin_yaw():
    x = NavState(0.0, np.zeros(3), np.zeros(3), geom.IDENTITY)
    u = ImuSample(0.0, GRAVITY, np.array([0.0, 0.0, np.pi / 2]))
    y = fine_propagate(x, u, 1.0, 1000)
    assert geom.quat_to_euler(y.q)[2] == pytest.approx(np.pi / 2, abs=1e-4)


def test_gap_too_large():
    x = NavState(1.0, np.zeros(3), np.zeros(3), geom.IDENTITY)
    u = ImuSample(1.0, GRAVITY, np.zeros(3))
    with pytest.raises(models.GapTooLargeError, match="t=1.000000"):
        models.propagate(x, u, 0.2)
    with pytest.raises(ValueError):
        models.propagate(x, u, -0.01)


def test_quaternion_renormalized(rng):
    x = random_state(rng)
    u = ImuSample(0.0, rng.standard_normal(3), 3.0 * rng.standard_normal(3))
    y = models.propagate(x, u, 0.1)
    assert np.linalg.norm(y.q) == pytest.approx(1.0, abs=1e-12)


def test_predict_range_examples():
    x = NavState(0.0, np.zeros(3), np.zeros(3), geom.IDENTITY, p_iu=np.array([0.0, 0.2, 0.0]))
    assert models.predict_range(x, [0.0, 1.2, 0.0]) == pytest.approx(1.0, abs=1e-15)
    assert models.predict_range(x, x.radio_position()) == 0.0


def test_predict_range_brute_force(rng):
    for _ in range(50):
        x = random_state(rng)
        a = rng.uniform(-5, 5, 3)
        w, qx, qy, qz = x.q
        # world-frame radio via explicit sandwich product
        pu = geom._mul_raw(geom._mul_raw(x.q, np.concatenate([[0.0], x.p_iu])), geom.conj(x.q))[1:]
        expect = np.sqrt(np.sum((a - (pu + x.p)) ** 2))
        assert models.predict_range(x, a) == pytest.approx(expect, rel=1e-12)


def test_predict_range_rigid_invariance(rng):
    x = random_state(rng)
    a = rng.uniform(-5, 5, 3)
    qT = geom.normalize(rng.standard_normal(4))
    RT = geom.quat_to_rot(qT)
    tT = rng.standard_normal(3)
    xT = x.replace(p=RT @ x.p + tT, q=geom.quat_mul(qT, x.q))
    assert models.predict_range(xT, RT @ a + tT) == pytest.approx(models.predict_range(x, a), rel=1e-12)


def test_delayed_zero_offset_is_exact(rng):
    x = random_state(rng)
    u = ImuSample(0.0, rng.standard_normal(3), rng.standard_normal(3))
    a = rng.uniform(-5, 5, 3)
    assert models.predict_range_delayed(x, u, a, 0.0) == models.predict_range(x, a)


def test_delayed_static_invariance(rng):
    x = random_state(rng).replace(v=np.zeros(3))
    u = hover_inputs(x)
    a = rng.uniform(-5, 5, 3)
    r0 = models.predict_range(x, a)
    for td in (-0.05, 0.01, 0.1):
        assert models.predict_range_delayed(x, u, a, td) == pytest.approx(r0, abs=1e-12)


def test_delayed_fine_integration_oracle():
    x = NavState(0.0, np.array([0.3, -0.2, 1.0]), np.array([0.4, 0.1, 0.0]), geom.IDENTITY,
                 p_iu=np.array([0.0, 0.2, 0.0]))
    u = ImuSample(0.0, GRAVITY + [0.3, 0.0, 0.1], np.array([0.2, -0.1, 2.0]))
    a = np.array([3.0, 2.0, 2.5])
    td = 0.01
    ref = models.predict_range(fine_propagate(x, u, td, 1000), a)
    assert models.predict_range_delayed(x, u, a, td) == pytest.approx(ref, abs=1e-6)
    # backward propagation uses the same model
    ref = models.predict_range(fine_propagate(x, u, -td, 1000), a)
    assert models.predict_range_delayed(x, u, a, -td) == pytest.approx(ref, abs=1e-6)


def test_delayed_sensitive_to_offset_under_rotation():
    x = NavState(0.0, np.zeros(3), np.zeros(3), geom.IDENTITY, p_iu=np.array([0.0, 0.2, 0.0]))
    u = ImuSample(0.0, GRAVITY, np.array([0.0, 0.0, 1.0]))
    a = np.array([2.0, 0.0, 0.0])
    h = 1e-4
    d = (models.predict_range_delayed(x, u, a, 0.01 + h) - models.predict_range_delayed(x, u, a, 0.01 - h)) / (2 * h)
    assert abs(d) > 1e-3


def test_control_affine_matches_propagation(rng):
    for _ in range(20):
        x = random_state(rng)
        u = ImuSample(0.0, rng.standard_normal(3) + GRAVITY, rng.standard_normal(3))
        f0, f1, f2 = models.control_affine_fields(x)
        xdot = f0 + f1 @ u.a_m + f2 @ u.w_m
        dt = 1e-6
        xp = models.integrate(x, u, dt)[0]
        xm = models.integrate(x, u, -dt)[0]
        fd = np.concatenate([(xp.p - xm.p), (xp.v - xm.v), (xp.q - xm.q)]) / (2 * dt)
        np.testing.assert_allclose(xdot[:10], fd, atol=1e-6)
        np.testing.assert_array_equal(xdot[10:], 0.0)


def test_control_affine_trivial_blocks():
    x = NavState(0.0, np.zeros(3), np.zeros(3), geom.IDENTITY)
    f0, f1, f2 = models.control_affine_fields(x)
    np.testing.assert_array_equal(f0[3:6], -GRAVITY)
    assert f1.shape == (19, 3) and f2.shape == (19, 3)
    # the fields never see the inputs, so re-evaluation is bitwise stable
    g0, g1, g2 = models.control_affine_fields(x)
    assert (f0 == g0).all() and (f1 == g1).all() and (f2 == g2).all()


@given(st.floats(0.0, 1.0))
def test_split_propagation(frac):
    rng = np.random.default_rng(3)
    x = random_state(rng)
    u = ImuSample(0.0, rng.standard_normal(3) + GRAVITY, rng.standard_normal(3))
    dt = 1e-3
    whole = models.propagate(x, u, dt)
    mid = models.propagate(x, u, frac * dt)
    split = models.propagate(mid, u, dt - frac * dt)
    np.testing.assert_allclose(split.as_vector(), whole.as_vector(), atol=1e-8)


def test_first_order_hold_endpoint(rng):
    # linearly varying input: FOH step is exact for the velocity of a straight-line accel ramp
    x = NavState(0.0, np.zeros(3), np.zeros(3), geom.IDENTITY)
    u0 = ImuSample(0.0, GRAVITY + [0.0, 0.0, 0.0], np.zeros(3))
    u1 = ImuSample(0.01, GRAVITY + [1.0, 0.0, 0.0], np.zeros(3))
    y = models.propagate(x, u0, 0.01, u_end=u1)
    assert y.v[0] == pytest.approx(0.5 * 0.01, rel=1e-12)
    assert y.p[0] == pytest.approx(0.01**2 / 6, rel=1e-9)


def test_inject_state_difference_inverse(rng):
    x = random_state(rng)
    dx = 1e-3 * rng.standard_normal(19)
    # small-angle quaternion vs exact log differ at O(|dtheta|^3)
    np.testing.assert_allclose(models.state_difference(models.inject(x, dx), x), dx, atol=1e-8)


def test_noise_config_validation():
    with pytest.raises(ValueError):
        NoiseConfig(Q_a=-np.eye(3))
    with pytest.raises(ValueError):
        NoiseConfig(Q_r=-1.0)
    n = NoiseConfig(Q_a=0.1, Q_w=[[1.0, 2.0, 3.0]])
    np.testing.assert_array_equal(n.Q_a, 0.1 * np.eye(3))
    np.testing.assert_array_equal(n.Q_w, np.diag([1.0, 2.0, 3.0]))
    z = NoiseConfig.zero()
    assert z.Q_r == 0.0 and not z.Q_a.any()


def test_midpoint_inputs_exact_for_cubics():
    t = np.array([0.0, 0.01, 0.021, 0.03, 0.042, 0.05])
    f = lambda s: np.array([1 + 2 * s - 3 * s**2 + 40 * s**3, -s**3, 0.5])
    imu = [ImuSample(tk, f(tk), 2 * f(tk)) for tk in t]
    mids = models.midpoint_inputs(imu)
    assert len(mids) == len(t) - 1
    for m in mids:
        np.testing.assert_allclose(m.a_m, f(m.t), atol=1e-13)
        np.testing.assert_allclose(m.w_m, 2 * f(m.t), atol=1e-13)


def test_midpoint_inputs_short_stream():
    imu = [ImuSample(0.0, np.zeros(3), np.zeros(3)), ImuSample(0.01, np.ones(3), np.ones(3))]
    m = models.midpoint_inputs(imu)
    np.testing.assert_array_equal(m[0].a_m, 0.5)


def test_dead_reckon_hover():
    x = NavState(2.0, np.ones(3), np.zeros(3), geom.IDENTITY)
    imu = [ImuSample(k * 0.01, GRAVITY.copy(), np.zeros(3)) for k in range(50)]
    out = models.dead_reckon(x, imu)
    assert len(out) == 50 and out[0].t == 0.0
    np.testing.assert_allclose(out[-1].p, 1.0, atol=1e-13)
