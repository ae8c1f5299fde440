import numpy as np
import pytest

from uwbcal import geom, metrics
from uwbcal.metrics import PoseSeries


def series(t, p, euler):
    return PoseSeries(t, p, geom.euler_to_quat(np.asarray(euler)))


def random_series(rng, n=200):
    t = np.linspace(0, 10, n)
    e = np.column_stack([rng.uniform(-0.5, 0.5, n), rng.uniform(-0.5, 0.5, n), rng.uniform(-3, 3, n)])
    return series(t, rng.normal(0, 2, (n, 3)), e)


def test_rmse_identical_is_zero(rng):
    s = random_series(rng)
    assert metrics.position_rmse(s, s) == 0.0
    assert metrics.rotation_rmse(s, s) == pytest.approx(0.0, abs=1e-12)


def test_constant_position_offset(rng):
    s = random_series(rng)
    e = PoseSeries(s.t, s.p + [0.3, 0.0, 0.0], s.q)
    assert metrics.position_rmse(s, e) == pytest.approx(0.3, abs=1e-12)


def test_constant_yaw_error():
    t = np.linspace(0, 1, 50)
    eul = np.column_stack([np.full(50, 0.1), np.full(50, -0.2), np.linspace(-1, 1, 50)])
    a = series(t, np.zeros((50, 3)), eul)
    b = series(t, np.zeros((50, 3)), eul + [0.0, 0.0, 0.1])
    assert metrics.rotation_rmse(a, b) == pytest.approx(0.1, abs=1e-9)


def test_yaw_wrap():
    t = np.array([0.0, 1.0])
    a = series(t, np.zeros((2, 3)), [[0, 0, np.pi - 0.01]] * 2)
    b = series(t, np.zeros((2, 3)), [[0, 0, -np.pi + 0.01]] * 2)
    assert metrics.rotation_rmse(a, b) == pytest.approx(0.02, abs=1e-9)


def test_rmse_brute_force(rng):
    # same timestamps, so no interpolation enters the reference computation
    a, b = random_series(rng), random_series(rng)
    b = PoseSeries(a.t, b.p, b.q)
    ref_p = np.sqrt(np.mean([np.sum((b.p[k] - a.p[k]) ** 2) for k in range(len(a))]))
    assert metrics.position_rmse(a, b) == pytest.approx(ref_p, rel=1e-12)
    acc = 0.0
    for k in range(len(a)):
        d = geom.quat_to_euler(b.q[k]) - geom.quat_to_euler(a.q[k])
        d = (d + np.pi) % (2 * np.pi) - np.pi
        acc += d @ d
    assert metrics.rotation_rmse(a, b) == pytest.approx(np.sqrt(acc / len(a)), rel=1e-9)


def test_no_overlap():
    a = series([0.0, 1.0], np.zeros((2, 3)), np.zeros((2, 3)))
    b = series([2.0, 3.0], np.zeros((2, 3)), np.zeros((2, 3)))
    with pytest.raises(ValueError, match="overlap"):
        metrics.position_rmse(a, b)


def test_interpolation_on_truth_grid():
    t = np.array([0.0, 1.0, 2.0])
    truth = series(t, [[0, 0, 0], [1, 0, 0], [2, 0, 0]], np.zeros((3, 3)))
    est = series([0.5, 1.5], [[0.5, 0, 0], [1.5, 0, 0]], np.zeros((2, 3)))
    assert metrics.position_rmse(truth, est) == pytest.approx(0.0, abs=1e-15)


def test_consistency_zero_errors(rng):
    s = random_series(rng)
    err = metrics.align(s, s, P_pos_diag=np.full((len(s), 3), 0.01), P_theta=np.tile(1e-4 * np.eye(3), (len(s), 1, 1)))
    rep = metrics.consistency_report(err)
    assert rep.ok
    assert all(v == 1.0 for v in rep.fractions.values())
    assert set(rep.fractions) == {"x", "y", "z", "roll", "pitch", "yaw"}


def test_consistency_gaussian_quantile(rng):
    n = 20000
    frac = metrics.scalar_consistency(rng.normal(0, 0.5, n), np.full(n, 1.5))
    p = 0.9973
    assert abs(frac - p) <= 4 * np.sqrt(p * (1 - p) / n)


def test_consistency_flags_channel():
    n = 100
    errs = metrics.AlignedErrorSeries(
        np.arange(n, dtype=float), np.column_stack([np.zeros(n), np.zeros(n), np.ones(n)]),
        np.zeros((n, 3)), np.full((n, 3), 0.5), np.full((n, 3), 0.5))
    rep = metrics.consistency_report(errs)
    assert rep.flagged == ["z"] and not rep.ok


def test_euler_sigma_yaw_only():
    q = geom.euler_to_quat([[0.0, 0.0, 0.7]])
    s = metrics.euler_sigma(q, np.diag([0.0, 0.0, 0.01])[None])
    np.testing.assert_allclose(s[0], [0.0, 0.0, 0.1], atol=1e-8)


def test_allan_white_noise():
    rng = np.random.default_rng(0)
    rate = 100.0
    x = rng.standard_normal(200_000)
    taus, adev = metrics.allan_deviation(x, rate)
    sel = (taus >= 0.1) & (taus <= 10.0)
    assert sel.sum() > 10
    ref = 1.0 / np.sqrt(rate * taus[sel])
    assert np.max(np.abs(adev[sel] / ref - 1.0)) < 0.10
    fit = metrics.fit_allan(taus, adev)
    assert fit["N"] == pytest.approx(0.1, rel=0.05)


def test_allan_random_walk_slope():
    rng = np.random.default_rng(1)
    x = np.cumsum(rng.standard_normal(200_000)) * 1e-3
    taus, adev = metrics.allan_deviation(x, 100.0)
    sel = (taus >= 1.0) & (taus <= 100.0)
    assert metrics.loglog_slope(taus[sel], adev[sel]) == pytest.approx(0.5, rel=0.10)


def test_allan_constant_series():
    taus, adev = metrics.allan_deviation(np.full(5000, 3.2), 100.0)
    np.testing.assert_allclose(adev, 0.0, atol=1e-10)


def test_allan_too_short():
    with pytest.raises(ValueError, match="1000"):
        metrics.allan_deviation(np.zeros(999), 100.0)
