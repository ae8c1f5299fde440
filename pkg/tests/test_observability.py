import numpy as np
import pytest

from uwbcal import geom, observability as obs, sim
from uwbcal.models import GRAVITY, IDX_TD, ImuSample, NavState, NoiseConfig

ANCHORS = {1: np.array([-4.0, -3.5, 0.3]), 2: np.array([4.0, -3.5, 2.7]), 3: np.array([4.0, 3.5, 0.4]),
           4: np.array([-4.0, 3.5, 2.6])}


def const_imu(n=500, rate=100.0, a=GRAVITY, w=(0.0, 0.0, 0.0)):
    return [ImuSample(k / rate, np.array(a, float), np.array(w, float)) for k in range(n)]


def scenario(piece, p_iu=(0.1, 0.15, 0.0866), anchors=ANCHORS, duration=12.0, radio_frame=False):
    return sim.SimScenario("unit", sim.Trajectory([piece], radio_frame), anchors, p_iu, 0.02,
                           noise=NoiseConfig.zero(), duration=duration)


EXCITED = sim.MotionPiece.lissajous(1e9, [0, 0, 1.5], [2.0, 1.5, 0.6], [0.15, 0.2, 0.25], [0, np.pi / 2, 0],
                                    euler_amp=[0.3, 0.3, 0.8], euler_freq=[0.3, 0.25, 0.1])


def test_constant_samples_no_excitation():
    rep = obs.check_excitation(const_imu())
    assert not rep.t2 and not rep.c3 and not rep.c4
    assert not rep.accel_excited.any() and not rep.gyro_excited.any()


def test_single_axis_accel():
    t = np.arange(1000) / 100.0
    imu = [ImuSample(tk, GRAVITY + [np.sin(2 * np.pi * 0.5 * tk), 0.0, 0.0], np.zeros(3)) for tk in t]
    rep = obs.check_excitation(imu, q0=geom.IDENTITY)
    assert rep.t2 and not rep.c3
    np.testing.assert_array_equal(rep.accel_excited, [True, False, False])


def test_pure_rotation_is_not_accel_excitation():
    scn = scenario(sim.MotionPiece.lissajous(1e9, [0, 0, 1.5], [0, 0, 0], [0, 0, 0], euler_amp=[0.3, 0.3, 0.8],
                                             euler_freq=[0.3, 0.25, 0.2]), p_iu=(0, 0, 0))
    data = sim.generate(scn)
    x0 = sim.true_initial_state(scn, data)
    rep = obs.check_excitation(data.imu, q0=x0.q, b_a=x0.b_a, b_w=x0.b_w)
    assert not rep.t2 and rep.c4


def test_excitation_errors():
    with pytest.raises(ValueError, match="empty"):
        obs.check_excitation([])
    with pytest.raises(ValueError, match="1 s"):
        obs.check_excitation(const_imu(50))


def test_two_anchors_violate_c1():
    g = obs.check_geometry({1: [0, 0, 0], 2: [1, 0, 0]}, np.random.default_rng(0).normal(size=(20, 3)))
    assert not g.c1 and g.collinear and g.coplanar is None
    assert g.c2 is None


def test_collinear_anchors_violate_c1():
    g = obs.check_geometry({i: [float(i), 0, 0] for i in range(5)}, np.ones((5, 3)))
    assert g.anchor_rank == 1 and not g.c1


def test_coplanar_radio_rank_two():
    h = 1.5
    anchors = {1: [0, 0, h], 2: [4, 0, h], 3: [0, 4, h]}
    rng = np.random.default_rng(1)
    radio = np.column_stack([rng.uniform(-2, 2, 50), rng.uniform(-2, 2, 50), np.full(50, h)])
    g = obs.check_geometry(anchors, radio)
    assert g.c1 and g.coplanar and not g.c2
    assert g.triples[0].min_rank == 2


def test_off_plane_radio_rank_three():
    anchors = {1: [0, 0, 0], 2: [4, 0, 0], 3: [0, 4, 0]}
    g = obs.check_geometry(anchors, [[1.0, 1.0, 1.0], [2.0, 0.5, 1.0]])
    assert g.c2 and g.triples[0].min_rank == 3


def test_radio_at_anchor_violates_t1():
    imu = const_imu()
    x = NavState(0.0, np.array(ANCHORS[1]), np.zeros(3), geom.IDENTITY)
    v = obs.check_identifiability(x, imu, ANCHORS)
    assert not v.t1 and not v.identifiable
    assert v.min_anchor_distance == pytest.approx(0.0, abs=1e-12)


def test_pure_rotation_zero_lever_not_identifiable():
    scn = scenario(sim.MotionPiece.lissajous(1e9, [0, 0, 1.5], [0, 0, 0], [0, 0, 0], euler_amp=[0.3, 0.3, 0.8],
                                             euler_freq=[0.3, 0.25, 0.2]), p_iu=(0, 0, 0))
    data = sim.generate(scn)
    x0 = sim.true_initial_state(scn, data)
    v = obs.check_identifiability(x0, data.imu, scn.anchors)
    assert v.t1 and not v.t2 and not v.t3 and not v.identifiable
    # the ranges carry no information on the offset at all
    r = [z.r for z in data.ranges if z.anchor_id == 1]
    assert np.ptp(r) < 1e-9
    gram = obs.empirical_gramian(x0, data.imu, scn.anchors, horizon=3.0)
    # without a lever arm yaw is blind as well; the offset is left with only
    # integration-error level sensitivity
    assert gram.rank == 18
    assert abs(gram.null_basis[8, 0]) > 0.99
    assert np.sqrt(gram.W[IDX_TD, IDX_TD]) < 1e-3 * gram.singular_values[0]


def test_excited_distant_anchor_identifiable():
    scn = scenario(EXCITED)
    data = sim.generate(scn)
    x0 = sim.true_initial_state(scn, data)
    v = obs.check_identifiability(x0, data.imu, scn.anchors)
    assert v.t1 and v.t2 and v.t3 and v.identifiable


@pytest.fixture(scope="module")
def excited_gramian():
    scn = scenario(EXCITED, duration=4.0)
    data = sim.generate(scn)
    x0 = sim.true_initial_state(scn, data)
    return scn, data, x0, obs.empirical_gramian(x0, data.imu, scn.anchors, horizon=3.0)


def test_gramian_symmetric_psd(excited_gramian):
    W = excited_gramian[3].W
    assert np.array_equal(W, W.T)
    assert np.linalg.eigvalsh(W).min() >= -1e-12 * np.abs(W).max()


def test_gramian_full_rank_when_excited(excited_gramian):
    g = excited_gramian[3]
    assert g.rank == 19 and g.rank_xtilde == 18 and g.full_rank
    assert g.null_basis.shape == (19, 0)


def test_gramian_rigid_invariance(excited_gramian):
    scn, data, x0, g = excited_gramian
    # yaw rotation plus translation keeps gravity and the body-frame IMU stream unchanged
    qT = geom.axis_angle_quat([0, 0, 1], 0.7)
    RT = geom.quat_to_rot(qT)
    tT = np.array([1.0, -2.0, 0.5])
    xT = x0.replace(p=RT @ x0.p + tT, v=RT @ x0.v, q=geom.quat_mul(qT, x0.q))
    aT = {k: RT @ a + tT for k, a in scn.anchors.items()}
    gT = obs.empirical_gramian(xT, data.imu, aT, horizon=3.0)
    assert gT.rank == g.rank
    # the position block of the Gramian rotates with the world frame
    np.testing.assert_allclose(gT.W[:3, :3], RT @ g.W[:3, :3] @ RT.T, rtol=1e-6, atol=1e-12 * np.abs(g.W).max())


def test_gramian_degenerate_horizon(excited_gramian):
    scn, data, x0, _ = excited_gramian
    with pytest.raises(ValueError, match="degenerate horizon"):
        obs.empirical_gramian(x0, data.imu, scn.anchors, horizon=0.2)


def test_gramian_two_anchors_rank_deficient():
    two = {1: ANCHORS[1], 2: ANCHORS[2]}
    scn = scenario(EXCITED, anchors=two, duration=4.0)
    data = sim.generate(scn)
    x0 = sim.true_initial_state(scn, data)
    g = obs.empirical_gramian(x0, data.imu, two, horizon=3.0)
    assert g.rank < 19


def test_weak_direction_fallback_unit_norm(excited_gramian):
    d = obs.weak_direction(excited_gramian[3], slice(0, 3))
    assert np.linalg.norm(d) == pytest.approx(1.0)


def test_diagnosis_failed_list():
    scn = scenario(sim.MotionPiece.static(1e9, [0.0, 0.0, 1.0]), duration=6.0)
    d = sim.diagnose_scenario(scn, gramian_horizon=None)
    assert d.gramian is None
    assert set(d.failed()) == {"C3", "C4", "T2|T3"}
    assert "gramian_full_rank" not in d.conditions()
