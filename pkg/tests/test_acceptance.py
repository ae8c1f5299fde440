"""Acceptance criteria at their stated tolerances.

Each test prints one ``[criterion N] PASS|FAIL`` line (plus optional info
lines) straight to the terminal, then asserts.
"""

import time

import numpy as np
import pytest

from uwbcal import anchor_calib as ac
from uwbcal import observability as obs
from uwbcal import sim
from uwbcal.models import IDX_TD, NoiseConfig, SL_PIU

from .jacobians import measurement_rel_error, random_case, transition_rel_error


@pytest.fixture
def say(capsys):
    def _say(n, ok, detail, info=()):
        with capsys.disabled():
            print(f"\n[criterion {n}] {'PASS' if ok else 'FAIL'}: {detail}")
            for line in info:
                print(f"[criterion {n}]   info: {line}")
    return _say


@pytest.fixture(scope="module")
def trn():
    return sim.run_scenario(sim.preset("TR-N"))


# ---------------------------------------------------------------- 1
def test_criterion_1_tr_n(trn, say):
    o = trn
    ok = o.pos_rmse <= 0.10 and o.rot_rmse <= 0.06 and o.p_iu_err <= 0.02 and o.td_err <= 0.003 and o.runtime < 30
    say(1, ok, f"TR-N pos {o.pos_rmse:.4f} m (<=0.10), rot {o.rot_rmse:.4f} rad (<=0.06), "
               f"p_iu {100 * o.p_iu_err:.2f} cm (<=2), t_d {1000 * o.td_err:.2f} ms (<=3), runtime {o.runtime:.1f} s (<30)")
    assert ok


# ---------------------------------------------------------------- 2
def test_criterion_2_degenerate_ordering(trn, say):
    c1 = sim.run_scenario(sim.preset("TR-C1"))
    c3 = sim.run_scenario(sim.preset("TR-C3"))
    c2 = [sim.run_scenario(sim.preset("TR-C2", seed=s)) for s in (1, 2, 3)]
    r1 = c1.pos_rmse / trn.pos_rmse
    dp = np.concatenate([o.errors.dp for o in c2])
    rms = np.sqrt(np.mean(dp**2, axis=0))
    zx, zy = rms[2] / rms[0], rms[2] / rms[1]
    yaw3 = lambda o: 3.0 * o.result.sigma[-1, 8]  # noqa: E731
    r3 = yaw3(c3) / yaw3(trn)
    runs = [trn, c1, c3, *c2]
    slowest = max(o.runtime for o in runs)
    ok = r1 >= 3 and zx >= 3 and zy >= 3 and r3 >= 5 and slowest < 30
    seed1 = np.sqrt(np.mean(c2[0].errors.dp ** 2, axis=0))
    say(2, ok, f"TR-C1/TR-N pos {r1:.1f}x (>=3); TR-C2 z/x {zx:.2f}x, z/y {zy:.2f}x (>=3, seeds 1-3 pooled); "
               f"TR-C3/TR-N final yaw 3sigma {r3:.1f}x (>=5); slowest run {slowest:.1f} s (<30)",
        [f"TR-C2 seed 1 alone: z/x {seed1[2] / seed1[0]:.2f}x, z/y {seed1[2] / seed1[1]:.2f}x"])
    assert ok


# ---------------------------------------------------------------- 3
def test_criterion_3_monte_carlo(say):
    base = sim.preset("MC")
    t0 = time.perf_counter()
    mc = sim.monte_carlo(base, 20, (-0.5, 0.5), (-0.025, 0.025))
    wall = time.perf_counter() - t0
    tab = mc.table()
    ok = (mc.n_failed == 0 and len(mc.runs) >= 20 and tab["p_iu_err_cm"] <= 2.0 and tab["td_err_ms"] <= 3.0
          and tab["pos_rmse_m"] <= 0.06 and wall < 600)
    say(3, ok, f"{len(mc.runs)} runs, {mc.n_failed} failed: p_iu {tab['p_iu_err_cm']:.2f} cm (<=2), "
               f"t_d {tab['td_err_ms']:.2f} ms (<=3), pos {tab['pos_rmse_m']:.4f} m (<=0.06), {wall:.0f} s (<600)",
        [f"rot {tab['rot_rmse_rad']:.4f} rad"])
    assert ok


# ---------------------------------------------------------------- 4
def test_criterion_4_time_varying_offset(say):
    scn = sim.preset("TD-VAR")
    r = sim.run_scenario(scn).result
    t_step = scn.td.t_change
    err = r.t_d - scn.td(r.t)
    s3 = 3.0 * r.sigma[:, IDX_TD]
    after = r.t >= t_step + 30.0
    inside = np.abs(err[after]) <= s3[after]
    settled = r.t[(r.t > t_step) & (np.abs(err) <= s3)]
    ok = bool(inside.all())
    say(4, ok, f"offset step {1000 * scn.td.td0:g} -> {1000 * scn.td.td1:g} ms at {t_step:g} s: "
               f"{100 * inside.mean():.1f}% of estimates inside 3 sigma from {t_step + 30:g} s on (need 100%)",
        [f"first inside 3 sigma at {settled[0]:.2f} s" if len(settled) else "never inside 3 sigma",
         f"max |error| after {t_step + 30:g} s: {1000 * np.abs(err[after]).max():.2f} ms, "
         f"3 sigma at end {1000 * s3[-1]:.2f} ms"])
    assert ok


# ---------------------------------------------------------------- 5
def test_criterion_5_jacobian_oracles(say):
    rng = np.random.default_rng(20240501)
    ef, eh = [], []
    for _ in range(100):
        x, u0, u1, a, tau = random_case(rng)
        ef.append(transition_rel_error(x, u0, u1, dt=0.01))
        eh.append(measurement_rel_error(x, u0, a, tau)[0])
    ok = max(ef) <= 1e-5 and max(eh) <= 1e-4
    say(5, ok, f"100 random states: max F rel. error {max(ef):.2e} (<=1e-5), max H rel. error {max(eh):.2e} (<=1e-4)")
    assert ok


# ---------------------------------------------------------------- 6
def test_criterion_6_consistency(say):
    pool = {}
    t_conv = 30.0
    for seed in range(1, 11):
        scn = sim.preset("TR-N", seed=seed)
        out = sim.run_scenario(scn)
        r, e = out.result, out.errors
        names, err, env = e.channels()
        m = e.t >= t_conv
        for i, n in enumerate(names):
            pool.setdefault(n, []).append(np.abs(err[m, i]) <= env[m, i])
        mm = r.t >= t_conv
        for k, ax in enumerate("xyz"):
            pool.setdefault(f"p_iu_{ax}", []).append(
                np.abs(r.p_iu[mm, k] - scn.p_iu[k]) <= 3.0 * r.sigma[mm, 15 + k])
        pool.setdefault("t_d", []).append(np.abs(r.t_d[mm] - scn.td(r.t[mm])) <= 3.0 * r.sigma[mm, IDX_TD])
    frac = {k: float(np.concatenate(v).mean()) for k, v in pool.items()}
    worst = min(frac, key=frac.get)
    ok = all(v >= 0.95 for v in frac.values())
    say(6, ok, f"10 TR-N seeds pooled, t >= {t_conv:g} s: worst channel {worst} {100 * frac[worst]:.1f}% (>=95%)",
        [", ".join(f"{k} {100 * v:.1f}%" for k, v in frac.items())])
    assert ok


# ---------------------------------------------------------------- 7
def _angle_to_z(d):
    return float(np.degrees(np.arccos(min(1.0, abs(d[2]) / np.linalg.norm(d)))))


def test_criterion_7_observability(say):
    diag = {n: sim.diagnose_scenario(sim.preset(n)) for n in ("TR-N", "TR-C1", "TR-C2", "TR-C3")}
    gN, g2, g3 = diag["TR-N"].gramian, diag["TR-C2"].gramian, diag["TR-C3"].gramian
    w2 = obs.weak_direction(g2, slice(0, 3))
    w3 = obs.weak_direction(g3, slice(6, 9))
    ang2 = _angle_to_z(w2)
    yaw_dom = abs(w3[2]) > max(abs(w3[0]), abs(w3[1]))

    geo = lambda n: {c for c in diag[n].failed() if c in ("C1", "C2", "C3", "C4")}  # noqa: E731
    flags_ok = (not diag["TR-N"].failed() and geo("TR-C1") == {"C1"} and geo("TR-C2") == {"C2"}
                and geo("TR-C3") == {"C3", "C4"})

    piece = sim.MotionPiece.lissajous(1e9, [0, 0, 1.5], [0, 0, 0], [0, 0, 0], euler_amp=[0.3, 0.3, 0.8],
                                      euler_freq=[0.3, 0.25, 0.2])
    rot = sim.SimScenario("pure-rotation", sim.Trajectory([piece]), sim.preset("TR-N").anchors, [0, 0, 0], 0.025,
                          noise=NoiseConfig.zero(), duration=30.0)
    data = sim.generate(rot)
    verdict = obs.check_identifiability(sim.true_initial_state(rot, data), data.imu, rot.anchors)

    ok = (gN.rank == 19 and gN.rank_xtilde == 18 and g2.rank < 19 and ang2 <= 15.0 and g3.rank < 19 and yaw_dom
          and not verdict.identifiable and flags_ok)
    say(7, ok, f"TR-N Gramian rank {gN.rank}/19 (x~ {gN.rank_xtilde}/18); TR-C2 rank {g2.rank}, weak position "
               f"direction {ang2:.1f} deg from z (<=15); TR-C3 rank {g3.rank}, weak attitude direction "
               f"{np.round(w3, 3).tolist()} (yaw dominated: {yaw_dom}); pure rotation with p_iu = 0 identifiable: "
               f"{verdict.identifiable}",
        [f"{n} flags {diag[n].failed() or 'none'}" for n in diag])
    assert ok


# ---------------------------------------------------------------- 8
def test_criterion_8_sensitivity(say):
    base = sim.preset("SENS")
    d = base.p_iu / np.linalg.norm(base.p_iu)
    scn = base.replace(p_iu=0.2 * d)
    data = sim.generate(scn)
    td = scn.td.td0
    exact = sim.fixed_offset_run(scn, 0.2 * d, td, data)
    spatial = sim.fixed_offset_run(scn, 0.22 * d, td, data)
    temporal = sim.fixed_offset_run(scn, 0.2 * d, td + 0.03, data)
    online = sim.run_scenario(scn, data=data)
    rp = spatial.pos_rmse / exact.pos_rmse
    rr = temporal.rot_rmse / exact.rot_rmse
    ok = rp >= 1.10 and rr >= 1.20
    say(8, ok, f"0.2 m baseline, calibration off: 2 cm lever-arm error raises position RMSE {100 * (rp - 1):+.0f}% "
               f"(>= +10%), 30 ms offset error raises rotation RMSE {100 * (rr - 1):+.0f}% (>= +20%), both relative to "
               f"the run with exact offsets",
        [f"exact offsets: pos {exact.pos_rmse:.4f} m, rot {exact.rot_rmse:.4f} rad; online calibration: "
         f"pos {online.pos_rmse:.4f} m, rot {online.rot_rmse:.4f} rad",
         f"relative to the online-calibrated run: lever-arm case pos {spatial.pos_rmse / online.pos_rmse:.2f}x, "
         f"offset case rot {temporal.rot_rmse / online.rot_rmse:.2f}x"])
    assert ok


# ---------------------------------------------------------------- 9
def _crlb_rms(anchors, gauge, sigma):
    """Cramer-Rao bound on the gauge-frame RMS position error for per-pair sigma."""
    g = ac.gauge_frame(anchors, gauge)
    ids = sorted(g)
    free = []
    for a in ids:
        if a == gauge.origin_id:
            continue
        dims = [0] if a == gauge.x_axis_id else [0, 1] if a == gauge.plane_id else [0, 1, 2]
        free += [(a, k) for k in dims]
    col = {f: i for i, f in enumerate(free)}
    rows = []
    for i in range(len(ids)):
        for j in range(i + 1, len(ids)):
            u = g[ids[i]] - g[ids[j]]
            u = u / np.linalg.norm(u)
            row = np.zeros(len(free))
            for k in range(3):
                if (ids[i], k) in col:
                    row[col[(ids[i], k)]] += u[k]
                if (ids[j], k) in col:
                    row[col[(ids[j], k)]] -= u[k]
            rows.append(row)
    J = np.array(rows) / sigma
    return float(np.sqrt(np.trace(np.linalg.inv(J.T @ J)) / len(ids)))


def test_criterion_9_anchor_self_calibration(say):
    anchors = sim.preset("TR-N").anchors
    gauge = ac.Gauge.default(anchors)
    exact = ac.solve_constellation(ac.InterAnchorRanges.from_positions(anchors), gauge)
    e0 = ac.gauge_rms(exact.anchors, anchors, gauge)
    sigma, n_samples = 0.02, 10
    errs, errs1 = [], []
    for seed in range(50):
        t = ac.InterAnchorRanges.from_positions(anchors, sigma, n_samples=n_samples, rng=seed)
        errs.append(ac.gauge_rms(ac.solve_constellation(t, gauge).anchors, anchors, gauge))
        t1 = ac.InterAnchorRanges.from_positions(anchors, sigma, n_samples=1, rng=1000 + seed)
        errs1.append(ac.gauge_rms(ac.solve_constellation(t1, gauge).anchors, anchors, gauge))
    rms = float(np.sqrt(np.mean(np.square(errs))))
    rms1 = float(np.sqrt(np.mean(np.square(errs1))))
    ok = e0 < 1e-9 and rms <= 0.03
    say(9, ok, f"exact round trip {e0:.1e} m (<1e-9); sigma = 2 cm per sample, {n_samples} samples per pair: "
               f"RMS anchor error {100 * rms:.2f} cm over 50 seeds (<=3)",
        [f"single sample per pair: RMS {100 * rms1:.2f} cm, lower bound {100 * _crlb_rms(anchors, gauge, sigma):.2f} cm",
         f"averaged table lower bound {100 * _crlb_rms(anchors, gauge, sigma / np.sqrt(n_samples)):.2f} cm"])
    assert ok
