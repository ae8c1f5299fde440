"""Command-line entry point: ``uwbcal <command> [options]``.

Commands
--------
simulate           write truth/imu/ranges/anchors CSV files for a scenario
estimate           run the filter on CSV streams, write estimates and a report
montecarlo         batch of runs with randomized offsets, aggregate table
check              observability / identifiability diagnostics
calibrate-anchors  anchor positions from an inter-anchor distance table
report             render the metric tables of earlier runs

Exit codes: 0 ok, 1 condition-check failure, 2 usage or I/O error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import configparser
import logging
import re
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import anchor_calib, geom, metrics, observability, sim, streams
from .eskf import FilterConfig, NumericalError, StreamOrderError, default_P0, initialize_from_static, run_filter
from .models import IDX_TD, SL_PIU, GapTooLargeError, NavState, NoiseConfig

log = logging.getLogger("uwbcal")

EXIT_OK, EXIT_CHECK, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3

# section -> key -> (type, default, help). An empty default means "take the
# value from the preset".
SCHEMA = {
    "scenario": {
        "preset": ("str", "TR-N", "base scenario: " + ", ".join(sim.PRESET_NAMES)),
        "seed": ("int", "", "RNG seed"),
        "duration": ("float", "", "seconds"),
        "imu_rate": ("float", "", "Hz"),
        "uwb_rate": ("float", "", "Hz"),
        "p_iu": ("vec3", "", "true lever arm, m"),
        "td": ("float", "", "true temporal offset, s"),
        "init_p_iu": ("vec3", "0,0,0", "filter initial lever arm, m"),
        "init_td": ("float", "0", "filter initial temporal offset, s"),
    },
    "noise": {
        "sigma_a": ("float", "0.02", "accel white noise, m/s^2/sqrt(Hz)"),
        "sigma_w": ("float", "0.002", "gyro white noise, rad/s/sqrt(Hz)"),
        "sigma_ba": ("float", "0.0001", "accel bias walk, m/s^2/sqrt(s)"),
        "sigma_bw": ("float", "0.0001", "gyro bias walk, rad/s/sqrt(s)"),
        "sigma_r": ("float", "0.02", "range noise, m"),
        "q_d": ("float", "", "temporal-offset random walk intensity, s^2/s"),
        "gravity": ("float", "9.8", "m/s^2"),
    },
    "filter": {
        "calibrate_spatial": ("bool", "true", "estimate the lever arm online"),
        "calibrate_temporal": ("bool", "true", "estimate the temporal offset online"),
        "td_bound": ("float", "0.5", "clip |t_d| to this bound, s"),
        "imu_gap_max": ("float", "0.1", "largest tolerated IMU gap, s"),
        "p0_p": ("float", "0.1", "initial sigma, position m"),
        "p0_v": ("float", "0.1", "initial sigma, velocity m/s"),
        "p0_tilt": ("float", "0.02", "initial sigma, roll/pitch rad"),
        "p0_yaw": ("float", "0.1", "initial sigma, yaw rad"),
        "p0_ba": ("float", "0.05", "initial sigma, accel bias"),
        "p0_bw": ("float", "0.005", "initial sigma, gyro bias"),
        "p0_piu": ("float", "0.3", "initial sigma, lever arm m"),
        "p0_td": ("float", "0.03", "initial sigma, temporal offset s"),
    },
    "gates": {
        "chi2": ("float", "10.828", "innovation gate on nu^2/S (1 dof, 99.9%)"),
    },
    "init": {
        "method": ("str", "auto", "auto | truth | static | config"),
        "static_window": ("float", "60", "seconds of leading static data"),
        "p0": ("vec3", "0,0,0", "initial position for method=config/static"),
        "v0": ("vec3", "0,0,0", "initial velocity for method=config"),
        "euler0": ("vec3", "0,0,0", "initial roll,pitch,yaw for method=config, rad"),
    },
    "montecarlo": {
        "n_runs": ("int", "", "number of runs"),
        "p_iu_range": ("pair", "", "per-axis lever-arm range, m"),
        "td_range": ("pair", "", "temporal-offset range, s"),
        "workers": ("int", "1", "parallel worker processes"),
    },
    "check": {
        "gramian_horizon": ("float", "10", "seconds; 0 disables the Gramian"),
        "accel_threshold": ("float", "0.05", "m^2/s^4"),
        "gyro_threshold": ("float", "0.01", "rad^2/s^2"),
        "window": ("float", "5", "seconds"),
    },
    "anchors": {
        "origin": ("str", "", "gauge origin anchor id"),
        "x_axis": ("str", "", "anchor on +x"),
        "plane": ("str", "", "anchor in the x-y plane, y > 0"),
        "z_sign": ("int", "1", "sign of z for the first remaining anchor"),
    },
}


class ConfigError(ValueError):
    pass


class UsageError(Exception):
    pass


def dump_defaults() -> str:
    lines = ["# uwbcal configuration; empty values take the preset's setting"]
    for sec, keys in SCHEMA.items():
        lines.append("")
        lines.append(f"[{sec}]")
        for k, (_, default, help_) in keys.items():
            lines.append(f"# {help_}")
            lines.append(f"{k} = {default}")
    return "\n".join(lines) + "\n"


def _key_line(text, section, key):
    sec = None
    for n, line in enumerate(text.splitlines(), start=1):
        m = re.match(r"\s*\[([^\]]+)\]", line)
        if m:
            sec = m.group(1).strip()
        elif sec == section and re.match(rf"\s*{re.escape(key)}\s*[=:]", line):
            return n
    return None


def _convert(kind, raw):
    raw = raw.strip()
    if raw == "":
        return None
    if kind == "str":
        return raw
    if kind == "int":
        return int(raw)
    if kind == "float":
        return float(raw)
    if kind == "bool":
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    parts = [float(p) for p in raw.split(",")]
    n = {"vec3": 3, "pair": 2}[kind]
    if len(parts) != n:
        raise ValueError(f"expected {n} comma-separated numbers, got {len(parts)}")
    return parts


def load_config(path=None) -> dict:
    """Parsed settings as ``{section: {key: value or None}}``."""
    cp = configparser.ConfigParser(interpolation=None)
    text = ""
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"{path}: config file not found")
        text = p.read_text(encoding="utf-8")
        try:
            cp.read_string(text, source=str(path))
        except configparser.Error as exc:
            raise ConfigError(str(exc)) from None
    out = {}
    for sec in cp.sections():
        if sec not in SCHEMA:
            line = next((n for n, ln in enumerate(text.splitlines(), 1) if ln.strip() == f"[{sec}]"), "?")
            raise ConfigError(f"{path}:{line}: unknown section [{sec}]")
        for key in cp[sec]:
            if key not in SCHEMA[sec]:
                raise ConfigError(f"{path}:{_key_line(text, sec, key)}: unknown key [{sec}] {key}")
    for sec, keys in SCHEMA.items():
        out[sec] = {}
        for key, (kind, default, _) in keys.items():
            raw = cp.get(sec, key, fallback=default) if cp.has_section(sec) else default
            try:
                out[sec][key] = _convert(kind, raw)
            except ValueError as exc:
                raise ConfigError(f"{path}:{_key_line(text, sec, key)}: [{sec}] {key}: {exc}") from None
    return out


@dataclass
class RunConfig:
    mode: str
    settings: dict
    seed: int | None = None
    preset: str | None = None
    out: Path | None = None
    paths: dict = field(default_factory=dict)

    def scenario(self, default_preset=None) -> sim.SimScenario:
        sc, nz = self.settings["scenario"], self.settings["noise"]
        name = self.preset or (default_preset if self.settings_is_default("scenario", "preset") else None) or sc["preset"]
        try:
            scn = sim.preset(name)
        except KeyError as exc:
            raise ConfigError(str(exc.args[0])) from None
        kw = {}
        for key in ("duration", "imu_rate", "uwb_rate", "p_iu", "init_p_iu", "init_td"):
            if sc[key] is not None:
                kw[key] = sc[key]
        if sc["td"] is not None:
            kw["td"] = sim.TdProfile(sc["td"])
        seed = self.seed if self.seed is not None else sc["seed"]
        if seed is not None:
            kw["seed"] = int(seed)
        q_d = scn.noise.Q_d if nz["q_d"] is None else nz["q_d"]
        kw["noise"] = NoiseConfig(
            Q_a=nz["sigma_a"] ** 2 * np.eye(3),
            Q_w=nz["sigma_w"] ** 2 * np.eye(3),
            Q_ba=nz["sigma_ba"] ** 2 * np.eye(3),
            Q_bw=nz["sigma_bw"] ** 2 * np.eye(3),
            Q_r=nz["sigma_r"] ** 2,
            Q_d=q_d,
            g_W=np.array([0.0, 0.0, nz["gravity"]]),
        )
        return scn.replace(**kw)

    def settings_is_default(self, sec, key):
        return self.settings[sec][key] == _convert(*SCHEMA[sec][key][:2])

    def filter_config(self, noise: NoiseConfig) -> FilterConfig:
        f = self.settings["filter"]
        P0 = default_P0(f["p0_p"], f["p0_v"], f["p0_tilt"], f["p0_yaw"], f["p0_ba"], f["p0_bw"],
                        f["p0_piu"], f["p0_td"])
        return FilterConfig(
            noise=noise,
            P0=P0,
            gate_chi2=self.settings["gates"]["chi2"],
            imu_gap_max=f["imu_gap_max"],
            td_bound=f["td_bound"],
            calibrate_spatial=f["calibrate_spatial"],
            calibrate_temporal=f["calibrate_temporal"],
        )

    def noise_from_settings(self) -> NoiseConfig:
        nz = self.settings["noise"]
        return NoiseConfig(
            Q_a=nz["sigma_a"] ** 2 * np.eye(3),
            Q_w=nz["sigma_w"] ** 2 * np.eye(3),
            Q_ba=nz["sigma_ba"] ** 2 * np.eye(3),
            Q_bw=nz["sigma_bw"] ** 2 * np.eye(3),
            Q_r=nz["sigma_r"] ** 2,
            Q_d=0.0 if nz["q_d"] is None else nz["q_d"],
            g_W=np.array([0.0, 0.0, nz["gravity"]]),
        )

    def thresholds(self) -> observability.ExcitationThresholds:
        c = self.settings["check"]
        return observability.ExcitationThresholds(c["accel_threshold"], c["gyro_threshold"], c["window"])


def _out_dir(cfg: RunConfig) -> Path:
    out = cfg.out if cfg.out is not None else Path(".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _need(cfg: RunConfig, *names):
    for n in names:
        p = cfg.paths.get(n)
        if p is None:
            raise UsageError(f"--{n} is required for {cfg.mode}")
        if not Path(p).is_file():
            raise UsageError(f"--{n}: file not found: {p}")


def _fmt_bool(v):
    return "n/a" if v is None else ("pass" if v else "FAIL")


def _conditions_text(diag: observability.Diagnosis) -> list:
    lines = []
    for k, v in diag.conditions().items():
        lines.append(f"  {k:<18} {_fmt_bool(v)}")
    g = diag.gramian
    if g is not None:
        lines.append(f"  gramian rank       {g.rank}/19 (error state without t_d: {g.rank_xtilde}/18)")
        lines.append(f"  gramian condition  {g.cond:.3e}")
    return lines


# ---------------------------------------------------------------- simulate
def cmd_simulate(cfg: RunConfig) -> int:
    """Write truth/imu/ranges/anchors CSV files for a scenario."""
    scn = cfg.scenario()
    data = sim.generate(scn)
    out = _out_dir(cfg)
    streams.write_imu(out / "imu.csv", data.imu)
    streams.write_ranges(out / "ranges.csv", data.ranges)
    streams.write_anchors(out / "anchors.csv", scn.anchors)
    streams.write_truth(out / "truth.csv", data.truth.t, data.truth.p, data.truth.q)
    diag = sim.diagnose_scenario(scn, gramian_horizon=None, thresholds=cfg.thresholds())
    print(f"scenario {scn.name}: seed {scn.seed}, {scn.duration:g} s, {len(scn.anchors)} anchors")
    print(f"  {len(data.imu)} IMU samples at {scn.imu_rate:g} Hz, {len(data.ranges)} ranges at {scn.uwb_rate:g} Hz")
    print(f"  lever arm {np.round(scn.p_iu, 4).tolist()} m, temporal offset {1000 * scn.td.td0:g} ms")
    print("conditions:")
    print("\n".join(_conditions_text(diag)))
    print(f"wrote {out}/imu.csv ranges.csv anchors.csv truth.csv")
    return EXIT_OK


# ---------------------------------------------------------------- estimate
def _initial_state(cfg: RunConfig, imu, truth, g):
    ini, sc = cfg.settings["init"], cfg.settings["scenario"]
    method = ini["method"]
    p_iu = np.asarray(sc["init_p_iu"], dtype=float)
    td0 = float(sc["init_td"])
    if method == "auto":
        method = "truth" if truth is not None else "static"
    t0 = imu[0].t
    if method == "truth":
        if truth is None:
            raise UsageError("init method 'truth' needs --truth")
        series = metrics.PoseSeries(*truth)
        s0, dt = t0 - td0, 0.01
        p, q = metrics.interpolate_pose(series, [s0, s0 - dt, s0 + dt])
        p0, q0 = p[0], q[0]
        v0 = (p[2] - p[1]) / (2 * dt)
        return NavState(t0, p0, v0, q0, np.zeros(3), np.zeros(3), p_iu, td0), imu
    if method == "static":
        x0 = initialize_from_static(imu, ini["static_window"], g, p0=ini["p0"], t_d=td0, p_iu=p_iu)
        rest = [u for u in imu if u.t >= x0.t]
        if len(rest) < 2:
            raise UsageError("static initialization consumed the whole IMU stream")
        return x0, rest
    if method == "config":
        q0 = geom.euler_to_quat(ini["euler0"])
        return NavState(t0, np.asarray(ini["p0"]), np.asarray(ini["v0"]), q0, np.zeros(3), np.zeros(3), p_iu, td0), imu
    raise ConfigError(f"[init] method: unknown value {method!r}")


def _check_range_anchors(path, ranges, anchors):
    for n, z in enumerate(ranges, start=2):
        if z.anchor_id not in anchors:
            raise streams.StreamFormatError(f"{path}:{n}: unknown anchor id {z.anchor_id!r}")


def cmd_estimate(cfg: RunConfig) -> int:
    """Run the filter on CSV streams and write estimates, metrics and a report."""
    _need(cfg, "imu", "ranges", "anchors")
    imu = streams.read_imu(cfg.paths["imu"])
    ranges = streams.read_ranges(cfg.paths["ranges"])
    anchors = streams.read_anchors(cfg.paths["anchors"])
    _check_range_anchors(cfg.paths["ranges"], ranges, anchors)
    truth = None
    if cfg.paths.get("truth"):
        _need(cfg, "truth")
        truth = streams.read_truth(cfg.paths["truth"])
    if not imu:
        raise UsageError(f"{cfg.paths['imu']}: no IMU samples")
    fcfg = cfg.filter_config(cfg.noise_from_settings())
    x0, imu = _initial_state(cfg, imu, truth, float(fcfg.noise.g_W[2]))
    if not ranges:
        log.warning("no range measurements: dead-reckoning only")
        print("warning: no range measurements, dead-reckoning only", file=sys.stderr)
    res = run_filter(imu, ranges, anchors, x0, fcfg)

    out = _out_dir(cfg)
    streams.write_table(out / "estimate.csv", streams.ESTIMATE_HEADER,
                        np.column_stack([res.t, res.p, res.q, res.v, res.t_d]))
    streams.write_table(out / "calib_trace.csv", streams.CALIB_HEADER, res.calib_trace())
    streams.write_table(out / "updates.csv", ["t", "anchor_id", "innovation", "innovation_var", "accepted"],
                        ([r.t, str(r.anchor_id), r.innovation, r.innovation_var, str(int(r.accepted))]
                         for r in res.reports))

    fs = res.final_state
    s3 = 3.0 * np.sqrt(np.maximum(np.diag(res.final_P), 0.0))
    m = {
        "n_imu": len(imu),
        "n_ranges": len(ranges),
        "updates": res.n_updates,
        "rejected": res.n_rejected,
        "skipped": res.n_skipped,
        "p_iu_x_m": fs.p_iu[0],
        "p_iu_y_m": fs.p_iu[1],
        "p_iu_z_m": fs.p_iu[2],
        "p_iu_x_3sig_m": s3[SL_PIU][0],
        "p_iu_y_3sig_m": s3[SL_PIU][1],
        "p_iu_z_3sig_m": s3[SL_PIU][2],
        "td_ms": 1000.0 * fs.t_d,
        "td_3sig_ms": 1000.0 * s3[IDX_TD],
    }
    if truth is not None:
        tseries = metrics.PoseSeries(*truth)
        est = metrics.PoseSeries(res.t_phys, res.p, res.q)
        m["pos_rmse_m"] = metrics.position_rmse(tseries, est)
        m["rot_rmse_rad"] = metrics.rotation_rmse(tseries, est)
        errs = metrics.align(tseries, est, res.P_diag[:, 0:3], res.P_theta)
        rep = metrics.consistency_report(errs, t_start=res.t[0] + 0.25 * (res.t[-1] - res.t[0]))
        for k, v in rep.fractions.items():
            m[f"inside_3sig_{k}"] = v
    streams.write_table(out / "metrics.csv", ["key", "value"], ([k, v] for k, v in m.items()))
    text = _estimate_report(m)
    (out / "report.txt").write_text(text, encoding="utf-8")
    print(text, end="")
    return EXIT_OK


def _estimate_report(m: dict) -> str:
    lines = ["calibration (estimate +- 3 sigma)"]
    for ax in "xyz":
        lines.append(f"  p_IU {ax}  {100 * m[f'p_iu_{ax}_m']:9.3f} +- {100 * m[f'p_iu_{ax}_3sig_m']:.3f} cm")
    lines.append(f"  t_d     {m['td_ms']:9.3f} +- {m['td_3sig_ms']:.3f} ms")
    lines.append(f"range updates: {m['updates']} accepted, {m['rejected']} gated, {m['skipped']} skipped"
                 f" of {m['n_ranges']}")
    if "pos_rmse_m" in m:
        lines.append(f"position RMSE  {m['pos_rmse_m']:.4f} m")
        lines.append(f"rotation RMSE  {m['rot_rmse_rad']:.4f} rad")
        inside = {k[len('inside_3sig_'):]: v for k, v in m.items() if k.startswith("inside_3sig_")}
        if inside:
            lines.append("inside 3 sigma: " + ", ".join(f"{k} {100 * v:.1f}%" for k, v in inside.items()))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------- check
def cmd_check(cfg: RunConfig) -> int:
    """Observability and identifiability diagnostics."""
    horizon = cfg.settings["check"]["gramian_horizon"] or None
    th = cfg.thresholds()
    if cfg.paths.get("imu"):
        _need(cfg, "imu", "anchors", "truth")
        imu = streams.read_imu(cfg.paths["imu"])
        anchors = streams.read_anchors(cfg.paths["anchors"])
        truth = streams.read_truth(cfg.paths["truth"])
        x0, imu = _initial_state(cfg, imu, truth, cfg.settings["noise"]["gravity"])
        R = geom.quat_to_rot(truth[2])
        radio = truth[1] + np.einsum("nij,j->ni", R, x0.p_iu)
        diag = observability.diagnose(x0, imu, anchors, radio, horizon, th)
        label = str(cfg.paths["imu"])
    else:
        scn = cfg.scenario()
        diag = sim.diagnose_scenario(scn, gramian_horizon=horizon, thresholds=th)
        label = f"scenario {scn.name} (nominal profile)"
    print(f"observability check: {label}")
    print("\n".join(_conditions_text(diag)))
    failed = diag.failed()
    print("result: " + ("all conditions hold" if not failed else "failed " + ", ".join(failed)))
    if cfg.out is not None:
        out = _out_dir(cfg)
        rows = [[k, _fmt_bool(v)] for k, v in diag.conditions().items()]
        if diag.gramian is not None:
            rows += [["gramian_rank", str(diag.gramian.rank)], ["gramian_cond", diag.gramian.cond]]
        streams.write_table(out / "check.csv", ["condition", "value"], rows)
    return EXIT_CHECK if failed else EXIT_OK


# ---------------------------------------------------------------- montecarlo
def cmd_montecarlo(cfg: RunConfig) -> int:
    """Randomized-offset batch with an aggregate error table."""
    scn = cfg.scenario(default_preset="MC")
    mc = cfg.settings["montecarlo"]
    pre = scn.extra.get("mc", {})
    n_runs = mc["n_runs"] or pre.get("n_runs", 20)
    p_rng = mc["p_iu_range"] or pre.get("p_iu_range", (-0.5, 0.5))
    t_rng = mc["td_range"] or pre.get("td_range", (-0.025, 0.025))
    res = sim.monte_carlo(scn, n_runs, p_rng, t_rng, workers=mc["workers"])
    out = _out_dir(cfg)
    cols = ["run", "seed", "pux_true", "puy_true", "puz_true", "td_true_ms", *res.TABLE_HEADER]
    streams.write_table(out / "montecarlo_runs.csv", cols,
                        ([r["run"], r["seed"], *r["p_iu_true"], r["td_true_ms"], *(r[k] for k in res.TABLE_HEADER)]
                         for r in res.runs))
    tab = res.table()
    streams.write_table(out / "montecarlo.csv", list(res.TABLE_HEADER), [[tab[k] for k in res.TABLE_HEADER]])
    print(f"Monte Carlo: {len(res.runs)} runs ok, {res.n_failed} failed")
    print(_render_table(list(res.TABLE_HEADER), [[f"{tab[k]:.4f}" for k in res.TABLE_HEADER]]))
    for i, msg in res.failures:
        print(f"  run {i} failed: {msg}", file=sys.stderr)
    return EXIT_NUMERIC if res.n_failed else EXIT_OK


# ---------------------------------------------------------------- anchors
def cmd_calibrate_anchors(cfg: RunConfig) -> int:
    """Anchor positions from inter-anchor distances."""
    _need(cfg, "distances")
    table = anchor_calib.read_distance_csv(cfg.paths["distances"])
    table = anchor_calib.InterAnchorRanges.from_samples(
        (streams.parse_id(str(i)), streams.parse_id(str(j)), d, s) for i, j, d, s in table.rows()
    )
    a = cfg.settings["anchors"]
    ids = table.ids
    gauge = anchor_calib.Gauge.default(ids)
    if any(a[k] is not None for k in ("origin", "x_axis", "plane")):
        pick = [streams.parse_id(a[k]) if a[k] is not None else None for k in ("origin", "x_axis", "plane")]
        pick = [p if p is not None else d for p, d in zip(pick, (gauge.origin_id, gauge.x_axis_id, gauge.plane_id))]
        gauge = anchor_calib.Gauge(*pick, z_sign=a["z_sign"])
    else:
        gauge = anchor_calib.Gauge(gauge.origin_id, gauge.x_axis_id, gauge.plane_id, z_sign=a["z_sign"])
    try:
        sol = anchor_calib.solve_constellation(table, gauge)
    except anchor_calib.DegenerateConstellationError as exc:
        print(f"degenerate constellation: {exc}", file=sys.stderr)
        return EXIT_CHECK
    out = _out_dir(cfg)
    streams.write_anchors(out / "anchors.csv", sol.anchors)
    streams.write_table(out / "anchor_residuals.csv", ["i", "j", "residual"],
                        ([str(i), str(j), r] for (i, j), r in sol.residuals.items()))
    print(f"anchor calibration: {len(ids)} anchors, gauge origin={gauge.origin_id} x={gauge.x_axis_id} "
          f"plane={gauge.plane_id} z_sign={gauge.z_sign:+d}")
    print(f"  max |residual| {sol.max_abs_residual:.3e} m, chi2 {sol.chi2:.3f} on {sol.dof} dof")
    if sol.coplanar:
        print("  anchors are coplanar: z is ambiguous (reflection), z = 0 returned")
    print(f"wrote {out}/anchors.csv anchor_residuals.csv")
    return EXIT_OK


# ---------------------------------------------------------------- report
def _render_table(header, rows) -> str:
    w = [max(len(str(h)), *(len(str(r[i])) for r in rows)) for i, h in enumerate(header)]
    line = lambda cells: "  ".join(str(c).rjust(w[i]) for i, c in enumerate(cells))  # noqa: E731
    return "\n".join([line(header), line(["-" * x for x in w]), *(line(r) for r in rows)])


def cmd_report(cfg: RunConfig) -> int:
    """Render metric tables from an earlier run directory."""
    run_dir = Path(cfg.paths.get("run_dir") or cfg.out or ".")
    if not run_dir.is_dir():
        raise UsageError(f"run directory not found: {run_dir}")
    found = False
    for name in ("metrics.csv", "montecarlo.csv", "montecarlo_runs.csv", "check.csv", "anchor_residuals.csv"):
        p = run_dir / name
        if not p.is_file():
            continue
        found = True
        with open(p, encoding="utf-8") as fh:
            rows = [ln.rstrip("\n").split(",") for ln in fh if ln.strip()]
        print(f"== {name}")
        print(_render_table(rows[0], [[_pretty(c) for c in r] for r in rows[1:]]))
        print()
    if not found:
        raise UsageError(f"{run_dir}: no run outputs (metrics.csv, montecarlo.csv, check.csv, ...)")
    return EXIT_OK


def _pretty(c):
    try:
        v = float(c)
    except ValueError:
        return c
    return c if v.is_integer() and "." not in c else f"{v:.6g}"


# ---------------------------------------------------------------- main
COMMANDS = {
    "simulate": cmd_simulate,
    "estimate": cmd_estimate,
    "montecarlo": cmd_montecarlo,
    "check": cmd_check,
    "calibrate-anchors": cmd_calibrate_anchors,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    # SUPPRESS keeps options given before the command from being reset by the
    # sub-parser defaults
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--preset", choices=sim.PRESET_NAMES, help="named scenario")
    common.add_argument("--config", type=Path, help="INI configuration file")
    common.add_argument("--seed", type=int, help="override the scenario seed")
    common.add_argument("--out", type=Path, help="output directory")
    common.add_argument("--imu", type=Path, help="imu.csv")
    common.add_argument("--ranges", type=Path, help="ranges.csv")
    common.add_argument("--anchors", type=Path, help="anchors.csv")
    common.add_argument("--truth", type=Path, help="truth.csv")
    common.add_argument("--dump-defaults", action="store_true", help="print the default configuration and exit")
    common.add_argument("-v", "--verbose", action="store_true")

    ap = argparse.ArgumentParser(prog="uwbcal", description=__doc__.split("\n")[0], parents=[common],
                                 formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = ap.add_subparsers(dest="mode")
    for name in COMMANDS:
        sp = sub.add_parser(name, parents=[common], help=COMMANDS[name].__doc__.rstrip(".").lower())
        if name == "calibrate-anchors":
            sp.add_argument("--distances", type=Path, default=None, help="inter-anchor distance CSV (i,j,d,sigma)")
        if name == "report":
            sp.add_argument("run_dir", nargs="?", type=Path, default=None, help="directory of an earlier run")
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    opt = lambda k: getattr(args, k, None)  # noqa: E731
    logging.basicConfig(level=logging.INFO if opt("verbose") else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if opt("dump_defaults"):
        sys.stdout.write(dump_defaults())
        return EXIT_OK
    if opt("mode") is None:
        ap.print_usage(sys.stderr)
        print("uwbcal: error: a command is required", file=sys.stderr)
        return EXIT_USAGE
    try:
        settings = load_config(opt("config"))
        paths = {k: opt(k) for k in ("imu", "ranges", "anchors", "truth", "distances", "run_dir")}
        cfg = RunConfig(args.mode, settings, opt("seed"), opt("preset"), opt("out"),
                        {k: v for k, v in paths.items() if v})
        return COMMANDS[args.mode](cfg)
    except (ConfigError, UsageError, streams.StreamFormatError, anchor_calib.IncompleteTableError,
            GapTooLargeError, StreamOrderError, OSError) as exc:
        print(f"uwbcal: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"uwbcal: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
