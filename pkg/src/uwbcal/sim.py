"""Scenario simulator for tightly-coupled UWB/IMU experiments.

A scenario fixes an analytic trajectory, an anchor layout, the true lever arm
and temporal offset, noise levels and sensor rates. :func:`generate` turns it
into ground truth plus IMU and range streams; :func:`run_scenario` feeds them
through the filter and scores the result; :func:`monte_carlo` and
:func:`sensitivity_sweep` batch such runs.

Timing model: every stream is stamped on the reference (UWB) clock. IMU
samples are stamped uniformly, but sample ``k`` measures the motion at
``t_k - t_d(t_k)``. Ranges measure the radio position at their stamp.
"""

from __future__ import annotations

import copy
import json
import logging
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from importlib import resources

import numpy as np

from . import geom, metrics, observability
from .eskf import FilterConfig, FilterResult, default_P0, run_filter
from .models import ERR_DIM, IDX_TD, SL_PIU, ImuSample, NavState, NoiseConfig, RangeSample, inject

log = logging.getLogger(__name__)

PRESET_NAMES = ("TR-C1", "TR-C2", "TR-C3", "TR-N", "MC", "TD-VAR", "SENS")

TWO_PI = 2.0 * np.pi


class TrajectoryContinuityWarning(UserWarning):
    """Adjacent trajectory pieces do not join with continuous p, v, a or attitude rates."""


def _vec(x, default=0.0):
    if x is None:
        return np.full(3, default)
    return np.asarray(x, dtype=float).reshape(3)


@dataclass
class MotionPiece:
    """Sum-of-sinusoids motion on local time ``s`` in ``[0, duration]``.

    ``position(s) = center + velocity * s + amp * sin(2 pi freq s + phase)``
    per axis, and likewise roll/pitch/yaw from ``euler0``, ``euler_rate`` and
    the ``euler_*`` sinusoid terms. Static and constant-velocity pieces are
    the special cases with zero amplitudes.
    """

    duration: float
    center: np.ndarray = None
    velocity: np.ndarray = None
    amp: np.ndarray = None
    freq: np.ndarray = None
    phase: np.ndarray = None
    euler0: np.ndarray = None
    euler_rate: np.ndarray = None
    euler_amp: np.ndarray = None
    euler_freq: np.ndarray = None
    euler_phase: np.ndarray = None

    def __post_init__(self):
        for name in ("center", "velocity", "amp", "freq", "phase", "euler0", "euler_rate",
                     "euler_amp", "euler_freq", "euler_phase"):
            setattr(self, name, _vec(getattr(self, name)))
        if self.duration <= 0:
            raise ValueError("piece duration must be positive")

    @classmethod
    def static(cls, duration, position, euler=None):
        return cls(duration, center=position, euler0=euler)

    @classmethod
    def line(cls, duration, start, velocity, euler=None):
        return cls(duration, center=start, velocity=velocity, euler0=euler)

    @classmethod
    def lissajous(cls, duration, center, amp, freq, phase=None, **attitude):
        return cls(duration, center=center, amp=amp, freq=freq, phase=phase, **attitude)

    def evaluate(self, s):
        """Position, velocity, acceleration and Euler angles with two derivatives.

        ``s`` is a 1-D array of local times; every output has shape ``(len(s), 3)``.
        """
        s = np.asarray(s, dtype=float)[:, None]

        def sines(c, rate, a, f, ph):
            w = TWO_PI * f
            arg = w * s + ph
            x = c + rate * s + a * np.sin(arg)
            dx = rate + a * w * np.cos(arg)
            ddx = -a * w * w * np.sin(arg)
            return x, dx, ddx

        p, v, a = sines(self.center, self.velocity, self.amp, self.freq, self.phase)
        e, de, dde = sines(self.euler0, self.euler_rate, self.euler_amp, self.euler_freq, self.euler_phase)
        return p, v, a, e, de, dde


@dataclass
class Trajectory:
    """Piecewise trajectory. With ``radio_frame`` the pieces describe the radio
    path and the IMU position is derived through the lever arm."""

    pieces: list
    radio_frame: bool = False

    def __post_init__(self):
        if not self.pieces:
            raise ValueError("trajectory needs at least one piece")
        self._starts = np.concatenate([[0.0], np.cumsum([pc.duration for pc in self.pieces])[:-1]])

    def check_continuity(self, tol=1e-6):
        """Warn about, and return, boundaries where the pieces do not join smoothly."""
        bad = []
        for i in range(1, len(self.pieces)):
            a = self.pieces[i - 1].evaluate([self.pieces[i - 1].duration])
            b = self.pieces[i].evaluate([0.0])
            for name, xa, xb in zip(("p", "v", "a", "euler", "euler_rate", "euler_acc"), a, b):
                if np.max(np.abs(xa - xb)) > tol:
                    bad.append((float(self._starts[i]), name))
        for t, name in bad:
            warnings.warn(f"trajectory discontinuous in {name} at t={t:.3f} s",
                          TrajectoryContinuityWarning, stacklevel=2)
        return bad

    def _raw(self, t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        idx = np.clip(np.searchsorted(self._starts, t, side="right") - 1, 0, len(self.pieces) - 1)
        out = [np.empty((len(t), 3)) for _ in range(6)]
        for i, pc in enumerate(self.pieces):
            m = idx == i
            if np.any(m):
                for o, val in zip(out, pc.evaluate(t[m] - self._starts[i])):
                    o[m] = val
        return out

    def kinematics(self, t, p_iu):
        """IMU pose and body-frame inertial quantities at times ``t``.

        Returns a dict with ``p, v, a`` (world), ``q`` (world-from-IMU),
        ``w`` and ``w_dot`` (body) and ``radio`` (world radio position).
        """
        r, dr, ddr, e, de, dde = self._raw(t)
        n = len(r)
        q = geom.euler_to_quat(e)
        R = geom.quat_to_rot(q)
        w = np.empty((n, 3))
        wd = np.empty((n, 3))
        for k in range(n):
            E, dEr, dEp = geom.euler_rate_matrix(e[k, 0], e[k, 1])
            w[k] = E @ de[k]
            wd[k] = (dEr * de[k, 0] + dEp * de[k, 1]) @ de[k] + E @ dde[k]
        p_iu = np.asarray(p_iu, dtype=float)
        lever = R @ p_iu
        if self.radio_frame:
            wx = np.cross(w, p_iu)
            lever_v = np.einsum("nij,nj->ni", R, wx)
            lever_a = np.einsum("nij,nj->ni", R, np.cross(w, wx) + np.cross(wd, p_iu))
            p, v, a = r - lever, dr - lever_v, ddr - lever_a
            radio = r
        else:
            p, v, a = r, dr, ddr
            radio = r + lever
        return {"p": p, "v": v, "a": a, "q": q, "w": w, "w_dot": wd, "radio": radio}

    @classmethod
    def from_dict(cls, d):
        return cls([MotionPiece(**pc) for pc in d["pieces"]], bool(d.get("radio_frame", False)))

    def to_dict(self):
        return {
            "radio_frame": self.radio_frame,
            "pieces": [
                {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in vars(pc).items()}
                for pc in self.pieces
            ],
        }


@dataclass
class TdProfile:
    """Temporal offset over time: ``td0`` until ``t_change``, then a linear
    ramp of length ``ramp`` (0 for a step) to ``td1``."""

    td0: float
    td1: float | None = None
    t_change: float | None = None
    ramp: float = 0.0

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if self.td1 is None or self.t_change is None:
            return np.full(t.shape, float(self.td0))
        if self.ramp > 0:
            w = np.clip((t - self.t_change) / self.ramp, 0.0, 1.0)
        else:
            w = (t >= self.t_change).astype(float)
        return self.td0 + w * (self.td1 - self.td0)

    @property
    def max_abs(self) -> float:
        return max(abs(self.td0), abs(self.td1 or 0.0))


@dataclass
class SimScenario:
    name: str
    trajectory: Trajectory
    anchors: dict
    p_iu: np.ndarray
    td: TdProfile
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    imu_rate: float = 100.0
    uwb_rate: float = 20.0
    duration: float = 120.0
    seed: int = 0
    b_a0: np.ndarray = field(default_factory=lambda: np.array([0.04, -0.03, 0.05]))
    b_w0: np.ndarray = field(default_factory=lambda: np.array([0.002, -0.001, 0.0015]))
    init_p_iu: np.ndarray = field(default_factory=lambda: np.zeros(3))
    init_td: float = 0.0
    init_error: np.ndarray | None = None
    P0: np.ndarray | None = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.imu_rate <= 0 or self.uwb_rate <= 0:
            raise ValueError("sensor rates must be positive")
        if self.duration <= 0:
            raise ValueError("duration must be positive")
        if not isinstance(self.td, TdProfile):
            self.td = TdProfile(float(self.td))
        self.p_iu = _vec(self.p_iu)
        self.init_p_iu = _vec(self.init_p_iu)
        self.anchors = {int(k): np.asarray(v, dtype=float).reshape(3) for k, v in self.anchors.items()}
        if self.init_error is not None:
            self.init_error = np.asarray(self.init_error, dtype=float).reshape(ERR_DIM)

    def replace(self, **kw) -> "SimScenario":
        return replace(copy.deepcopy(self), **kw)

    def filter_config(self, **kw) -> FilterConfig:
        base = dict(noise=copy.deepcopy(self.noise), P0=default_P0() if self.P0 is None else self.P0)
        base.update(kw)
        return FilterConfig(**base)


@dataclass
class Truth:
    """Ground truth sampled on a uniform grid of physical time."""

    t: np.ndarray
    p: np.ndarray
    v: np.ndarray
    q: np.ndarray
    radio: np.ndarray

    def pose_series(self) -> metrics.PoseSeries:
        return metrics.PoseSeries(self.t, self.p, self.q)


@dataclass
class SimData:
    truth: Truth
    imu: list
    ranges: list
    imu_truth_b_a: np.ndarray
    imu_truth_b_w: np.ndarray

    @property
    def imu_t(self):
        return np.array([u.t for u in self.imu])


def generate(scn: SimScenario) -> SimData:
    """Ground truth, IMU and range streams for a scenario (deterministic in the seed)."""
    scn.trajectory.check_continuity()
    ss = np.random.SeedSequence(scn.seed)
    rng_imu, rng_bias, rng_rng = (np.random.default_rng(s) for s in ss.spawn(3))
    noise = scn.noise
    g = noise.g_W

    n_imu = int(round(scn.duration * scn.imu_rate))
    k = np.arange(n_imu)
    t_imu = k / scn.imu_rate
    s_imu = t_imu - scn.td(t_imu)
    kin = scn.trajectory.kinematics(s_imu, scn.p_iu)
    Rt = np.transpose(geom.quat_to_rot(kin["q"]), (0, 2, 1))
    a_true = np.einsum("nij,nj->ni", Rt, kin["a"] + g)
    w_true = kin["w"]

    dt = 1.0 / scn.imu_rate
    La = np.linalg.cholesky(noise.Q_a * scn.imu_rate + 1e-300 * np.eye(3)) if np.any(noise.Q_a) else None
    Lw = np.linalg.cholesky(noise.Q_w * scn.imu_rate + 1e-300 * np.eye(3)) if np.any(noise.Q_w) else None
    Lba = np.linalg.cholesky(noise.Q_ba * dt + 1e-300 * np.eye(3)) if np.any(noise.Q_ba) else None
    Lbw = np.linalg.cholesky(noise.Q_bw * dt + 1e-300 * np.eye(3)) if np.any(noise.Q_bw) else None

    def walk(b0, L):
        b = np.tile(b0, (n_imu, 1))
        if L is not None:
            steps = rng_bias.standard_normal((n_imu, 3)) @ L.T
            steps[0] = 0.0
            b = b + np.cumsum(steps, axis=0)
        return b

    b_a = walk(np.asarray(scn.b_a0, dtype=float), Lba)
    b_w = walk(np.asarray(scn.b_w0, dtype=float), Lbw)
    a_m = a_true + b_a
    w_m = w_true + b_w
    if La is not None:
        a_m = a_m + rng_imu.standard_normal((n_imu, 3)) @ La.T
    if Lw is not None:
        w_m = w_m + rng_imu.standard_normal((n_imu, 3)) @ Lw.T
    imu = [ImuSample(float(t_imu[i]), a_m[i], w_m[i]) for i in range(n_imu)]

    ids = sorted(scn.anchors)
    n_rng = int(round(scn.duration * scn.uwb_rate))
    t_r = np.arange(n_rng) / scn.uwb_rate
    t_r = t_r[t_r <= t_imu[-1]]
    radio = scn.trajectory.kinematics(t_r, scn.p_iu)["radio"]
    anchor_ids = [ids[j % len(ids)] for j in range(len(t_r))]
    A = np.array([scn.anchors[i] for i in anchor_ids]).reshape(-1, 3)
    r = np.linalg.norm(A - radio, axis=1)
    if noise.Q_r > 0:
        r = np.abs(r + np.sqrt(noise.Q_r) * rng_rng.standard_normal(len(r)))
    ranges = [RangeSample(float(t_r[j]), anchor_ids[j], float(r[j])) for j in range(len(t_r))]

    t0 = np.floor(s_imu.min() * scn.imu_rate) / scn.imu_rate
    t_truth = t0 + np.arange(int(round((t_imu[-1] - t0) * scn.imu_rate)) + 1) / scn.imu_rate
    kt = scn.trajectory.kinematics(t_truth, scn.p_iu)
    truth = Truth(t_truth, kt["p"], kt["v"], kt["q"], kt["radio"])
    return SimData(truth, imu, ranges, b_a, b_w)


def true_initial_state(scn: SimScenario, data: SimData) -> NavState:
    """Exact state at the physical instant of the first IMU sample."""
    t0 = data.imu[0].t
    s0 = t0 - float(scn.td(t0))
    kin = scn.trajectory.kinematics([s0], scn.p_iu)
    return NavState(
        t=t0,
        p=kin["p"][0],
        v=kin["v"][0],
        q=kin["q"][0],
        b_a=data.imu_truth_b_a[0].copy(),
        b_w=data.imu_truth_b_w[0].copy(),
        p_iu=scn.p_iu.copy(),
        t_d=float(scn.td(t0)),
    )


def initial_estimate(scn: SimScenario, data: SimData, P0=None) -> NavState:
    """Filter start: truth perturbed by ``init_error`` (or a draw from ``P0``),
    with zero bias estimates and the configured lever-arm / offset guesses."""
    x = true_initial_state(scn, data)
    if scn.init_error is not None:
        err = scn.init_error.copy()
    else:
        P0 = default_P0() if P0 is None else P0
        rng = np.random.default_rng(np.random.SeedSequence(scn.seed).spawn(4)[3])
        err = rng.multivariate_normal(np.zeros(ERR_DIM), P0)
    err[SL_PIU] = 0.0
    err[IDX_TD] = 0.0
    x = inject(x, err)
    return x.replace(b_a=np.zeros(3), b_w=np.zeros(3), p_iu=scn.init_p_iu.copy(), t_d=float(scn.init_td))


@dataclass
class RunOutcome:
    scenario: SimScenario
    data: SimData
    result: FilterResult
    pos_rmse: float
    rot_rmse: float
    p_iu_err: float
    td_err: float
    runtime: float
    errors: metrics.AlignedErrorSeries

    def summary(self) -> dict:
        fs = self.result.final_state
        s3 = 3.0 * np.sqrt(np.maximum(np.diag(self.result.final_P), 0.0))
        return {
            "scenario": self.scenario.name,
            "pos_rmse_m": self.pos_rmse,
            "rot_rmse_rad": self.rot_rmse,
            "p_iu_err_cm": 100.0 * self.p_iu_err,
            "td_err_ms": 1000.0 * self.td_err,
            "p_iu_est": fs.p_iu.tolist(),
            "p_iu_3sigma": s3[SL_PIU].tolist(),
            "td_est_ms": 1000.0 * fs.t_d,
            "td_3sigma_ms": 1000.0 * s3[IDX_TD],
            "updates": self.result.n_updates,
            "rejected": self.result.n_rejected,
            "skipped": self.result.n_skipped,
            "runtime_s": self.runtime,
        }


def score(scn: SimScenario, data: SimData, res: FilterResult, offset_window=0.5, runtime=float("nan")):
    """RMSE metrics of a filter run against the simulated truth.

    Lever-arm and offset errors are RMS values over the final
    ``offset_window`` fraction of the run.
    """
    est = metrics.PoseSeries(res.t_phys, res.p, res.q)
    truth = data.truth.pose_series()
    errs = metrics.align(truth, est, res.P_diag[:, 0:3], res.P_theta)
    pos = float(np.sqrt(np.mean(np.sum(errs.dp**2, axis=1))))
    rot = float(np.sqrt(np.mean(np.sum(errs.deuler**2, axis=1))))
    late = res.t >= res.t[0] + (1.0 - offset_window) * (res.t[-1] - res.t[0])
    piu = float(np.sqrt(np.mean(np.sum((res.p_iu[late] - scn.p_iu) ** 2, axis=1))))
    td = float(np.sqrt(np.mean((res.t_d[late] - scn.td(res.t[late])) ** 2)))
    return RunOutcome(scn, data, res, pos, rot, piu, td, runtime, errs)


def run_scenario(scn: SimScenario, cfg: FilterConfig | None = None, data: SimData | None = None,
                 x0: NavState | None = None, offset_window=0.5) -> RunOutcome:
    t_start = time.perf_counter()
    cfg = scn.filter_config() if cfg is None else cfg
    data = generate(scn) if data is None else data
    x0 = initial_estimate(scn, data, cfg.P0) if x0 is None else x0
    res = run_filter(data.imu, data.ranges, scn.anchors, x0, cfg)
    return score(scn, data, res, offset_window, time.perf_counter() - t_start)


def nominal_data(scn: SimScenario) -> SimData:
    """Noise-free streams of a scenario (constant biases, exact ranges)."""
    return generate(scn.replace(noise=NoiseConfig.zero(g_W=scn.noise.g_W)))


def diagnose_scenario(scn: SimScenario, gramian_horizon: float | None = 10.0,
                      thresholds=None) -> observability.Diagnosis:
    """Observability checks on the nominal (noise-free) version of a scenario."""
    data = nominal_data(scn)
    x0 = true_initial_state(scn, data)
    return observability.diagnose(x0, data.imu, scn.anchors, data.truth.radio, gramian_horizon,
                                  thresholds, uwb_rate=scn.uwb_rate)


def _load_presets():
    with resources.files("uwbcal").joinpath("presets.json").open("r", encoding="utf-8") as fh:
        return json.load(fh)


def preset(name: str, **overrides) -> SimScenario:
    """Named experiment scenario; see ``presets.json`` for the exact values."""
    db = _load_presets()
    if name not in db["presets"]:
        raise KeyError(f"unknown preset {name!r}; choose from {', '.join(PRESET_NAMES)}")
    pre = db["presets"][name]
    td = pre["td"]
    td = TdProfile(**td) if isinstance(td, dict) else TdProfile(float(td))
    noise = NoiseConfig(Q_d=float(pre.get("Q_d", 0.0)))
    extra = {k: pre[k] for k in ("mc", "sweep") if k in pre}
    scn = SimScenario(
        name=name,
        trajectory=Trajectory.from_dict(db["trajectories"][pre["trajectory"]]),
        anchors=db["anchor_sets"][pre["anchors"]],
        p_iu=pre["p_iu"],
        td=td,
        noise=noise,
        duration=float(pre["duration"]),
        seed=int(pre["seed"]),
        init_error=np.array(db["init_error"]),
        extra=extra,
    )
    return scn.replace(**overrides) if overrides else scn


@dataclass
class MonteCarloResult:
    runs: list
    failures: list

    TABLE_HEADER = ("pos_rmse_m", "rot_rmse_rad", "p_iu_err_cm", "td_err_ms")

    def table(self) -> dict:
        """Average of the four Table-II style columns over successful runs."""
        if not self.runs:
            return {k: float("nan") for k in self.TABLE_HEADER}
        return {k: float(np.mean([r[k] for r in self.runs])) for k in self.TABLE_HEADER}

    @property
    def n_failed(self) -> int:
        return len(self.failures)


def _mc_job(args):
    i, scn = args
    try:
        out = run_scenario(scn)
        row = out.summary()
        row.update(run=i, seed=scn.seed, p_iu_true=scn.p_iu.tolist(), td_true_ms=1000 * scn.td.td0)
        return row, None
    except Exception as exc:  # report and continue with the batch
        return None, (i, f"{type(exc).__name__}: {exc}")


def monte_carlo_scenarios(base: SimScenario, n_runs: int, p_iu_range=(-0.5, 0.5), td_range=(-0.025, 0.025)):
    if n_runs < 1:
        raise ValueError("n_runs must be >= 1")
    children = np.random.SeedSequence(base.seed).spawn(n_runs)
    scns = []
    for i, ss in enumerate(children):
        rng = np.random.default_rng(ss)
        p_iu = rng.uniform(p_iu_range[0], p_iu_range[1], 3)
        td = float(rng.uniform(td_range[0], td_range[1]))
        seed = int(rng.integers(0, 2**31 - 1))
        scns.append(base.replace(p_iu=p_iu, td=TdProfile(td), seed=seed, name=f"{base.name}-{i}"))
    return scns


def monte_carlo(base: SimScenario, n_runs: int, p_iu_range=(-0.5, 0.5), td_range=(-0.025, 0.025),
                workers: int = 1) -> MonteCarloResult:
    """Independent runs with offsets drawn uniformly from the given ranges."""
    jobs = list(enumerate(monte_carlo_scenarios(base, n_runs, p_iu_range, td_range)))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            out = list(ex.map(_mc_job, jobs))
    else:
        out = [_mc_job(j) for j in jobs]
    runs = sorted((r for r, _ in out if r is not None), key=lambda r: r["run"])
    fails = [f for _, f in out if f is not None]
    for i, msg in fails:
        log.warning("Monte Carlo run %d failed: %s", i, msg)
    return MonteCarloResult(runs, fails)


def fixed_offset_run(scn: SimScenario, p_iu_used, td_used, data: SimData | None = None) -> RunOutcome:
    """Run with calibration disabled and the offsets pinned to the given values."""
    cfg = scn.filter_config(calibrate_spatial=False, calibrate_temporal=False)
    data = generate(scn) if data is None else data
    x0 = initial_estimate(scn, data).replace(p_iu=np.asarray(p_iu_used, dtype=float), t_d=float(td_used))
    return run_scenario(scn, cfg, data=data, x0=x0)


def sensitivity_sweep(base: SimScenario, baselines=(0.02, 0.2), p_iu_errors=(0.0, 0.01, 0.02),
                      td_errors=(0.0, 0.01, 0.02, 0.03)):
    """Position/rotation RMSE with uncalibrated, deliberately wrong offsets.

    The lever arm is scaled to each baseline along ``base.p_iu``; the spatial
    error is applied along the same direction. Rows are dicts with keys
    ``baseline, p_iu_error, td_error, pos_rmse, rot_rmse``.
    """
    direction = base.p_iu / np.linalg.norm(base.p_iu)
    td_true = base.td.td0
    rows = []
    for b in baselines:
        scn = base.replace(p_iu=b * direction, name=f"{base.name}-b{b:g}")
        data = generate(scn)
        for e in p_iu_errors:
            out = fixed_offset_run(scn, (b + e) * direction, td_true, data)
            rows.append(dict(baseline=b, p_iu_error=e, td_error=0.0, pos_rmse=out.pos_rmse, rot_rmse=out.rot_rmse))
        for e in td_errors:
            if e == 0.0:
                continue
            out = fixed_offset_run(scn, b * direction, td_true + e, data)
            rows.append(dict(baseline=b, p_iu_error=0.0, td_error=e, pos_rmse=out.pos_rmse, rot_rmse=out.rot_rmse))
    return rows
