"""Error-state Kalman filter with online lever-arm and time-offset calibration.

The nominal :class:`~uwbcal.models.NavState` is dead-reckoned from IMU
samples; a 19-dimensional error ``(dp, dv, dtheta, db_a, db_w, dp_iu, dt_d)``
and its covariance are propagated alongside. Each range is predicted by
propagating the state over the (estimated) temporal offset, the error is
corrected with a scalar Joseph-form update and injected back into the
nominal state.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import geom
from .models import (
    ERR_DIM,
    IDX_TD,
    MAX_IMU_GAP,
    SL_BA,
    SL_BW,
    SL_P,
    SL_PIU,
    SL_TH,
    SL_V,
    GapTooLargeError,
    ImuSample,
    NavState,
    NoiseConfig,
    RangeSample,
    _rot,
    _skew,
    inject,
    integrate,
    predict_range,
)

log = logging.getLogger(__name__)

CHI2_1DOF_999 = 10.828


class NumericalError(RuntimeError):
    """Covariance or state became non-finite."""


class UnknownAnchorError(KeyError):
    pass


class StreamOrderError(ValueError):
    pass


@dataclass
class ErrorState:
    dx: np.ndarray
    P: np.ndarray

    @classmethod
    def from_cov(cls, P) -> "ErrorState":
        return cls(np.zeros(ERR_DIM), np.array(P, dtype=float))


def default_P0(sigma_p=0.1, sigma_v=0.1, sigma_tilt=0.02, sigma_yaw=0.1, sigma_ba=0.05,
               sigma_bw=0.005, sigma_piu=0.3, sigma_td=0.03) -> np.ndarray:
    sig = np.concatenate(
        [
            [sigma_p] * 3,
            [sigma_v] * 3,
            [sigma_tilt, sigma_tilt, sigma_yaw],
            [sigma_ba] * 3,
            [sigma_bw] * 3,
            [sigma_piu] * 3,
            [sigma_td],
        ]
    )
    return np.diag(sig**2)


@dataclass
class FilterConfig:
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    P0: np.ndarray = field(default_factory=default_P0)
    gate_chi2: float = CHI2_1DOF_999
    imu_gap_max: float = MAX_IMU_GAP
    td_bound: float = 0.5
    td_fd_step: float = 1e-4
    calibrate_spatial: bool = True
    calibrate_temporal: bool = True

    def __post_init__(self):
        self.P0 = np.array(self.P0, dtype=float)
        if self.P0.shape != (ERR_DIM, ERR_DIM):
            raise ValueError("P0 must be 19x19")
        if np.linalg.eigvalsh(0.5 * (self.P0 + self.P0.T)).min() < -1e-12:
            raise ValueError("P0 is not positive semidefinite")
        if self.gate_chi2 <= 0:
            raise ValueError("gate_chi2 must be positive")

    def initial_covariance(self) -> np.ndarray:
        """``P0`` with rows/columns of disabled calibration states zeroed."""
        P = self.P0.copy()
        for sl in self._frozen():
            P[sl, :] = 0.0
            P[:, sl] = 0.0
        return P

    def _frozen(self):
        out = []
        if not self.calibrate_spatial:
            out.append(SL_PIU)
        if not self.calibrate_temporal:
            out.append(slice(IDX_TD, IDX_TD + 1))
        return out


@dataclass
class UpdateReport:
    t: float
    anchor_id: int
    innovation: float = float("nan")
    innovation_var: float = float("nan")
    accepted: bool = False
    skipped: str | None = None

    @property
    def nis(self) -> float:
        return self.innovation**2 / self.innovation_var


class ImuBuffer:
    """Short history of IMU samples used to pick the input for delayed ranges."""

    def __init__(self, maxlen=256):
        self._buf: deque[ImuSample] = deque(maxlen=maxlen)

    def append(self, u: ImuSample):
        self._buf.append(u)

    def __len__(self):
        return len(self._buf)

    @property
    def latest(self) -> ImuSample | None:
        return self._buf[-1] if self._buf else None

    def at(self, t: float) -> ImuSample | None:
        """Latest sample with stamp ``<= t``, or None if ``t`` predates the buffer."""
        for u in reversed(self._buf):
            if u.t <= t:
                return u
        return None


def _check_finite(x: NavState, P, where):
    if not (np.all(np.isfinite(P)) and np.all(np.isfinite(x.as_vector()))):
        diag = np.array2string(np.diag(P), precision=3)
        raise NumericalError(f"non-finite filter state at t={x.t:.6f} ({where}); diag(P)={diag}")


def process_noise(x: NavState, dt: float, cfg: FilterConfig) -> np.ndarray:
    n = cfg.noise
    R = _rot(x.q)
    Q = np.zeros((ERR_DIM, ERR_DIM))
    Q[SL_V, SL_V] = R @ n.Q_a @ R.T * dt
    Q[SL_TH, SL_TH] = n.Q_w * dt
    Q[SL_BA, SL_BA] = n.Q_ba * dt
    Q[SL_BW, SL_BW] = n.Q_bw * dt
    if cfg.calibrate_temporal:
        Q[IDX_TD, IDX_TD] = n.Q_d * dt
    return Q


def predict_step(x: NavState, e: ErrorState, u: ImuSample, dt: float, cfg: FilterConfig,
                 u_end: ImuSample | None = None):
    """Dead-reckon the nominal state and propagate the error covariance."""
    if not dt > 0:
        raise ValueError(f"predict step requires dt > 0, got {dt}")
    if dt > cfg.imu_gap_max:
        raise GapTooLargeError(
            f"IMU gap of {dt:.6f} s between t={x.t:.6f} and t={x.t + dt:.6f} exceeds {cfg.imu_gap_max} s"
        )
    x_new, Phi = integrate(x, u, dt, u_end, g=cfg.noise.g_W, jacobian=True)
    P = Phi @ e.P @ Phi.T + process_noise(x, dt, cfg)
    P = 0.5 * (P + P.T)
    _check_finite(x_new, P, "predict")
    return x_new, ErrorState(e.dx, P)


def delay_input(x: NavState, z: RangeSample, buf: ImuBuffer):
    """Propagation interval to the range instant and the IMU sample held over it."""
    tau = (z.t_r - x.t) + x.t_d
    u = buf.latest if tau >= 0 else buf.at(x.t + 0.5 * tau)
    return tau, u


def measurement_jacobian(x: NavState, u: ImuSample, anchor_p, tau: float, cfg: FilterConfig):
    """Predicted range and its 1x19 Jacobian w.r.t. the error state at ``x``.

    All columns except ``dt_d`` follow from the radio geometry at the
    delayed instant chained with the error transition over ``tau``; the
    ``dt_d`` column is a central difference in ``tau``.
    """
    g = cfg.noise.g_W
    x_r, Phi = integrate(x, u, tau, g=g, jacobian=True)
    R = _rot(x_r.q)
    d = np.asarray(anchor_p, dtype=float) - (R @ x_r.p_iu + x_r.p)
    h = float(np.sqrt(d @ d))
    los = d / h
    Hr = np.zeros(ERR_DIM)
    Hr[SL_P] = -los
    Hr[SL_TH] = los @ R @ _skew(x_r.p_iu)
    Hr[SL_PIU] = -los @ R
    H = Hr @ Phi
    eps = cfg.td_fd_step
    hp = predict_range(integrate(x, u, tau + eps, g=g)[0], anchor_p)
    hm = predict_range(integrate(x, u, tau - eps, g=g)[0], anchor_p)
    H[IDX_TD] = (hp - hm) / (2 * eps)
    return h, H


def update_step(x: NavState, e: ErrorState, z: RangeSample, anchors, buf: ImuBuffer,
                cfg: FilterConfig):
    """Fuse one range; returns the corrected state, reset error and a report."""
    if z.anchor_id not in anchors:
        raise UnknownAnchorError(f"range at t={z.t_r:.6f} references unknown anchor {z.anchor_id}")
    rep = UpdateReport(t=z.t_r, anchor_id=z.anchor_id)
    tau, u = delay_input(x, z, buf)
    if u is None:
        rep.skipped = "no IMU sample brackets the delayed instant"
        return x, e, rep
    h, H = measurement_jacobian(x, u, anchors[z.anchor_id], tau, cfg)
    P = e.P
    PHt = P @ H
    S = float(H @ PHt + cfg.noise.Q_r)
    nu = z.r - h
    rep.innovation, rep.innovation_var = nu, S
    if nu * nu / S > cfg.gate_chi2:
        return x, e, rep
    rep.accepted = True
    K = PHt / S
    dx = K * nu
    IKH = np.eye(ERR_DIM) - np.outer(K, H)
    P = IKH @ P @ IKH.T + cfg.noise.Q_r * np.outer(K, K)
    P = 0.5 * (P + P.T)
    x, e = inject_and_reset(x, ErrorState(dx, P))
    if abs(x.t_d) > cfg.td_bound:
        log.warning("temporal offset %.4f s clipped to bound %.3f s", x.t_d, cfg.td_bound)
        x = x.replace(t_d=float(np.clip(x.t_d, -cfg.td_bound, cfg.td_bound)))
    _check_finite(x, e.P, "update")
    return x, e, rep


def inject_and_reset(x: NavState, e: ErrorState):
    """Apply ``x (+) dx`` and zero the error; the reset Jacobian is taken as identity."""
    return inject(x, e.dx), ErrorState(np.zeros(ERR_DIM), e.P)


@dataclass
class FilterResult:
    """Per-IMU-step estimates. ``t`` is the IMU stamp on the reference clock."""

    t: np.ndarray
    p: np.ndarray
    v: np.ndarray
    q: np.ndarray
    b_a: np.ndarray
    b_w: np.ndarray
    p_iu: np.ndarray
    t_d: np.ndarray
    P_diag: np.ndarray
    P_theta: np.ndarray
    reports: list = field(default_factory=list)
    final_state: NavState | None = None
    final_P: np.ndarray | None = None

    @property
    def t_phys(self) -> np.ndarray:
        """Instants the estimates refer to once the offset is removed."""
        return self.t - self.t_d

    @property
    def sigma(self) -> np.ndarray:
        return np.sqrt(np.maximum(self.P_diag, 0.0))

    def calib_trace(self):
        """Columns ``t, pux, puy, puz, td`` followed by their 3-sigma values."""
        s3 = 3.0 * self.sigma
        return np.column_stack([self.t, self.p_iu, self.t_d, s3[:, SL_PIU], s3[:, IDX_TD]])

    @property
    def n_updates(self) -> int:
        return sum(r.accepted for r in self.reports)

    @property
    def n_rejected(self) -> int:
        return sum((not r.accepted) and r.skipped is None for r in self.reports)

    @property
    def n_skipped(self) -> int:
        return sum(r.skipped is not None for r in self.reports)


def _check_sorted(times, name):
    if len(times) > 1 and np.any(np.diff(times) <= 0):
        i = int(np.argmax(np.diff(times) <= 0))
        raise StreamOrderError(
            f"{name} stream not strictly increasing at index {i + 1} (t={times[i + 1]:.6f} after {times[i]:.6f})"
        )


def run_filter(imu, ranges, anchors, x0: NavState, cfg: FilterConfig, P0=None) -> FilterResult:
    """Run the filter over time-sorted IMU and range streams.

    The first IMU sample fixes the start; ``x0.t`` is overwritten with its
    stamp. IMU samples are processed before ranges carrying the same stamp.
    """
    imu = list(imu)
    ranges = list(ranges)
    if not imu:
        raise ValueError("empty IMU stream")
    _check_sorted(np.array([u.t for u in imu]), "IMU")
    _check_sorted(np.array([z.t_r for z in ranges]), "range")

    x = x0.replace(t=imu[0].t)
    e = ErrorState.from_cov(cfg.initial_covariance() if P0 is None else P0)
    buf = ImuBuffer()
    buf.append(imu[0])

    n = len(imu)
    rec = {k: [] for k in ("t", "p", "v", "q", "b_a", "b_w", "p_iu", "t_d", "Pd", "Pth")}

    def record():
        rec["t"].append(x.t)
        rec["p"].append(x.p)
        rec["v"].append(x.v)
        rec["q"].append(x.q)
        rec["b_a"].append(x.b_a)
        rec["b_w"].append(x.b_w)
        rec["p_iu"].append(x.p_iu)
        rec["t_d"].append(x.t_d)
        rec["Pd"].append(np.diag(e.P).copy())
        rec["Pth"].append(e.P[SL_TH, SL_TH].copy())

    reports = []
    j = 0
    # ranges stamped before the first IMU sample cannot be predicted
    while j < len(ranges) and ranges[j].t_r < imu[0].t:
        reports.append(UpdateReport(ranges[j].t_r, ranges[j].anchor_id, skipped="before first IMU sample"))
        j += 1

    for k in range(n):
        if k > 0:
            record()
            u_prev, u = imu[k - 1], imu[k]
            try:
                x, e = predict_step(x, e, u_prev, u.t - x.t, cfg, u_end=u)
            except GapTooLargeError as exc:
                raise GapTooLargeError(f"IMU sample {k}: {exc}") from None
            buf.append(u)
        t_next = imu[k + 1].t if k + 1 < n else np.inf
        while j < len(ranges) and ranges[j].t_r < t_next:
            x, e, rep = update_step(x, e, ranges[j], anchors, buf, cfg)
            reports.append(rep)
            j += 1
    record()

    return FilterResult(
        t=np.array(rec["t"]),
        p=np.array(rec["p"]),
        v=np.array(rec["v"]),
        q=np.array(rec["q"]),
        b_a=np.array(rec["b_a"]),
        b_w=np.array(rec["b_w"]),
        p_iu=np.array(rec["p_iu"]),
        t_d=np.array(rec["t_d"]),
        P_diag=np.array(rec["Pd"]),
        P_theta=np.array(rec["Pth"]),
        reports=reports,
        final_state=x,
        final_P=e.P,
    )


def initialize_from_static(imu, window=60.0, g=9.8, p0=(0.0, 0.0, 0.0), t_d=0.0, p_iu=(0.0, 0.0, 0.0)):
    """Initial state from a leading static window.

    Gyro bias is the mean rate; roll and pitch come from the mean specific
    force, yaw is zero and the accelerometer bias keeps only the excess of the
    mean specific-force magnitude over ``g``.
    """
    imu = list(imu)
    t0 = imu[0].t
    win = [u for u in imu if u.t - t0 <= window]
    a = np.mean([u.a_m for u in win], axis=0)
    w = np.mean([u.w_m for u in win], axis=0)
    roll = np.arctan2(a[1], a[2])
    pitch = np.arctan2(-a[0], np.hypot(a[1], a[2]))
    q = geom.euler_to_quat([roll, pitch, 0.0])
    an = np.linalg.norm(a)
    b_a = (an - g) * a / an
    last = win[-1]
    return NavState(
        t=last.t,
        p=np.asarray(p0, dtype=float),
        v=np.zeros(3),
        q=q,
        b_a=b_a,
        b_w=w,
        p_iu=np.asarray(p_iu, dtype=float),
        t_d=float(t_d),
    )
