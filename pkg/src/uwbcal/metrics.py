"""Error metrics, consistency statistics and Allan deviation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import geom


@dataclass
class PoseSeries:
    t: np.ndarray
    p: np.ndarray
    q: np.ndarray

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.p = np.asarray(self.p, dtype=float).reshape(-1, 3)
        self.q = geom.normalize(np.asarray(self.q, dtype=float).reshape(-1, 4))

    def __len__(self):
        return len(self.t)


@dataclass
class AlignedErrorSeries:
    """Estimate-minus-truth errors on the estimate timestamps.

    ``env_p`` and ``env_euler`` are 3-sigma envelopes taken from the filter
    covariance (NaN when no covariance was supplied).
    """

    t: np.ndarray
    dp: np.ndarray
    deuler: np.ndarray
    env_p: np.ndarray
    env_euler: np.ndarray

    def channels(self):
        names = ("x", "y", "z", "roll", "pitch", "yaw")
        err = np.column_stack([self.dp, self.deuler])
        env = np.column_stack([self.env_p, self.env_euler])
        return names, err, env


def interpolate_pose(series: PoseSeries, t):
    """Linear position and normalized-lerp attitude at times ``t``."""
    t = np.asarray(t, dtype=float)
    p = np.column_stack([np.interp(t, series.t, series.p[:, i]) for i in range(3)])
    idx = np.clip(np.searchsorted(series.t, t, side="right") - 1, 0, len(series.t) - 2)
    t0, t1 = series.t[idx], series.t[idx + 1]
    w = np.clip((t - t0) / (t1 - t0), 0.0, 1.0)[:, None]
    q0, q1 = series.q[idx], series.q[idx + 1]
    q1 = np.where(np.sum(q0 * q1, axis=1, keepdims=True) < 0, -q1, q1)
    return p, geom.normalize((1 - w) * q0 + w * q1)


def _overlap(truth: PoseSeries, estimate: PoseSeries):
    m = (estimate.t >= truth.t[0]) & (estimate.t <= truth.t[-1])
    if not np.any(m):
        raise ValueError("truth and estimate series do not overlap in time")
    return m


def euler_error(q_est, q_true):
    """Wrapped per-axis Euler difference (estimate minus truth)."""
    return geom.wrap_angle(geom.quat_to_euler(q_est) - geom.quat_to_euler(q_true))


def euler_sigma(q, P_theta, h=1e-6):
    """Per-axis Euler sigmas from the local attitude-error covariance."""
    q = np.asarray(q, dtype=float).reshape(-1, 4)
    J = np.empty((len(q), 3, 3))
    for i in range(3):
        d = np.zeros(3)
        d[i] = h
        ep = geom.quat_to_euler(geom.quat_mul(q, geom.small_angle_quat(d)), warn=False)
        em = geom.quat_to_euler(geom.quat_mul(q, geom.small_angle_quat(-d)), warn=False)
        J[:, :, i] = geom.wrap_angle(ep - em) / (2 * h)
    C = np.einsum("nij,njk,nlk->nil", J, P_theta, J)
    return np.sqrt(np.maximum(np.einsum("nii->ni", C), 0.0))


def align(truth: PoseSeries, estimate: PoseSeries, P_pos_diag=None, P_theta=None) -> AlignedErrorSeries:
    """Interpolate truth onto the estimate timestamps and form errors."""
    m = _overlap(truth, estimate)
    t = estimate.t[m]
    p_true, q_true = interpolate_pose(truth, t)
    dp = estimate.p[m] - p_true
    de = euler_error(estimate.q[m], q_true)
    n = len(t)
    env_p = np.full((n, 3), np.nan)
    env_e = np.full((n, 3), np.nan)
    if P_pos_diag is not None:
        env_p = 3.0 * np.sqrt(np.asarray(P_pos_diag, dtype=float)[m])
    if P_theta is not None:
        env_e = 3.0 * euler_sigma(estimate.q[m], np.asarray(P_theta, dtype=float)[m])
    return AlignedErrorSeries(t, dp, de, env_p, env_e)


def position_rmse(truth: PoseSeries, estimate: PoseSeries) -> float:
    m = _overlap(truth, estimate)
    p_true, _ = interpolate_pose(truth, estimate.t[m])
    d = estimate.p[m] - p_true
    return float(np.sqrt(np.mean(np.sum(d * d, axis=1))))


def rotation_rmse(truth: PoseSeries, estimate: PoseSeries) -> float:
    """RMS of the Euclidean norm of wrapped roll/pitch/yaw differences."""
    m = _overlap(truth, estimate)
    _, q_true = interpolate_pose(truth, estimate.t[m])
    d = euler_error(estimate.q[m], q_true)
    return float(np.sqrt(np.mean(np.sum(d * d, axis=1))))


@dataclass
class ConsistencyReport:
    fractions: dict
    threshold: float

    @property
    def flagged(self):
        return [k for k, v in self.fractions.items() if v < self.threshold]

    @property
    def ok(self) -> bool:
        return not self.flagged


def consistency_report(errs: AlignedErrorSeries, threshold=0.95, t_start=None) -> ConsistencyReport:
    """Fraction of samples with ``|error| <= 3 sigma`` for each channel."""
    names, err, env = errs.channels()
    m = np.ones(len(errs.t), bool) if t_start is None else errs.t >= t_start
    fr = {}
    for i, name in enumerate(names):
        e, s = err[m, i], env[m, i]
        if np.all(np.isnan(s)):
            continue
        fr[name] = float(np.mean(np.abs(e) <= s))
    return ConsistencyReport(fr, threshold)


def scalar_consistency(err, sigma3) -> float:
    err = np.asarray(err, dtype=float)
    return float(np.mean(np.abs(err) <= np.asarray(sigma3, dtype=float)))


def allan_deviation(x, rate, taus=None, n_taus=40):
    """Overlapping Allan deviation of a uniformly sampled rate signal.

    Returns ``(taus, adev)`` with ``taus`` in seconds. Default averaging
    times are log-spaced cluster sizes from one sample up to a tenth of the
    record.
    """
    x = np.asarray(x, dtype=float)
    n = len(x)
    if n < 1000:
        raise ValueError(f"Allan deviation needs at least 1000 samples, got {n}")
    dt = 1.0 / rate
    if taus is None:
        ms = np.unique(np.round(np.logspace(0, np.log10(n // 10), n_taus)).astype(int))
    else:
        ms = np.unique(np.maximum(1, np.round(np.asarray(taus) * rate).astype(int)))
        ms = ms[ms <= (n - 1) // 2]
    theta = np.concatenate([[0.0], np.cumsum(x) * dt])
    adev = np.empty(len(ms))
    for i, m in enumerate(ms):
        d = theta[2 * m:] - 2 * theta[m:-m] + theta[: len(theta) - 2 * m]
        tau = m * dt
        adev[i] = np.sqrt(np.sum(d * d) / (2 * tau * tau * len(d)))
    return ms * dt, adev


def fit_allan(taus, adev, slope_tol=0.15):
    """Fit white-noise (slope -1/2) and random-walk (slope +1/2) segments.

    Returns a dict with the white-noise density ``N`` (value of the -1/2 line
    at tau = 1 s), the rate random-walk coefficient ``K`` (value of the +1/2
    line at tau = 3 s) and suggested variances ``Q_white = N**2`` and
    ``Q_walk = K**2``. Missing segments give NaN.
    """
    lt, la = np.log10(taus), np.log10(np.maximum(adev, 1e-300))
    slope = np.gradient(la, lt)
    out = {"N": np.nan, "K": np.nan}
    w = np.abs(slope + 0.5) < slope_tol
    if np.any(w):
        out["N"] = float(10 ** np.mean(la[w] + 0.5 * lt[w]))
    r = np.abs(slope - 0.5) < slope_tol
    if np.any(r):
        out["K"] = float(10 ** np.mean(la[r] - 0.5 * (lt[r] - np.log10(3.0))))
    out["Q_white"] = out["N"] ** 2
    out["Q_walk"] = out["K"] ** 2
    return out


def loglog_slope(taus, adev) -> float:
    """Least-squares slope of ``log adev`` against ``log tau``."""
    return float(np.polyfit(np.log10(taus), np.log10(adev), 1)[0])
