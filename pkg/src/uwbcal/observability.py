"""Numerical checks of the identifiability and observability conditions.

``check_excitation`` and ``check_geometry`` test the sufficient conditions
directly on sensor data and layouts:

- T1: the radio is not co-located with an anchor.
- T2 / C3: one / all accelerometer axes are excited by motion.
- T3: non-zero lever arm and all gyro axes excited.
- C4: all gyro axes excited.
- C1: at least three non-collinear anchors.
- C2: the radio is off the plane of a non-collinear anchor triple.

``empirical_gramian`` complements them with a perturbation-based rank test of
the full 19-dimensional error state.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from . import geom
from .models import ERR_DIM, GRAVITY, IDX_TD, ImuSample, NavState, inject, integrate, predict_range

# default perturbation sizes per error block (m, m/s, rad, biases, lever arm, s)
DEFAULT_EPS = np.concatenate([[1e-4] * 9, [1e-5] * 6, [1e-4] * 3, [1e-4]])


@dataclass
class ExcitationThresholds:
    accel: float = 0.05  # m^2/s^4
    gyro: float = 0.01  # rad^2/s^2
    window: float = 5.0
    smooth: float = 0.1


@dataclass
class ExcitationReport:
    accel_var: np.ndarray
    gyro_var: np.ndarray
    accel_excited: np.ndarray
    gyro_excited: np.ndarray
    window: float

    @property
    def t2(self) -> bool:
        return bool(np.any(self.accel_excited))

    @property
    def c3(self) -> bool:
        return bool(np.all(self.accel_excited))

    @property
    def c4(self) -> bool:
        return bool(np.all(self.gyro_excited))

    @property
    def gyro_two_axes(self) -> bool:
        return int(np.sum(self.gyro_excited)) >= 2


def _band_variance(x, rate, window, smooth):
    """Mean over windows of the per-axis variance after smoothing and de-meaning."""
    n_s = max(1, int(round(smooth * rate)))
    if n_s > 1 and len(x) > n_s:
        k = np.ones(n_s) / n_s
        x = np.column_stack([np.convolve(x[:, i], k, mode="valid") for i in range(x.shape[1])])
    n_w = max(2, int(round(window * rate)))
    n_win = max(1, len(x) // n_w)
    chunks = np.array_split(x[: max(n_win * n_w, len(x)) if n_win == 1 else n_win * n_w], n_win)
    return np.mean([np.var(c, axis=0) for c in chunks], axis=0)


def check_excitation(imu, thresholds: ExcitationThresholds | None = None, q0=None, b_a=None, b_w=None,
                     g=GRAVITY) -> ExcitationReport:
    """Per-axis motion excitation of an IMU stream.

    The gravity projection is removed along an attitude dead-reckoned from
    ``q0`` (or levelled from the first second of data when ``q0`` is None),
    so a pure rotation does not count as accelerometer excitation.
    """
    th = ExcitationThresholds() if thresholds is None else thresholds
    imu = list(imu)
    if not imu:
        raise ValueError("empty IMU stream")
    t = np.array([u.t for u in imu])
    if t[-1] - t[0] < 1.0:
        raise ValueError("excitation check needs at least 1 s of IMU data")
    a = np.array([u.a_m for u in imu]) - (0.0 if b_a is None else np.asarray(b_a))
    w = np.array([u.w_m for u in imu]) - (0.0 if b_w is None else np.asarray(b_w))
    rate = (len(t) - 1) / (t[-1] - t[0])
    if q0 is None:
        a0 = a[t - t[0] <= 1.0].mean(axis=0)
        q0 = geom.euler_to_quat([np.arctan2(a0[1], a0[2]), np.arctan2(-a0[0], np.hypot(a0[1], a0[2])), 0.0])
    q = np.empty((len(t), 4))
    q[0] = q0
    dts = np.diff(t)
    for k in range(1, len(t)):
        q[k] = geom.quat_mul(q[k - 1], geom.quat_exp(0.5 * (w[k - 1] + w[k]) * dts[k - 1]))
    Rt = np.transpose(geom.quat_to_rot(q), (0, 2, 1))
    lin = a - np.einsum("nij,j->ni", Rt, np.asarray(g, dtype=float))
    av = _band_variance(lin, rate, th.window, th.smooth)
    gv = _band_variance(w, rate, th.window, th.smooth)
    return ExcitationReport(av, gv, av > th.accel, gv > th.gyro, th.window)


@dataclass
class TripleGeometry:
    ids: tuple
    off_plane_fraction: float
    min_rank: int
    median_rank: float
    median_cond: float


@dataclass
class GeometryReport:
    n_anchors: int
    anchor_rank: int
    collinear: bool
    coplanar: bool | None
    coverage: float
    triples: list = field(default_factory=list)

    @property
    def c1(self) -> bool:
        return not self.collinear

    @property
    def c2(self) -> bool | None:
        """None when no non-collinear triple exists (C1 already fails)."""
        return None if self.coplanar is None else not self.coplanar


def _rank(M, tol):
    s = np.linalg.svd(M, compute_uv=False)
    return int(np.sum(s > tol * s[0])) if s[0] > 0 else 0, (s[0] / s[-1] if s[-1] > 0 else np.inf)


def check_geometry(anchors, radio_positions, collinear_tol=1e-3, plane_tol=0.05,
                   coverage_min=0.95) -> GeometryReport:
    """Anchor collinearity and radio/anchor coplanarity diagnostics."""
    ids = sorted(anchors)
    if not ids:
        raise ValueError("at least one anchor is required")
    A = np.array([anchors[i] for i in ids], dtype=float)
    R = np.asarray(radio_positions, dtype=float).reshape(-1, 3)
    if len(ids) >= 2:
        arank, _ = _rank(A[1:] - A[0], collinear_tol)
    else:
        arank = 0
    collinear = arank < 2
    triples = []
    off_any = np.zeros(len(R), bool)
    for trip in combinations(range(len(ids)), 3):
        P = A[list(trip)]
        nrm = np.cross(P[1] - P[0], P[2] - P[0])
        scale = np.linalg.norm(P[1] - P[0]) * np.linalg.norm(P[2] - P[0])
        if np.linalg.norm(nrm) <= collinear_tol * scale:
            continue
        nrm = nrm / np.linalg.norm(nrm)
        off = np.abs((R - P[0]) @ nrm) > plane_tol
        off_any |= off
        D = P[None, :, :] - R[:, None, :]
        s = np.linalg.svd(np.transpose(D, (0, 2, 1)), compute_uv=False)
        ranks = np.sum(s > collinear_tol * s[:, :1], axis=1)
        cond = np.where(s[:, -1] > 0, s[:, 0] / np.where(s[:, -1] > 0, s[:, -1], 1.0), np.inf)
        triples.append(
            TripleGeometry(tuple(ids[i] for i in trip), float(off.mean()), int(ranks.min()),
                           float(np.median(ranks)), float(np.median(cond)))
        )
    if triples:
        coverage = float(off_any.mean())
        coplanar = coverage < coverage_min
    else:
        coverage, coplanar = 0.0, None
    return GeometryReport(len(ids), arank, collinear, coplanar, coverage, triples)


def simulate_ranges(x0: NavState, imu, anchors, t_ranges, anchor_ids, g=GRAVITY):
    """Noise-free ranges predicted by dead-reckoning ``x0`` through ``imu``.

    Uses the same timing model as the filter: the state at IMU stamp ``t`` is
    propagated by ``t_r - t + t_d`` holding the latest sample.
    """
    imu = list(imu)
    out = np.empty(len(t_ranges))
    x = x0.replace(t=imu[0].t)
    k, n = 0, len(imu)
    for j, (tr, aid) in enumerate(zip(t_ranges, anchor_ids)):
        while k + 1 < n and imu[k + 1].t <= tr:
            x = integrate(x, imu[k], imu[k + 1].t - x.t, imu[k + 1], g=g)[0]
            k += 1
        tau = (tr - x.t) + x.t_d
        out[j] = predict_range(integrate(x, imu[k], tau, g=g)[0], anchors[aid])
    return out


@dataclass
class GramianResult:
    W: np.ndarray
    singular_values: np.ndarray
    rank: int
    rank_xtilde: int
    cond: float
    null_basis: np.ndarray
    eps: np.ndarray

    @property
    def full_rank(self) -> bool:
        return self.rank == ERR_DIM


def empirical_gramian(x: NavState, u_profile, anchors, horizon=10.0, eps=None, uwb_rate=20.0,
                      rank_tol=1e-6, g=GRAVITY) -> GramianResult:
    """Empirical observability Gramian of the 19-dim error state around ``x``.

    Each error direction is perturbed by ``+-eps``; the noise-free range
    outputs over ``horizon`` seconds (round-robin at ``uwb_rate``) are
    differenced and stacked into ``Y`` (one column per direction, in metres
    of range per ``eps`` step) and ``W = Y^T Y / n``.

    The rank counts singular values of ``Y`` (square roots of the eigenvalues
    of ``W``) above ``rank_tol`` times the largest. ``cond`` is the condition
    number of ``W`` itself.

    For scenario checks pass the noise-free IMU profile: sensor noise adds
    spurious rotation that makes structurally blind directions look weakly
    observable.
    """
    eps = DEFAULT_EPS.copy() if eps is None else np.broadcast_to(np.asarray(eps, dtype=float), (ERR_DIM,)).copy()
    imu = [u for u in u_profile if x.t - 1e-9 <= u.t <= x.t + horizon + 1e-9]
    ids = sorted(anchors)
    need = 2 * max(len(ids), 3)
    n_out = int(np.floor(horizon * uwb_rate))
    if len(imu) < 2 or n_out < need:
        raise ValueError(f"degenerate horizon: {n_out} range epochs, need at least {need}")
    t_r = x.t + np.arange(1, n_out + 1) / uwb_rate
    t_r = t_r[t_r <= imu[-1].t]
    aid = [ids[j % len(ids)] for j in range(len(t_r))]
    Y = np.empty((len(t_r), ERR_DIM))
    for i in range(ERR_DIM):
        d = np.zeros(ERR_DIM)
        d[i] = eps[i]
        yp = simulate_ranges(inject(x, d), imu, anchors, t_r, aid, g)
        ym = simulate_ranges(inject(x, -d), imu, anchors, t_r, aid, g)
        Y[:, i] = 0.5 * (yp - ym)
    W = Y.T @ Y / len(t_r)
    W = 0.5 * (W + W.T)
    evals, evecs = np.linalg.eigh(W)
    # singular values of the eps-scaled output sensitivity matrix
    s = np.sqrt(np.maximum(evals[::-1], 0.0))
    rank = int(np.sum(s > rank_tol * s[0]))
    sx = np.sqrt(np.maximum(np.linalg.eigvalsh(W[:IDX_TD, :IDX_TD])[::-1], 0.0))
    rank_x = int(np.sum(sx > rank_tol * sx[0]))
    cond = float(evals[-1] / evals[0]) if evals[0] > 0 else float("inf")
    null = evecs[:, : ERR_DIM - rank]
    return GramianResult(W, s, rank, rank_x, cond, null, eps)


def weak_direction(res: GramianResult, block: slice) -> np.ndarray:
    """Dominant direction of the unobservable subspace restricted to one 3-block.

    Falls back to the least observable eigenvector when the Gramian has full
    rank.
    """
    N = res.null_basis
    if N.shape[1] == 0:
        N = np.linalg.eigh(res.W)[1][:, :1]
    B = N[block, :]
    U, s, _ = np.linalg.svd(B)
    d = U[:, 0]
    return d * np.sign(d[np.argmax(np.abs(d))])


@dataclass
class IdentifiabilityVerdict:
    t1: bool
    t2: bool
    t3: bool
    min_anchor_distance: float
    two_gyro_axes: bool

    @property
    def identifiable(self) -> bool:
        return self.t1 and (self.t2 or self.t3)


def check_identifiability(x: NavState, imu, anchors, thresholds: ExcitationThresholds | None = None,
                          colocated_tol=0.05) -> IdentifiabilityVerdict:
    """Sufficient conditions for a locally identifiable temporal offset."""
    radio = x.radio_position()
    dmin = min(float(np.linalg.norm(np.asarray(a) - radio)) for a in anchors.values())
    exc = check_excitation(imu, thresholds, q0=x.q, b_a=x.b_a, b_w=x.b_w)
    t1 = dmin > colocated_tol
    t3 = bool(np.linalg.norm(x.p_iu) > colocated_tol and exc.c4)
    return IdentifiabilityVerdict(t1, exc.t2, t3, dmin, exc.gyro_two_axes)


@dataclass
class Diagnosis:
    excitation: ExcitationReport
    geometry: GeometryReport
    identifiability: IdentifiabilityVerdict
    gramian: GramianResult | None

    def conditions(self) -> dict:
        """Pass/fail per condition; ``None`` marks a condition that cannot be assessed."""
        g = self.geometry
        out = {
            "C1": g.c1,
            "C2": g.c2,
            "C3": self.excitation.c3,
            "C4": self.excitation.c4,
            "T1": self.identifiability.t1,
            "T2": self.identifiability.t2,
            "T3": self.identifiability.t3,
        }
        if self.gramian is not None:
            out["gramian_full_rank"] = self.gramian.full_rank
        return out

    def failed(self) -> list:
        """Violated conditions. T2/T3 count only when neither holds."""
        c = self.conditions()
        bad = [k for k in ("C1", "C2", "C3", "C4", "T1") if c[k] is False]
        if not (c["T2"] or c["T3"]):
            bad.append("T2|T3")
        if c.get("gramian_full_rank") is False:
            bad.append("gramian_full_rank")
        return bad


def diagnose(x0: NavState, imu, anchors, radio_positions, gramian_horizon: float | None = 10.0,
             thresholds: ExcitationThresholds | None = None, uwb_rate=20.0) -> Diagnosis:
    """Run all checks for one data set; set ``gramian_horizon=None`` to skip the Gramian."""
    imu = list(imu)
    exc = check_excitation(imu, thresholds, q0=x0.q, b_a=x0.b_a, b_w=x0.b_w)
    geo = check_geometry(anchors, radio_positions)
    ident = check_identifiability(x0, imu, anchors, thresholds)
    gram = None
    if gramian_horizon:
        gram = empirical_gramian(x0, imu, anchors, gramian_horizon, uwb_rate=uwb_rate)
    return Diagnosis(exc, geo, ident, gram)
