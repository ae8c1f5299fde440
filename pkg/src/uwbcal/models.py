"""State containers, IMU noise model, strapdown propagation and range model.

The nominal state follows the kinematic model

    p_dot = v
    v_dot = R(q) (a_m - b_a) - g
    q_dot = 0.5 * Omega(w_m - b_w) q

with biases, lever arm ``p_iu`` and temporal offset ``t_d`` held constant.
Integration is classical RK4. Inputs are either held constant over the step
or interpolated linearly between two IMU samples.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import geom

GRAVITY = np.array([0.0, 0.0, 9.8])

MAX_IMU_GAP = 0.1

# error-state slices (19-dim): p, v, theta, b_a, b_w, p_iu, t_d
SL_P = slice(0, 3)
SL_V = slice(3, 6)
SL_TH = slice(6, 9)
SL_BA = slice(9, 12)
SL_BW = slice(12, 15)
SL_PIU = slice(15, 18)
IDX_TD = 18
ERR_DIM = 19

_I3 = np.eye(3)


class GapTooLargeError(ValueError):
    pass


@dataclass(frozen=True)
class NavState:
    """Full nominal state. ``t`` is on the reference (UWB) clock."""

    t: float
    p: np.ndarray
    v: np.ndarray
    q: np.ndarray
    b_a: np.ndarray = field(default_factory=lambda: np.zeros(3))
    b_w: np.ndarray = field(default_factory=lambda: np.zeros(3))
    p_iu: np.ndarray = field(default_factory=lambda: np.zeros(3))
    t_d: float = 0.0

    def replace(self, **kw) -> "NavState":
        return replace(self, **kw)

    def radio_position(self) -> np.ndarray:
        return _rot(self.q) @ self.p_iu + self.p

    def as_vector(self) -> np.ndarray:
        """20-vector ``(p, v, q, b_a, b_w, p_iu, t_d)``."""
        return np.concatenate([self.p, self.v, self.q, self.b_a, self.b_w, self.p_iu, [self.t_d]])


@dataclass(frozen=True)
class ImuSample:
    t: float
    a_m: np.ndarray
    w_m: np.ndarray


@dataclass(frozen=True)
class RangeSample:
    t_r: float
    anchor_id: int
    r: float


@dataclass
class NoiseConfig:
    """Continuous-time noise intensities.

    ``Q_a``/``Q_w`` are white-noise PSDs ((m/s^2)^2/Hz, (rad/s)^2/Hz), the
    bias entries are random-walk intensities per second, ``Q_r`` is the range
    variance (m^2) and ``Q_d`` the temporal-offset random walk (s^2/s).
    """

    Q_a: np.ndarray = field(default_factory=lambda: 0.02**2 * np.eye(3))
    Q_w: np.ndarray = field(default_factory=lambda: 0.002**2 * np.eye(3))
    Q_ba: np.ndarray = field(default_factory=lambda: 1e-4**2 * np.eye(3))
    Q_bw: np.ndarray = field(default_factory=lambda: 1e-4**2 * np.eye(3))
    Q_r: float = 0.02**2
    Q_d: float = 0.0
    g_W: np.ndarray = field(default_factory=lambda: GRAVITY.copy())

    def __post_init__(self):
        for name in ("Q_a", "Q_w", "Q_ba", "Q_bw"):
            M = np.atleast_2d(np.asarray(getattr(self, name), dtype=float))
            if M.shape == (1, 1):
                M = M[0, 0] * np.eye(3)
            elif M.shape == (1, 3):
                M = np.diag(M[0])
            if M.shape != (3, 3) or not np.allclose(M, M.T):
                raise ValueError(f"{name} must be a symmetric 3x3 matrix")
            if np.linalg.eigvalsh(M).min() < -1e-15:
                raise ValueError(f"{name} is not positive semidefinite")
            setattr(self, name, M)
        if self.Q_r < 0 or self.Q_d < 0:
            raise ValueError("Q_r and Q_d must be non-negative")
        self.g_W = np.asarray(self.g_W, dtype=float)

    @classmethod
    def zero(cls, **kw) -> "NoiseConfig":
        z = np.zeros((3, 3))
        base = dict(Q_a=z, Q_w=z, Q_ba=z, Q_bw=z, Q_r=0.0, Q_d=0.0)
        base.update(kw)
        return cls(**base)


def _rot(q):
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def _skew(v):
    return np.array([[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]])


def _qdot(q, w):
    # 0.5 * Omega(w) q, written out: np.cross is slow on 3-vectors
    q0, qx, qy, qz = q
    wx, wy, wz = w
    return 0.5 * np.array(
        [
            -wx * qx - wy * qy - wz * qz,
            q0 * wx + qy * wz - qz * wy,
            q0 * wy + qz * wx - qx * wz,
            q0 * wz + qx * wy - qy * wx,
        ]
    )


def _error_dynamics(R, a, w):
    """15x15 continuous error-state matrix over (p, v, theta, b_a, b_w)."""
    A = np.zeros((15, 15))
    A[0:3, 3:6] = _I3
    A[3:6, 6:9] = -R @ _skew(a)
    A[3:6, 9:12] = -R
    A[6:9, 6:9] = -_skew(w)
    A[6:9, 12:15] = -_I3
    return A


def _rk4(x: NavState, a0, w0, a1, w1, dt, g, jacobian=False, am=None, wm=None):
    """One RK4 step of (p, v, q) on bias-corrected inputs.

    The midpoint inputs default to the mean of the endpoints (linear in time).
    Returns the new (p, v, q) and, if requested, the 15x15 error transition
    obtained by integrating the variational equation on the same stages.
    """
    p, v, q = x.p, x.v, x.q
    if am is None:
        am, wm = 0.5 * (a0 + a1), 0.5 * (w0 + w1)

    R1 = _rot(q)
    k1p, k1v, k1q = v, R1 @ a0 - g, _qdot(q, w0)
    q2 = q + 0.5 * dt * k1q
    R2 = _rot(q2 / np.sqrt(q2 @ q2))
    k2p, k2v, k2q = v + 0.5 * dt * k1v, R2 @ am - g, _qdot(q2, wm)
    q3 = q + 0.5 * dt * k2q
    R3 = _rot(q3 / np.sqrt(q3 @ q3))
    k3p, k3v, k3q = v + 0.5 * dt * k2v, R3 @ am - g, _qdot(q3, wm)
    q4 = q + dt * k3q
    R4 = _rot(q4 / np.sqrt(q4 @ q4))
    k4p, k4v, k4q = v + dt * k3v, R4 @ a1 - g, _qdot(q4, w1)

    h = dt / 6.0
    p_new = p + h * (k1p + 2 * k2p + 2 * k3p + k4p)
    v_new = v + h * (k1v + 2 * k2v + 2 * k3v + k4v)
    q_new = q + h * (k1q + 2 * k2q + 2 * k3q + k4q)
    q_new = q_new / np.sqrt(q_new @ q_new)
    if q_new[0] < 0:
        q_new = -q_new
    if not jacobian:
        return p_new, v_new, q_new, None

    I = np.eye(15)
    K1 = _error_dynamics(R1, a0, w0)
    K2 = _error_dynamics(R2, am, wm) @ (I + 0.5 * dt * K1)
    K3 = _error_dynamics(R3, am, wm) @ (I + 0.5 * dt * K2)
    K4 = _error_dynamics(R4, a1, w1) @ (I + dt * K3)
    Phi = I + h * (K1 + 2 * K2 + 2 * K3 + K4)
    return p_new, v_new, q_new, Phi


def integrate(x: NavState, u: ImuSample, dt: float, u_end: ImuSample | None = None,
              g=GRAVITY, jacobian=False, u_mid: ImuSample | None = None):
    """Propagate ``x`` by ``dt`` (any sign) without gap checks.

    ``u_mid`` optionally supplies the raw inputs at the middle of the step
    (used together with ``u_end``); otherwise they are the endpoint mean.
    Returns ``(state, Phi)`` where ``Phi`` is the full 19x19 error transition
    (``None`` unless ``jacobian``).
    """
    a0 = u.a_m - x.b_a
    w0 = u.w_m - x.b_w
    if u_end is None:
        a1, w1 = a0, w0
    else:
        a1 = u_end.a_m - x.b_a
        w1 = u_end.w_m - x.b_w
    am = wm = None
    if u_mid is not None and u_end is not None:
        am, wm = u_mid.a_m - x.b_a, u_mid.w_m - x.b_w
    p, v, q, Phi15 = _rk4(x, a0, w0, a1, w1, dt, g, jacobian, am, wm)
    out = NavState(x.t + dt, p, v, q, x.b_a, x.b_w, x.p_iu, x.t_d)
    if not jacobian:
        return out, None
    Phi = np.eye(ERR_DIM)
    Phi[:15, :15] = Phi15
    return out, Phi


def propagate(x: NavState, u: ImuSample, dt: float, u_end: ImuSample | None = None,
              g=GRAVITY, max_gap=MAX_IMU_GAP, u_mid: ImuSample | None = None) -> NavState:
    """Strapdown propagation over ``dt`` seconds, ``0 <= dt <= max_gap``.

    ``u`` is held constant over the step unless ``u_end`` is given, in which
    case the inputs are interpolated linearly from ``u`` to ``u_end`` (or
    pass through ``u_mid`` at the half step when that is given).
    """
    if dt < 0:
        raise ValueError(f"negative propagation step dt={dt}")
    if dt > max_gap:
        raise GapTooLargeError(
            f"IMU gap of {dt:.6f} s between t={x.t:.6f} and t={x.t + dt:.6f} exceeds {max_gap} s"
        )
    return integrate(x, u, dt, u_end, g, u_mid=u_mid)[0]


def _lagrange_weights(nodes, t):
    w = np.ones(len(nodes))
    for i, ti in enumerate(nodes):
        for j, tj in enumerate(nodes):
            if i != j:
                w[i] *= (t - tj) / (ti - tj)
    return w


def midpoint_inputs(imu) -> list:
    """Cubic reconstruction of the inputs halfway between consecutive samples.

    Interior steps use the two preceding samples, the step start and the
    step end; the first step uses the four leading samples. Streams with
    fewer than four samples fall back to the endpoint mean.
    """
    imu = list(imu)
    n = len(imu)
    out = []
    for k in range(n - 1):
        tm = 0.5 * (imu[k].t + imu[k + 1].t)
        if n < 4:
            idx = [k, k + 1]
        elif k < 2:
            idx = [0, 1, 2, 3]
        else:
            idx = [k - 2, k - 1, k, k + 1]
        w = _lagrange_weights([imu[i].t for i in idx], tm)
        a = sum(wi * imu[i].a_m for wi, i in zip(w, idx))
        g = sum(wi * imu[i].w_m for wi, i in zip(w, idx))
        out.append(ImuSample(tm, a, g))
    return out


def dead_reckon(x0: NavState, imu, g=GRAVITY, max_gap=MAX_IMU_GAP) -> list:
    """Integrate ``x0`` through a sample stream with cubic input reconstruction.

    ``x0.t`` is taken to be the stamp of the first sample. Returns the
    states at every sample stamp (first entry is ``x0``).
    """
    imu = list(imu)
    mids = midpoint_inputs(imu)
    x = x0.replace(t=imu[0].t)
    out = [x]
    for u0, um, u1 in zip(imu, mids, imu[1:]):
        x = propagate(x, u0, u1.t - x.t, u_end=u1, g=g, max_gap=max_gap, u_mid=um)
        out.append(x)
    return out


def predict_range(x: NavState, anchor_p) -> float:
    """Distance from the anchor to the radio at ``R(q) p_iu + p``."""
    d = np.asarray(anchor_p, dtype=float) - x.radio_position()
    return float(np.sqrt(d @ d))


def predict_range_delayed(x_at_tI: NavState, u: ImuSample, anchor_p, t_d: float,
                          g=GRAVITY) -> float:
    """Range after propagating ``x_at_tI`` by ``t_d`` with ``u`` held constant.

    Negative ``t_d`` runs the same model backward in time.
    """
    if t_d == 0.0:
        return predict_range(x_at_tI, anchor_p)
    return predict_range(integrate(x_at_tI, u, t_d, g=g)[0], anchor_p)


def control_affine_fields(x: NavState, g=GRAVITY):
    """Drift and input vector fields over ``(p, v, q, b_a, b_w, p_iu)`` (19 rows).

    ``x_dot = f0 + f1 @ a_m + f2 @ w_m``.
    """
    R = _rot(x.q)
    Xi = geom.xi_matrix(x.q)
    f0 = np.zeros(19)
    f0[0:3] = x.v
    f0[3:6] = -R @ x.b_a - g
    f0[6:10] = -0.5 * Xi @ x.b_w
    f1 = np.zeros((19, 3))
    f1[3:6] = R
    f2 = np.zeros((19, 3))
    f2[6:10] = 0.5 * Xi
    return f0, f1, f2


def inject(x: NavState, dx) -> NavState:
    """Compose ``x (+) dx``: additive except ``q <- q (x) dq(dtheta)``."""
    dx = np.asarray(dx, dtype=float)
    return NavState(
        t=x.t,
        p=x.p + dx[SL_P],
        v=x.v + dx[SL_V],
        q=geom.quat_mul(x.q, geom.small_angle_quat(dx[SL_TH])),
        b_a=x.b_a + dx[SL_BA],
        b_w=x.b_w + dx[SL_BW],
        p_iu=x.p_iu + dx[SL_PIU],
        t_d=float(x.t_d + dx[IDX_TD]),
    )


def state_difference(x_pert: NavState, x_ref: NavState) -> np.ndarray:
    """Error vector ``dx`` such that ``x_pert ~ x_ref (+) dx``."""
    d = np.empty(ERR_DIM)
    d[SL_P] = x_pert.p - x_ref.p
    d[SL_V] = x_pert.v - x_ref.v
    d[SL_TH] = geom.rotation_error(x_ref.q, x_pert.q)
    d[SL_BA] = x_pert.b_a - x_ref.b_a
    d[SL_BW] = x_pert.b_w - x_ref.b_w
    d[SL_PIU] = x_pert.p_iu - x_ref.p_iu
    d[IDX_TD] = x_pert.t_d - x_ref.t_d
    return d
