"""Quaternion and rotation helpers.

Conventions used throughout the package:

- Quaternions are arrays ``[q0, qx, qy, qz]`` (scalar first) composed with the
  Hamilton product.
- ``quat_to_rot(q_WI)`` maps IMU-frame vectors into the world frame.
- Angular rates are body-frame, so ``q_dot = 0.5 * omega_matrix(w) @ q``,
  which equals ``0.5 * q (x) [0, w]``.
- Euler angles are roll-pitch-yaw with ``R = Rz(yaw) @ Ry(pitch) @ Rx(roll)``.
- After normalization the sign is fixed so that ``q0 >= 0``.

Most functions broadcast over leading axes, so a stack of quaternions with
shape ``(N, 4)`` is accepted wherever a single quaternion is.
"""

from __future__ import annotations

import warnings

import numpy as np

IDENTITY = np.array([1.0, 0.0, 0.0, 0.0])

GIMBAL_MARGIN = 1e-3


class GimbalLockWarning(RuntimeWarning):
    """Pitch is within ``GIMBAL_MARGIN`` of +-pi/2; roll and yaw are ill-defined."""


def normalize(q):
    q = np.asarray(q, dtype=float)
    n = np.linalg.norm(q, axis=-1, keepdims=True)
    q = q / n
    return np.where(q[..., :1] < 0.0, -q, q)


def conj(q):
    q = np.asarray(q, dtype=float)
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def quat_mul(a, b):
    """Hamilton product ``a (x) b``, renormalized."""
    return normalize(_mul_raw(a, b))


def _mul_raw(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    a0, av = a[..., :1], a[..., 1:]
    b0, bv = b[..., :1], b[..., 1:]
    s = a0 * b0 - np.sum(av * bv, axis=-1, keepdims=True)
    v = a0 * bv + b0 * av + np.cross(av, bv)
    return np.concatenate([s, v], axis=-1)


def quat_to_rot(q):
    q = normalize(q)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    R = np.empty(q.shape[:-1] + (3, 3))
    R[..., 0, 0] = 1 - 2 * (y * y + z * z)
    R[..., 0, 1] = 2 * (x * y - w * z)
    R[..., 0, 2] = 2 * (x * z + w * y)
    R[..., 1, 0] = 2 * (x * y + w * z)
    R[..., 1, 1] = 1 - 2 * (x * x + z * z)
    R[..., 1, 2] = 2 * (y * z - w * x)
    R[..., 2, 0] = 2 * (x * z - w * y)
    R[..., 2, 1] = 2 * (y * z + w * x)
    R[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return R


def rot_to_quat(R):
    """Inverse of :func:`quat_to_rot` for a single rotation matrix."""
    R = np.asarray(R, dtype=float)
    tr = np.trace(R)
    if tr > 0:
        s = 2.0 * np.sqrt(tr + 1.0)
        q = [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        q = [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
    elif R[1, 1] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
        q = [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
    else:
        s = 2.0 * np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
        q = [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
    return normalize(q)


def skew(v):
    """Cross-product matrix: ``skew(v) @ w == np.cross(v, w)``."""
    v = np.asarray(v, dtype=float)
    x, y, z = v[..., 0], v[..., 1], v[..., 2]
    o = np.zeros_like(x)
    return np.stack(
        [np.stack([o, -z, y], -1), np.stack([z, o, -x], -1), np.stack([-y, x, o], -1)], axis=-2
    )


def omega_matrix(w):
    """4x4 rate matrix ``[[0, -w^T], [w, -[w]x]]``."""
    w = np.asarray(w, dtype=float)
    M = np.zeros(w.shape[:-1] + (4, 4))
    M[..., 0, 1:] = -w
    M[..., 1:, 0] = w
    M[..., 1:, 1:] = -skew(w)
    return M


def xi_matrix(q):
    """4x3 matrix with ``xi_matrix(q) @ w == omega_matrix(w) @ q``.

    Top row is ``-qv^T``; the lower block is ``q0 I + [qv]x``.
    """
    q = np.asarray(q, dtype=float)
    X = np.empty(q.shape[:-1] + (4, 3))
    X[..., 0, :] = -q[..., 1:]
    X[..., 1:, :] = q[..., :1, None] * np.eye(3) + skew(q[..., 1:])
    return X


def small_angle_quat(dtheta):
    """Error quaternion ``normalize([1, dtheta / 2])``; valid for ``|dtheta| << 1``."""
    dtheta = np.asarray(dtheta, dtype=float)
    q = np.concatenate([np.ones(dtheta.shape[:-1] + (1,)), 0.5 * dtheta], axis=-1)
    return normalize(q)


def quat_exp(rotvec):
    """Exact rotation-vector to quaternion map."""
    rotvec = np.asarray(rotvec, dtype=float)
    angle = np.linalg.norm(rotvec, axis=-1, keepdims=True)
    half = 0.5 * angle
    # sinc form keeps the zero-angle limit finite
    k = 0.5 * np.sinc(half / np.pi)
    return normalize(np.concatenate([np.cos(half), k * rotvec], axis=-1))


def quat_log(q):
    """Rotation vector of ``q`` (inverse of :func:`quat_exp`)."""
    q = normalize(q)
    vn = np.linalg.norm(q[..., 1:], axis=-1, keepdims=True)
    angle = 2.0 * np.arctan2(vn, q[..., :1])
    scale = np.where(vn > 1e-12, angle / np.where(vn > 1e-12, vn, 1.0), 2.0)
    return scale * q[..., 1:]


def axis_angle_quat(axis, angle):
    axis = np.asarray(axis, dtype=float)
    return quat_exp(axis / np.linalg.norm(axis) * angle)


def wrap_angle(a):
    """Wrap to (-pi, pi]."""
    a = np.asarray(a, dtype=float)
    w = np.mod(a + np.pi, 2.0 * np.pi) - np.pi
    return np.where(w == -np.pi, np.pi, w)


def quat_to_euler(q, warn=True):
    """Roll, pitch, yaw in radians (``R = Rz(yaw) Ry(pitch) Rx(roll)``).

    Emits :class:`GimbalLockWarning` when any pitch is within
    ``GIMBAL_MARGIN`` of +-pi/2; the angles are still returned.
    """
    q = normalize(q)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    roll = np.arctan2(2 * (w * x + y * z), 1 - 2 * (x * x + y * y))
    sp = np.clip(2 * (w * y - z * x), -1.0, 1.0)
    pitch = np.arcsin(sp)
    yaw = np.arctan2(2 * (w * z + x * y), 1 - 2 * (y * y + z * z))
    if warn and np.any(np.abs(pitch) > np.pi / 2 - GIMBAL_MARGIN):
        warnings.warn("pitch near +-pi/2, Euler angles degenerate", GimbalLockWarning, stacklevel=2)
    return np.stack([wrap_angle(roll), wrap_angle(pitch), wrap_angle(yaw)], axis=-1)


def euler_to_quat(euler):
    euler = np.asarray(euler, dtype=float)
    hr, hp, hy = 0.5 * euler[..., 0], 0.5 * euler[..., 1], 0.5 * euler[..., 2]
    cr, sr = np.cos(hr), np.sin(hr)
    cp, sp = np.cos(hp), np.sin(hp)
    cy, sy = np.cos(hy), np.sin(hy)
    q = np.stack(
        [
            cr * cp * cy + sr * sp * sy,
            sr * cp * cy - cr * sp * sy,
            cr * sp * cy + sr * cp * sy,
            cr * cp * sy - sr * sp * cy,
        ],
        axis=-1,
    )
    return normalize(q)


def euler_to_rot(euler):
    return quat_to_rot(euler_to_quat(euler))


def euler_rate_matrix(roll, pitch):
    """Map Euler-angle rates to body angular velocity.

    Returns ``E`` and its partial derivatives ``dE/droll, dE/dpitch`` so that
    ``w_body = E @ [roll_dot, pitch_dot, yaw_dot]``.
    """
    sr, cr = np.sin(roll), np.cos(roll)
    sp, cp = np.sin(pitch), np.cos(pitch)
    E = np.array([[1.0, 0.0, -sp], [0.0, cr, sr * cp], [0.0, -sr, cr * cp]])
    dE_dr = np.array([[0.0, 0.0, 0.0], [0.0, -sr, cr * cp], [0.0, -cr, -sr * cp]])
    dE_dp = np.array([[0.0, 0.0, -cp], [0.0, 0.0, -sr * sp], [0.0, 0.0, -cr * sp]])
    return E, dE_dr, dE_dp


def rotation_error(q_est, q_true):
    """Local rotation error ``dtheta`` with ``q_true = q_est (x) exp(dtheta)``."""
    return quat_log(_mul_raw(conj(q_est), q_true))
