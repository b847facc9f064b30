"""SO(3)/SE(3) primitives used by the factor graph.

Tangent vectors of SE(3) are ordered ``(phi, rho)``: rotation first (rad),
translation second (m).  The manifold difference is the right difference
``boxminus(a, b) = log(b^-1 * a)`` so that ``boxplus(b, boxminus(a, b)) == a``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# below this angle the sinc-type terms of exp/log use Taylor expansions
SMALL_ANGLE = 1e-6
# the higher-order Jacobian coefficients cancel catastrophically much earlier
_SERIES_ANGLE = 0.1


def hat(v):
    """3-vector to skew-symmetric matrix."""
    x, y, z = np.asarray(v, dtype=float).tolist()
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def vee(m):
    return np.array([m[2, 1], m[0, 2], m[1, 0]])


def _quat_to_matrix(q):
    w, x, y, z = np.asarray(q, dtype=float).tolist()
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def _quat_mul(a, b):
    aw, ax, ay, az = a.tolist()
    bw, bx, by, bz = b.tolist()
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def _matrix_to_quat(m):
    # Shepperd's method: branch on the largest diagonal term
    tr = m[0, 0] + m[1, 1] + m[2, 2]
    if tr > 0:
        s = 2.0 * np.sqrt(tr + 1.0)
        q = [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
    elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
        s = 2.0 * np.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2])
        q = [(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s]
    elif m[1, 1] > m[2, 2]:
        s = 2.0 * np.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2])
        q = [(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s]
    else:
        s = 2.0 * np.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1])
        q = [(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s]
    return np.asarray(q)


def so3_exp_quat(phi):
    phi = np.asarray(phi, dtype=float)
    theta = np.sqrt(phi @ phi)
    if theta < SMALL_ANGLE:
        k = 0.5 - theta * theta / 48.0
    else:
        k = np.sin(0.5 * theta) / theta
    return np.array([np.cos(0.5 * theta), k * phi[0], k * phi[1], k * phi[2]])


def so3_log_quat(q):
    """Rotation vector of a unit quaternion, angle in [0, pi].

    The sign of q is fixed so the scalar part is non-negative; at exactly
    pi (scalar part zero) the vector part is used as given.
    """
    w = q[0]
    v = q[1:]
    if w < 0:
        w, v = -w, -v
    n = np.sqrt(v @ v)
    if n < SMALL_ANGLE:
        # 2*atan(n/w)/n expanded around n = 0
        return (2.0 / w) * (1.0 - n * n / (3.0 * w * w)) * v
    return (2.0 * np.arctan2(n, w) / n) * v


def so3_exp(phi):
    return _quat_to_matrix(so3_exp_quat(phi))


def so3_log(m):
    return so3_log_quat(_matrix_to_quat(m))


def _coeffs_ab(theta):
    """(1 - cos t)/t^2 and (t - sin t)/t^3."""
    if theta < _SERIES_ANGLE:
        t2 = theta * theta
        a = 0.5 - t2 / 24.0 + t2 * t2 / 720.0
        b = 1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0
    else:
        a = (1.0 - np.cos(theta)) / theta**2
        b = (theta - np.sin(theta)) / theta**3
    return a, b


def so3_left_jacobian(phi):
    phi = np.asarray(phi, dtype=float)
    theta = np.sqrt(phi @ phi)
    a, b = _coeffs_ab(theta)
    P = hat(phi)
    return np.eye(3) + a * P + b * (P @ P)


def so3_left_jacobian_inv(phi):
    phi = np.asarray(phi, dtype=float)
    theta = np.sqrt(phi @ phi)
    if theta < _SERIES_ANGLE:
        t2 = theta * theta
        c = 1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30240.0
    else:
        c = 1.0 / theta**2 - 0.5 / (theta * np.tan(0.5 * theta))
    P = hat(phi)
    return np.eye(3) - 0.5 * P + c * (P @ P)


def so3_right_jacobian(phi):
    return so3_left_jacobian(-np.asarray(phi, dtype=float))


def so3_right_jacobian_inv(phi):
    return so3_left_jacobian_inv(-np.asarray(phi, dtype=float))


def _se3_q(phi, rho):
    theta = np.sqrt(phi @ phi)
    if theta < _SERIES_ANGLE:
        t2 = theta * theta
        c1 = 1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0
        c2 = 1.0 / 24.0 - t2 / 720.0 + t2 * t2 / 40320.0
        c3 = 1.0 / 120.0 - t2 / 2520.0 + t2 * t2 / 120960.0
    else:
        s, c = np.sin(theta), np.cos(theta)
        c1 = (theta - s) / theta**3
        c2 = (theta**2 + 2.0 * c - 2.0) / (2.0 * theta**4)
        c3 = (2.0 * theta - 3.0 * s + theta * c) / (2.0 * theta**5)
    P = hat(phi)
    R = hat(rho)
    PR = P @ R
    RP = R @ P
    PRP = PR @ P
    PP = P @ P
    return (0.5 * R + c1 * (PR + RP + PRP) + c2 * (P @ PR + RP @ P - 3.0 * PRP)
            + c3 * (PRP @ P + P @ PRP))


def se3_left_jacobian(xi):
    xi = np.asarray(xi, dtype=float)
    phi, rho = xi[:3], xi[3:]
    J = so3_left_jacobian(phi)
    out = np.zeros((6, 6))
    out[:3, :3] = J
    out[3:, 3:] = J
    out[3:, :3] = _se3_q(phi, rho)
    return out


def se3_left_jacobian_inv(xi):
    xi = np.asarray(xi, dtype=float)
    phi, rho = xi[:3], xi[3:]
    Ji = so3_left_jacobian_inv(phi)
    out = np.zeros((6, 6))
    out[:3, :3] = Ji
    out[3:, 3:] = Ji
    out[3:, :3] = -Ji @ _se3_q(phi, rho) @ Ji
    return out


def se3_right_jacobian(xi):
    return se3_left_jacobian(-np.asarray(xi, dtype=float))


def se3_right_jacobian_inv(xi):
    return se3_left_jacobian_inv(-np.asarray(xi, dtype=float))


@dataclass(frozen=True)
class Rot3:
    """Unit quaternion (w, x, y, z), renormalized on construction."""

    q: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    _m: np.ndarray = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float)
        q = q / np.sqrt(q @ q)
        object.__setattr__(self, "q", q)

    @classmethod
    def identity(cls):
        return cls()

    @classmethod
    def exp(cls, phi):
        return cls(so3_exp_quat(phi))

    @classmethod
    def from_matrix(cls, m):
        return cls(_matrix_to_quat(np.asarray(m, dtype=float)))

    @classmethod
    def rz(cls, yaw):
        return cls(np.array([np.cos(0.5 * yaw), 0.0, 0.0, np.sin(0.5 * yaw)]))

    def log(self):
        return so3_log_quat(self.q)

    def matrix(self):
        if self._m is None:
            object.__setattr__(self, "_m", _quat_to_matrix(self.q))
        return self._m

    def compose(self, other):
        return Rot3(_quat_mul(self.q, other.q))

    def inverse(self):
        return Rot3(self.q * np.array([1.0, -1.0, -1.0, -1.0]))

    def act(self, p):
        return self.matrix() @ np.asarray(p, dtype=float)

    def yaw(self):
        m = self.matrix()
        return float(np.arctan2(m[1, 0], m[0, 0]))

    def __mul__(self, other):
        return self.compose(other)


@dataclass(frozen=True)
class Pose3:
    rot: Rot3 = field(default_factory=Rot3)
    t: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "t", np.asarray(self.t, dtype=float).reshape(3))

    @classmethod
    def identity(cls):
        return cls()

    @classmethod
    def from_xyz_yaw(cls, x, y, z=0.0, yaw=0.0):
        return cls(Rot3.rz(yaw), np.array([x, y, z], dtype=float))

    @classmethod
    def from_matrix(cls, m):
        m = np.asarray(m, dtype=float)
        return cls(Rot3.from_matrix(m[:3, :3]), m[:3, 3])

    @classmethod
    def exp(cls, xi):
        xi = np.asarray(xi, dtype=float)
        phi, rho = xi[:3], xi[3:]
        return cls(Rot3.exp(phi), so3_left_jacobian(phi) @ rho)

    def log(self):
        phi = self.rot.log()
        return np.concatenate([phi, so3_left_jacobian_inv(phi) @ self.t])

    def matrix(self):
        m = np.eye(4)
        m[:3, :3] = self.rot.matrix()
        m[:3, 3] = self.t
        return m

    def compose(self, other):
        return Pose3(self.rot.compose(other.rot), self.t + self.rot.act(other.t))

    def inverse(self):
        rinv = self.rot.inverse()
        return Pose3(rinv, -rinv.act(self.t))

    def between(self, other):
        """self^-1 * other."""
        return self.inverse().compose(other)

    def act(self, p):
        return self.rot.act(p) + self.t

    def adjoint(self):
        R = self.rot.matrix()
        out = np.zeros((6, 6))
        out[:3, :3] = R
        out[3:, 3:] = R
        out[3:, :3] = hat(self.t) @ R
        return out

    def boxplus(self, xi):
        return self.compose(Pose3.exp(xi))

    def boxminus(self, other):
        return boxminus(self, other)

    def __mul__(self, other):
        return self.compose(other)


def compose(a: Pose3, b: Pose3) -> Pose3:
    return a.compose(b)


def inverse(a: Pose3) -> Pose3:
    return a.inverse()


def boxplus(a: Pose3, xi) -> Pose3:
    return a.compose(Pose3.exp(xi))


def boxminus(a: Pose3, b: Pose3):
    """log(b^-1 a): the tangent at b that carries b onto a."""
    return b.inverse().compose(a).log()


def boxminus_jacobians(a: Pose3, b: Pose3):
    """Residual and its Jacobians w.r.t. right perturbations of a and b."""
    r = boxminus(a, b)
    return r, se3_right_jacobian_inv(r), -se3_left_jacobian_inv(r)
