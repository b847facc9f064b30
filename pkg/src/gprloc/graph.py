"""Factor graph over navigation states x = [pose, velocity, imu bias].

Every variable has a 15-dim tangent ordered ``[phi, rho, v, b_accel, b_gyro]``.
Poses are retracted on the right (``s * exp(d)``), velocity and bias by
vector addition.  A factor returns a raw residual and one Jacobian block
per connected variable; whitening by the noise model happens in
``Factor.linearize``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geom import (Pose3, Rot3, boxminus, hat, se3_left_jacobian_inv,
                   se3_right_jacobian_inv, so3_right_jacobian,
                   so3_right_jacobian_inv)
from .preint import GRAVITY, ImuNoise, PreintegratedImu

STATE_DIM = 15


@dataclass(frozen=True)
class State:
    pose: Pose3 = field(default_factory=Pose3)
    v: np.ndarray = field(default_factory=lambda: np.zeros(3))
    b: np.ndarray = field(default_factory=lambda: np.zeros(6))

    def __post_init__(self):
        object.__setattr__(self, "v", np.asarray(self.v, dtype=float).reshape(3))
        object.__setattr__(self, "b", np.asarray(self.b, dtype=float).reshape(6))

    def retract(self, d):
        d = np.asarray(d, dtype=float)
        return State(self.pose.boxplus(d[:6]), self.v + d[6:9], self.b + d[9:15])

    def local(self, other: "State"):
        """Tangent at ``other`` reaching self."""
        return np.concatenate([boxminus(self.pose, other.pose), self.v - other.v, self.b - other.b])


class NoiseModel:
    """Gaussian noise with covariance ``cov``; whitens by the inverse Cholesky factor."""

    def __init__(self, cov):
        cov = np.atleast_2d(np.asarray(cov, dtype=float))
        if cov.shape[0] != cov.shape[1] or not np.allclose(cov, cov.T, rtol=1e-10, atol=1e-300):
            raise ValueError("covariance must be square and symmetric")
        try:
            L = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError as exc:
            raise ValueError("covariance is not positive definite") from exc
        self.cov = cov
        self.sqrt_info = np.linalg.inv(L)

    @classmethod
    def from_sigmas(cls, sigmas):
        return cls(np.diag(np.asarray(sigmas, dtype=float) ** 2))

    @property
    def dim(self):
        return self.cov.shape[0]

    def whiten(self, x):
        return self.sqrt_info @ x

    def sigmas(self):
        return np.sqrt(np.diag(self.cov))


class Factor:
    kind = "factor"

    def __init__(self, keys, noise: NoiseModel):
        self.keys = tuple(keys)
        self.noise = noise

    def error(self, values):
        raise NotImplementedError

    def jacobians(self, values):
        """Returns (raw residual, [15-column block per key])."""
        raise NotImplementedError

    def whitened_error(self, values):
        return self.noise.whiten(self.error(values))

    def cost(self, values):
        e = self.whitened_error(values)
        return float(e @ e)

    def linearize(self, values):
        r, Js = self.jacobians(values)
        W = self.noise.sqrt_info
        return W @ r, [W @ J for J in Js]

    def payload(self):
        return ""


class PriorFactor(Factor):
    kind = "prior"

    def __init__(self, key, prior: State, noise: NoiseModel):
        super().__init__((key,), noise)
        if noise.dim != STATE_DIM:
            raise ValueError("prior noise must be 15-dimensional")
        self.prior = prior

    def error(self, values):
        return values[self.keys[0]].local(self.prior)

    def jacobians(self, values):
        x = values[self.keys[0]]
        r = x.local(self.prior)
        J = np.eye(STATE_DIM)
        J[:6, :6] = se3_right_jacobian_inv(r[:6])
        return r, [J]

    def payload(self):
        p = self.prior.pose
        return _fmt(np.concatenate([p.t, p.rot.q, self.prior.v, self.prior.b]))


class RelativePoseFactor(Factor):
    """``boxminus(s_j^-1 s_i, z)`` for keys (i, j): pose of i seen from j."""

    kind = "relative"

    def __init__(self, key_i, key_j, z: Pose3, noise: NoiseModel, kind=None):
        super().__init__((key_i, key_j), noise)
        if noise.dim != 6:
            raise ValueError("relative pose noise must be 6-dimensional")
        self.z = z
        if kind is not None:
            self.kind = kind

    def error(self, values):
        si = values[self.keys[0]].pose
        sj = values[self.keys[1]].pose
        return boxminus(sj.between(si), self.z)

    def jacobians(self, values):
        si = values[self.keys[0]].pose
        sj = values[self.keys[1]].pose
        r = boxminus(sj.between(si), self.z)
        Ji = np.zeros((6, STATE_DIM))
        Jj = np.zeros((6, STATE_DIM))
        Ji[:, :6] = se3_right_jacobian_inv(r)
        Jj[:, :6] = -se3_left_jacobian_inv(r) @ self.z.inverse().adjoint()
        return r, [Ji, Jj]

    def payload(self):
        return _fmt(np.concatenate([self.z.t, self.z.rot.q]))


def gpr_factor(key_old, key_new, z: Pose3, noise: NoiseModel):
    return RelativePoseFactor(key_old, key_new, z, noise, kind="gpr")


def wheel_factor(key_prev, key_next, z: Pose3, noise: NoiseModel):
    return RelativePoseFactor(key_prev, key_next, z, noise, kind="wheel")


def gpr_noise(sigma_x=0.05, sigma_weak=10.0):
    """Only the along-track offset is measured; the other five DOF are near-free."""
    return NoiseModel.from_sigmas([sigma_weak] * 3 + [sigma_x, sigma_weak, sigma_weak])


def wheel_noise(distance, frac=0.01, sigma_rot=0.01, floor=1e-3, lateral_frac=None):
    """Along-track sigma grows with distance; lateral and vertical default to the same
    fraction but can be tightened since the wheels do not slip sideways."""
    s = max(frac * abs(distance), floor)
    lat = s if lateral_frac is None else max(lateral_frac * abs(distance), floor)
    return NoiseModel.from_sigmas([sigma_rot] * 3 + [s, lat, lat])


class ImuFactor(Factor):
    """Preintegration residual (9) plus bias random walk (6) between states i, j."""

    kind = "imu"

    def __init__(self, key_i, key_j, pim: PreintegratedImu, imu_noise: ImuNoise | None = None,
                 gravity=GRAVITY):
        imu_noise = imu_noise or ImuNoise()
        cov = np.zeros((15, 15))
        cov[:9, :9] = pim.cov
        cov[9:, 9:] = imu_noise.bias_walk_cov(pim.dt)
        # a zero-length interval carries no information; keep it well posed
        cov[:9, :9] += np.eye(9) * 1e-12
        super().__init__((key_i, key_j), NoiseModel(cov))
        self.pim = pim
        self.gravity = np.asarray(gravity, dtype=float)

    def _terms(self, xi: State, xj: State):
        pim = self.pim
        dt = pim.dt
        g = self.gravity
        Ri = xi.pose.rot.matrix()
        Rj = xj.pose.rot.matrix()
        dR, dv, dp = pim.corrected(xi.b)
        dv_w = xj.v - xi.v - g * dt
        dp_w = xj.pose.t - xi.pose.t - xi.v * dt - 0.5 * g * dt * dt
        rR_rot = dR.inverse().compose(xi.pose.rot.inverse()).compose(xj.pose.rot)
        rR = rR_rot.log()
        rv = Ri.T @ dv_w - dv
        rp = Ri.T @ dp_w - dp
        rb = xj.b - xi.b
        return np.concatenate([rR, rv, rp, rb]), (Ri, Rj, dv_w, dp_w, rR, rR_rot)

    def error(self, values):
        return self._terms(values[self.keys[0]], values[self.keys[1]])[0]

    def jacobians(self, values):
        xi = values[self.keys[0]]
        xj = values[self.keys[1]]
        r, (Ri, Rj, dv_w, dp_w, rR, rR_rot) = self._terms(xi, xj)
        pim = self.pim
        dt = pim.dt
        Jb = pim.bias_jac
        db = xi.b - pim.bias_lin
        JRg = Jb[0:3, 3:6]
        Jri = so3_right_jacobian_inv(rR)

        Ji = np.zeros((15, STATE_DIM))
        Jj = np.zeros((15, STATE_DIM))
        # rotation
        Ji[0:3, 0:3] = -Jri @ Rj.T @ Ri
        Jj[0:3, 0:3] = Jri
        Ji[0:3, 12:15] = -Jri @ rR_rot.matrix().T @ so3_right_jacobian(JRg @ db[3:]) @ JRg
        # velocity
        Ji[3:6, 0:3] = hat(Ri.T @ dv_w)
        Ji[3:6, 6:9] = -Ri.T
        Jj[3:6, 6:9] = Ri.T
        Ji[3:6, 9:15] = -Jb[3:6]
        # position
        Ji[6:9, 0:3] = hat(Ri.T @ dp_w)
        Ji[6:9, 3:6] = -np.eye(3)
        Jj[6:9, 3:6] = Ri.T @ Rj
        Ji[6:9, 6:9] = -Ri.T * dt
        Ji[6:9, 9:15] = -Jb[6:9]
        # bias random walk
        Ji[9:15, 9:15] = -np.eye(6)
        Jj[9:15, 9:15] = np.eye(6)
        return r, [Ji, Jj]

    def payload(self):
        p = self.pim
        return _fmt(np.concatenate([p.dR.q, p.dv, p.dp, [p.dt]]))


def imu_residual(xi: State, xj: State, pim: PreintegratedImu, gravity=GRAVITY):
    return ImuFactor(0, 1, pim, gravity=gravity).error({0: xi, 1: xj})


def gpr_residual(x_old: State, x_new: State, z: Pose3):
    return boxminus(x_new.pose.between(x_old.pose), z)


def wheel_residual(x_prev: State, x_next: State, z: Pose3):
    return boxminus(x_next.pose.between(x_prev.pose), z)


class FactorGraph:
    def __init__(self):
        self.values: dict = {}
        self.factors: list[Factor] = []

    def __len__(self):
        return len(self.values)

    def add_variable(self, key, state: State):
        if key in self.values:
            raise KeyError(f"duplicate variable {key!r}")
        self.values[key] = state

    def add_factor(self, factor: Factor):
        for k in factor.keys:
            if k not in self.values:
                raise KeyError(f"factor references unknown variable {k!r}")
        self.factors.append(factor)
        return len(self.factors) - 1

    def keys(self):
        return list(self.values)

    def current_estimate(self):
        return dict(self.values)

    def update(self, values):
        for k, v in values.items():
            if k not in self.values:
                raise KeyError(k)
            self.values[k] = v

    def cost(self, values=None):
        values = self.values if values is None else values
        return float(sum(f.cost(values) for f in self.factors))

    def dump(self):
        """One line per factor: kind, keys, measurement, sigma diagonal."""
        lines = []
        for f in self.factors:
            keys = ",".join(str(k) for k in f.keys)
            lines.append(f"{f.kind} {keys} {f.payload()} {_fmt(f.noise.sigmas())}")
        return "\n".join(lines) + ("\n" if lines else "")


def _fmt(a):
    return "[" + ",".join(repr(float(x)) for x in np.asarray(a).ravel()) + "]"
