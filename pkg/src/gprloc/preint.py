"""On-manifold IMU preintegration between two consecutive states.

Samples are integrated with the midpoint rule: the rotation increment uses
the mean of two consecutive gyro readings, velocity and position use the
mean of the two rotated accelerometer readings.  Covariance and first-order
bias Jacobians are propagated alongside, with error state ordered
``[dtheta, dv, dp]`` and bias ordered ``[accel, gyro]``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geom import Rot3, hat, so3_exp, so3_right_jacobian

GRAVITY = np.array([0.0, 0.0, -9.81])


@dataclass(frozen=True)
class ImuNoise:
    accel_noise_density: float = 2e-3   # m/s^2/sqrt(Hz)
    gyro_noise_density: float = 2e-4    # rad/s/sqrt(Hz)
    accel_random_walk: float = 1e-3     # m/s^3/sqrt(Hz)
    gyro_random_walk: float = 1e-5      # rad/s^2/sqrt(Hz)

    def bias_walk_cov(self, dt):
        s = np.concatenate([np.full(3, self.accel_random_walk**2),
                            np.full(3, self.gyro_random_walk**2)])
        return np.diag(s * max(dt, 1e-9))


@dataclass(frozen=True)
class PreintegratedImu:
    dR: Rot3 = field(default_factory=Rot3)
    dv: np.ndarray = field(default_factory=lambda: np.zeros(3))
    dp: np.ndarray = field(default_factory=lambda: np.zeros(3))
    dt: float = 0.0
    cov: np.ndarray = field(default_factory=lambda: np.zeros((9, 9)))
    # d[dtheta, dv, dp] / d[b_accel, b_gyro] at the linearization bias
    bias_jac: np.ndarray = field(default_factory=lambda: np.zeros((9, 6)))
    bias_lin: np.ndarray = field(default_factory=lambda: np.zeros(6))

    def corrected(self, bias):
        """Increments re-expressed for a nearby bias, to first order."""
        db = np.asarray(bias, dtype=float) - self.bias_lin
        J = self.bias_jac
        dR = self.dR.compose(Rot3.exp(J[0:3, 3:6] @ db[3:]))
        dv = self.dv + J[3:6] @ db
        dp = self.dp + J[6:9] @ db
        return dR, dv, dp


def preintegrate(times, accel, gyro, bias_lin=None, noise: ImuNoise | None = None):
    """Compound a run of IMU samples into a single relative measurement.

    ``times`` (n,), ``accel`` and ``gyro`` (n, 3) span the interval between
    the two states, endpoints included.  Fewer than two samples yield the
    identity increment over zero time.
    """
    noise = noise or ImuNoise()
    times = np.asarray(times, dtype=float)
    accel = np.asarray(accel, dtype=float).reshape(-1, 3)
    gyro = np.asarray(gyro, dtype=float).reshape(-1, 3)
    bias = np.zeros(6) if bias_lin is None else np.asarray(bias_lin, dtype=float)
    if len(times) > 1 and np.any(np.diff(times) <= 0):
        raise ValueError("IMU timestamps must be strictly increasing")

    ba, bg = bias[:3], bias[3:]
    R = np.eye(3)
    v = np.zeros(3)
    p = np.zeros(3)
    cov = np.zeros((9, 9))
    J = np.zeros((9, 6))
    A = np.eye(9)
    B = np.zeros((9, 6))
    I3 = np.eye(3)
    sa2 = noise.accel_noise_density**2
    sg2 = noise.gyro_noise_density**2

    for k in range(len(times) - 1):
        dt = times[k + 1] - times[k]
        w = 0.5 * (gyro[k] + gyro[k + 1]) - bg
        a0 = accel[k] - ba
        a1 = accel[k + 1] - ba
        dRk = so3_exp(w * dt)
        Jr = so3_right_jacobian(w * dt)
        R1 = R @ dRk
        aw = 0.5 * (R @ a0 + R1 @ a1)

        m_th = -0.5 * (R @ hat(a0) + R1 @ hat(a1) @ dRk.T)
        m_g = 0.5 * R1 @ hat(a1) @ Jr * dt
        m_a = -0.5 * (R + R1)
        A[0:3, 0:3] = dRk.T
        A[3:6, 0:3] = m_th * dt
        A[6:9, 0:3] = 0.5 * m_th * dt * dt
        A[6:9, 3:6] = I3 * dt
        B[0:3, 3:6] = -Jr * dt
        B[3:6, 0:3] = m_a * dt
        B[3:6, 3:6] = m_g * dt
        B[6:9, 0:3] = 0.5 * m_a * dt * dt
        B[6:9, 3:6] = 0.5 * m_g * dt * dt

        q = np.concatenate([np.full(3, sa2 / dt), np.full(3, sg2 / dt)])
        cov = A @ cov @ A.T + (B * q) @ B.T
        J = A @ J + B

        p = p + v * dt + 0.5 * aw * dt * dt
        v = v + aw * dt
        R = R1

    total = float(times[-1] - times[0]) if len(times) > 1 else 0.0
    return PreintegratedImu(Rot3.from_matrix(R), v, p, total, 0.5 * (cov + cov.T), J, bias.copy())
