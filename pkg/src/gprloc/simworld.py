"""Synthetic subsurface worlds and simulated data-collection runs.

The forward model places a Ricker pulse at the two-way travel time of every
point scatterer and planar layer below the antenna, then adds the receiver
artifacts the preprocessing chain is meant to remove: a DC offset with a
slow "wow" sinusoid, ringing replicas of the direct-coupling pulse, and
white noise.  Times are in ns, distances in m, velocity in m/ns.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geom import Pose3, Rot3
from .preprocess import Trace

G = 9.81


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class WorldConfig:
    x_range: tuple = (-2.0, 22.0)
    y_range: tuple = (-2.0, 2.0)
    density: float = 1.0              # scatterers per m^2 of ground
    depth_range: tuple = (0.5, 1.5)
    reflectivity_range: tuple = (0.3, 1.0)
    n_layers: int = 0
    layer_depth_range: tuple = (0.8, 2.5)
    layer_reflectivity: float = 0.3
    max_dip: float = 0.05             # rad
    undulation: float = 0.0           # m, amplitude of a sinusoidal interface relief
    undulation_wavelength: tuple = (3.0, 8.0)
    velocity: float = 0.1             # m/ns
    attenuation: float = 0.2          # 1/m

    def validate(self):
        if not 0.05 <= self.velocity <= 0.3:
            raise ConfigError("wave velocity outside the 0.05-0.3 m/ns soil range")
        if self.density < 0 or self.attenuation < 0 or self.n_layers < 0:
            raise ConfigError("density, attenuation and layer count must be non-negative")
        if self.undulation < 0 or min(self.undulation_wavelength) <= 0:
            raise ConfigError("relief amplitude must be >= 0 and wavelengths positive")
        if self.depth_range[0] <= 0 or self.layer_depth_range[0] <= 0:
            raise ConfigError("depths must be positive")
        if self.x_range[1] <= self.x_range[0] or self.y_range[1] <= self.y_range[0]:
            raise ConfigError("empty world extent")
        lo, hi = self.reflectivity_range
        if not 0 <= lo <= hi <= 1:
            raise ConfigError("reflectivity must lie in [0, 1]")


PRESETS = {
    "dense": dict(density=3.0),
    "sparse": dict(density=0.08),
}


def world_config(preset="dense", **overrides):
    kw = dict(PRESETS[preset])
    kw.update(overrides)
    return WorldConfig(**kw)


@dataclass(frozen=True)
class SubsurfaceWorld:
    scatterers: np.ndarray      # (n, 4): x, y, depth, reflectivity
    layers: np.ndarray          # (m, 7): depth at origin, reflectivity, dip, dip azimuth,
                                #   relief amplitude, relief wavelength, relief phase
    velocity: float
    attenuation: float
    seed: int

    @property
    def peak_amplitude(self):
        """Largest reflector amplitude seen directly overhead."""
        amps = [0.0]
        for d, refl in zip(self.scatterers[:, 2], self.scatterers[:, 3]):
            amps.append(refl * np.exp(-self.attenuation * 2 * d) / (2 * d))
        for d, refl in zip(self.layers[:, 0], self.layers[:, 1]):
            amps.append(refl * np.exp(-self.attenuation * 2 * d) / (2 * d))
        return float(max(amps))


def build_world(seed: int, cfg: WorldConfig | None = None) -> SubsurfaceWorld:
    cfg = cfg or WorldConfig()
    cfg.validate()
    rng = np.random.default_rng(seed)
    area = (cfg.x_range[1] - cfg.x_range[0]) * (cfg.y_range[1] - cfg.y_range[0])
    n = rng.poisson(cfg.density * area)
    sc = np.column_stack([
        rng.uniform(*cfg.x_range, n),
        rng.uniform(*cfg.y_range, n),
        rng.uniform(*cfg.depth_range, n),
        rng.uniform(*cfg.reflectivity_range, n),
    ]) if n else np.zeros((0, 4))
    m = cfg.n_layers
    layers = np.column_stack([
        np.sort(rng.uniform(*cfg.layer_depth_range, m)),
        np.full(m, cfg.layer_reflectivity),
        rng.uniform(-cfg.max_dip, cfg.max_dip, m),
        rng.uniform(0, 2 * np.pi, m),
        np.full(m, cfg.undulation),
        rng.uniform(*cfg.undulation_wavelength, m),
        rng.uniform(0, 2 * np.pi, m),
    ]) if m else np.zeros((0, 7))
    return SubsurfaceWorld(sc, layers, cfg.velocity, cfg.attenuation, seed)


@dataclass(frozen=True)
class SensorConfig:
    samples: int = 256
    time_window_ns: float = 48.0
    center_freq_mhz: float = 500.0
    noise_sigma: float = 0.0          # fraction of the world's peak reflector amplitude
    wow_amplitude: float = 0.5
    wow_freq_mhz: float = 3.0
    ringing_amplitude: float = 0.5
    ringing_period_ns: float = 9.0
    ringing_decay: float = 0.5
    direct_delay_ns: float = 2.0
    trigger_spacing: float = 0.05     # m of wheel travel between traces

    def validate(self):
        if self.samples < 64:
            raise ConfigError("need at least 64 samples per trace")
        if self.time_window_ns <= 0 or self.trigger_spacing <= 0:
            raise ConfigError("time window and trigger spacing must be positive")

    @property
    def dt(self):
        return self.time_window_ns / self.samples


def ricker(t, freq_ghz):
    a = (np.pi * freq_ghz * t) ** 2
    return (1.0 - 2.0 * a) * np.exp(-a)


def _reflections(world: SubsurfaceWorld, xy, cfg: SensorConfig):
    """Arrival times (ns) and amplitudes of every reflector for an antenna at xy."""
    v = world.velocity
    tmax = cfg.time_window_ns + 4.0e3 / cfg.center_freq_mhz
    times, amps = [], []
    if len(world.scatterers):
        sc = world.scatterers
        r2 = (sc[:, 0] - xy[0]) ** 2 + (sc[:, 1] - xy[1]) ** 2
        rng_ = np.sqrt(sc[:, 2] ** 2 + r2)
        t = 2.0 * rng_ / v
        keep = t < tmax
        path = 2.0 * rng_[keep]
        times.append(t[keep])
        amps.append(sc[keep, 3] * np.exp(-world.attenuation * path) / path)
    if len(world.layers):
        L = world.layers
        u = np.cos(L[:, 3]) * xy[0] + np.sin(L[:, 3]) * xy[1]
        d = L[:, 0] + np.tan(L[:, 2]) * u + L[:, 4] * np.sin(2 * np.pi * u / L[:, 5] + L[:, 6])
        d = np.maximum(d, 1e-3)
        times.append(2.0 * d / v)
        amps.append(L[:, 1] * np.exp(-world.attenuation * 2 * d) / (2 * d))
    if not times:
        return np.zeros(0), np.zeros(0)
    return np.concatenate(times), np.concatenate(amps)


def trace_at(world: SubsurfaceWorld, pose: Pose3, cfg: SensorConfig | None = None,
             rng: np.random.Generator | None = None, position: float = 0.0) -> Trace:
    """Simulated trace for a ground-coupled antenna at ``pose``."""
    cfg = cfg or SensorConfig()
    t = np.arange(cfg.samples) * cfg.dt
    f = cfg.center_freq_mhz * 1e-3
    arr, amp = _reflections(world, pose.t[:2], cfg)
    out = np.zeros(cfg.samples)
    if arr.size:
        out += ricker(t[None, :] - arr[:, None], f).T @ amp
    if cfg.ringing_amplitude:
        k = np.arange(int(cfg.time_window_ns // cfg.ringing_period_ns) + 2)
        delays = cfg.direct_delay_ns + k * cfg.ringing_period_ns
        out += cfg.ringing_amplitude * (ricker(t[None, :] - delays[:, None], f).T @ cfg.ringing_decay ** k)
    if cfg.wow_amplitude:
        out += cfg.wow_amplitude * (1.0 + np.sin(2 * np.pi * cfg.wow_freq_mhz * 1e-3 * t))
    if cfg.noise_sigma and rng is not None:
        out += rng.normal(0.0, cfg.noise_sigma * world.peak_amplitude, cfg.samples)
    return Trace(out, cfg.dt, position)


# --------------------------------------------------------------------------
# trajectories


def _smooth(tau):
    """Quintic smoothstep and its first two derivatives."""
    tau = np.clip(tau, 0.0, 1.0)
    s = tau**3 * (10 - 15 * tau + 6 * tau**2)
    ds = 30 * tau**2 * (1 - tau) ** 2
    dds = 60 * tau * (1 - tau) * (1 - 2 * tau)
    return s, ds, dds


def _ramp_profile(t, total, vmax, ramp):
    """Distance, speed, acceleration along a rest-to-rest move of length ``total``.

    Speed rises along a smoothstep over ``ramp`` seconds, cruises, then falls.
    """
    if total <= 0:
        z = np.zeros_like(t)
        return z, z, z
    vmax = min(vmax, total / ramp)
    t_cruise = (total - vmax * ramp) / vmax
    T = 2 * ramp + t_cruise
    t = np.clip(t, 0.0, T)
    s = np.zeros_like(t)
    v = np.zeros_like(t)
    a = np.zeros_like(t)
    up = t < ramp
    tau = t[up] / ramp
    S, dS, ddS = _smooth(tau)
    s[up] = vmax * ramp * (2.5 * tau**4 - 3 * tau**5 + tau**6)
    v[up] = vmax * S
    a[up] = vmax * dS / ramp
    mid = (t >= ramp) & (t <= ramp + t_cruise)
    s[mid] = 0.5 * vmax * ramp + vmax * (t[mid] - ramp)
    v[mid] = vmax
    dn = t > ramp + t_cruise
    tau = (t[dn] - ramp - t_cruise) / ramp
    S, dS, ddS = _smooth(tau)
    s[dn] = total - vmax * ramp * (2.5 * (1 - tau) ** 4 - 3 * (1 - tau) ** 5 + (1 - tau) ** 6)
    v[dn] = vmax * (1 - S)
    a[dn] = -vmax * dS / ramp
    return s, v, a


def _profile_duration(total, vmax, ramp):
    if total <= 0:
        return 0.0
    vmax = min(vmax, total / ramp)
    return 2 * ramp + (total - vmax * ramp) / vmax


@dataclass
class _Segment:
    kind: str          # "straight", "pivot", "dwell"
    t0: float
    duration: float
    start: np.ndarray
    yaw0: float
    amount: float      # length (m) or signed yaw change (rad)
    vmax: float
    ramp: float


class Trajectory:
    """Planar piecewise-polynomial motion: straight runs and in-place pivots.

    The vehicle starts and ends every segment at rest, so heading always
    follows the direction of travel and the motion is C^2.
    """

    def __init__(self, segments):
        self.segments = segments
        self.duration = segments[-1].t0 + segments[-1].duration if segments else 0.0

    @classmethod
    def from_waypoints(cls, waypoints, speed=1.0, yaw_rate=0.6, ramp=1.0, dwell=1.0):
        pts = np.asarray(waypoints, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 2:
            raise ConfigError("need at least two planar waypoints")
        if speed <= 0 or yaw_rate <= 0 or ramp <= 0:
            raise ConfigError("speed, yaw rate and ramp time must be positive")
        segs = []
        t = 0.0
        legs = np.diff(pts, axis=0)
        if np.any(np.linalg.norm(legs, axis=1) < 1e-9):
            raise ConfigError("consecutive waypoints coincide")
        yaw = float(np.arctan2(legs[0, 1], legs[0, 0]))
        pos = pts[0].copy()
        if dwell > 0:
            segs.append(_Segment("dwell", t, dwell, pos.copy(), yaw, 0.0, 0.0, ramp))
            t += dwell
        for i, leg in enumerate(legs):
            heading = float(np.arctan2(leg[1], leg[0]))
            dyaw = (heading - yaw + np.pi) % (2 * np.pi) - np.pi
            if abs(abs(dyaw) - np.pi) < 1e-9:
                dyaw = np.pi  # turn around to the left
            if abs(dyaw) > 1e-9:
                d = _profile_duration(abs(dyaw), yaw_rate, ramp)
                segs.append(_Segment("pivot", t, d, pos.copy(), yaw, dyaw, yaw_rate, ramp))
                t += d
                yaw = yaw + dyaw
            L = float(np.linalg.norm(leg))
            d = _profile_duration(L, speed, ramp)
            segs.append(_Segment("straight", t, d, pos.copy(), yaw, L, speed, ramp))
            t += d
            pos = pts[i + 1].copy()
        if dwell > 0:
            segs.append(_Segment("dwell", t, dwell, pos.copy(), yaw, 0.0, 0.0, ramp))
        return cls(segs)

    def sample(self, times):
        """Position (n,3), yaw (n,), velocity (n,3), acceleration (n,3), yaw rate (n,),
        ground speed (n,), cumulative distance (n,)."""
        times = np.asarray(times, dtype=float)
        n = len(times)
        pos = np.zeros((n, 3))
        yaw = np.zeros(n)
        vel = np.zeros((n, 3))
        acc = np.zeros((n, 3))
        yr = np.zeros(n)
        dist = np.zeros(n)
        travelled = 0.0
        starts = np.array([s.t0 for s in self.segments])
        idx = np.clip(np.searchsorted(starts, times, side="right") - 1, 0, len(self.segments) - 1)
        base = []
        for s in self.segments:
            base.append(travelled)
            if s.kind == "straight":
                travelled += s.amount
        for j, s in enumerate(self.segments):
            m = idx == j
            if not np.any(m):
                continue
            tl = times[m] - s.t0
            if s.kind == "dwell":
                pos[m, :2] = s.start
                yaw[m] = s.yaw0
                dist[m] = base[j]
            elif s.kind == "straight":
                u = np.array([np.cos(s.yaw0), np.sin(s.yaw0)])
                d, v, a = _ramp_profile(tl, s.amount, s.vmax, s.ramp)
                pos[m, :2] = s.start + d[:, None] * u
                vel[m, :2] = v[:, None] * u
                acc[m, :2] = a[:, None] * u
                yaw[m] = s.yaw0
                dist[m] = base[j] + d
            else:
                sgn = np.sign(s.amount)
                d, v, a = _ramp_profile(tl, abs(s.amount), s.vmax, s.ramp)
                pos[m, :2] = s.start
                yaw[m] = s.yaw0 + sgn * d
                yr[m] = sgn * v
                dist[m] = base[j]
        speed = np.linalg.norm(vel, axis=1)
        return pos, yaw, vel, acc, yr, speed, dist

    def pose(self, t) -> Pose3:
        pos, yaw, *_ = self.sample([t])
        return Pose3(Rot3.rz(yaw[0]), pos[0])


def forward_backward(length=20.0, y=0.0):
    return [(0.0, y), (length, y), (0.0, y)]


def square_loop(side=8.0, laps=2):
    corners = [(0.0, 0.0), (side, 0.0), (side, side), (0.0, side)]
    return corners * laps + [(0.0, 0.0)]


# --------------------------------------------------------------------------
# sensor streams


@dataclass(frozen=True)
class RunConfig:
    imu_rate: float = 100.0
    wheel_rate: float = 50.0
    speed: float = 1.0
    yaw_rate: float = 0.6
    ramp: float = 1.0
    dwell: float = 1.0
    accel_noise_density: float = 2e-3
    gyro_noise_density: float = 5e-5
    accel_bias_sigma: float = 0.0
    gyro_bias_sigma: float = 0.0
    accel_random_walk: float = 0.0
    gyro_random_walk: float = 0.0
    wheel_scale_sigma: float = 0.0    # stationary std of the multiplicative scale error
    wheel_scale_tau: float = 20.0     # s, correlation time of the scale error
    wheel_noise: float = 0.0          # m per sample, white

    def validate(self):
        if self.imu_rate < 50:
            raise ConfigError("IMU rate must be at least 50 Hz")
        if not 0 < self.wheel_rate <= self.imu_rate:
            raise ConfigError("wheel rate must be positive and not exceed the IMU rate")


def noiseless(cfg: RunConfig | None = None) -> RunConfig:
    base = cfg or RunConfig()
    return RunConfig(imu_rate=base.imu_rate, wheel_rate=base.wheel_rate, speed=base.speed,
                     yaw_rate=base.yaw_rate, ramp=base.ramp, dwell=base.dwell,
                     accel_noise_density=0.0, gyro_noise_density=0.0)


@dataclass
class RawDataset:
    gpr_t: np.ndarray
    gpr_dist: np.ndarray
    gpr: np.ndarray             # (n_traces, samples)
    dt_ns: float
    imu_t: np.ndarray
    accel: np.ndarray
    gyro: np.ndarray
    wheel_t: np.ndarray
    wheel_dist: np.ndarray
    truth_t: np.ndarray
    truth_pos: np.ndarray
    truth_quat: np.ndarray      # (w, x, y, z)
    meta: dict = field(default_factory=dict)

    def traces(self):
        for t, d, s in zip(self.gpr_t, self.gpr_dist, self.gpr):
            yield float(t), Trace(s, self.dt_ns, float(d))

    def truth_pose(self, i) -> Pose3:
        return Pose3(Rot3(self.truth_quat[i]), self.truth_pos[i])

    def truth_at(self, t) -> Pose3:
        """Truth pose at the nearest truth timestamp."""
        i = int(np.argmin(np.abs(self.truth_t - t)))
        return self.truth_pose(i)


def simulate_run(world: SubsurfaceWorld, waypoints, sensor: SensorConfig | None = None,
                 run: RunConfig | None = None, seed: int = 0, trajectory: Trajectory | None = None):
    sensor = sensor or SensorConfig()
    run = run or RunConfig()
    sensor.validate()
    run.validate()
    traj = trajectory or Trajectory.from_waypoints(waypoints, run.speed, run.yaw_rate, run.ramp, run.dwell)
    if traj.duration * run.imu_rate < 2:
        raise ConfigError("trajectory too short for the requested IMU rate")
    ss = np.random.SeedSequence(seed)
    r_imu, r_bias, r_wheel, r_gpr = (np.random.default_rng(s) for s in ss.spawn(4))

    dt = 1.0 / run.imu_rate
    n = int(np.floor(traj.duration * run.imu_rate + 1e-9)) + 1
    t = np.arange(n) * dt
    pos, yaw, vel, acc, yr, speed, dist = traj.sample(t)

    # IMU: body-frame specific force and angular rate
    c, s = np.cos(yaw), np.sin(yaw)
    f_w = acc - np.array([0.0, 0.0, -G])
    f_b = np.column_stack([c * f_w[:, 0] + s * f_w[:, 1], -s * f_w[:, 0] + c * f_w[:, 1], f_w[:, 2]])
    w_b = np.column_stack([np.zeros(n), np.zeros(n), yr])
    ba = r_bias.normal(0, run.accel_bias_sigma, 3) + np.cumsum(
        r_bias.normal(0, run.accel_random_walk * np.sqrt(dt), (n, 3)), axis=0)
    bg = r_bias.normal(0, run.gyro_bias_sigma, 3) + np.cumsum(
        r_bias.normal(0, run.gyro_random_walk * np.sqrt(dt), (n, 3)), axis=0)
    accel = f_b + ba + r_imu.normal(0, run.accel_noise_density * np.sqrt(run.imu_rate), (n, 3))
    gyro = w_b + bg + r_imu.normal(0, run.gyro_noise_density * np.sqrt(run.imu_rate), (n, 3))

    # wheel odometer: true increments times a slowly varying scale, plus white noise
    inc = np.diff(dist, prepend=0.0)
    rho = np.exp(-dt / run.wheel_scale_tau) if run.wheel_scale_tau > 0 else 0.0
    eps = np.zeros(n)
    e = r_wheel.normal(0, run.wheel_scale_sigma)
    drive = r_wheel.normal(0, 1, n) * run.wheel_scale_sigma * np.sqrt(1 - rho**2)
    for k in range(n):
        eps[k] = e
        e = rho * e + drive[k]
    meas_inc = inc * (1.0 + eps)
    if run.wheel_noise:
        meas_inc = meas_inc + (inc > 0) * r_wheel.normal(0, run.wheel_noise, n)
    meas_inc = np.maximum(meas_inc, 0.0)
    meas = np.cumsum(meas_inc)

    wheel_step = max(1, int(round(run.imu_rate / run.wheel_rate)))
    wheel_idx = np.arange(0, n, wheel_step)

    # GPR triggers on the odometer: one trace per trigger_spacing of measured travel
    k = np.arange(1, int(np.floor(meas[-1] / sensor.trigger_spacing + 1e-9)) + 1)
    targets = k * sensor.trigger_spacing
    targets = targets[targets <= meas[-1] + 1e-9]
    j = np.clip(np.searchsorted(meas, targets - 1e-12, side="left"), 1, n - 1)
    frac = (targets - meas[j - 1]) / np.maximum(meas[j] - meas[j - 1], 1e-15)
    frac = np.clip(frac, 0, 1)
    # the scale error is constant within an IMU step, so the trigger falls at a
    # known true distance; bisect the trajectory for the matching time
    s_star = dist[j - 1] + frac * (dist[j] - dist[j - 1])
    lo, hi = t[j - 1].copy(), t[j].copy()
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        below = traj.sample(mid)[6] < s_star
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    gpr_t = 0.5 * (lo + hi)
    gpos, gyaw, *_ = traj.sample(gpr_t)
    gpr = np.zeros((len(gpr_t), sensor.samples))
    for i in range(len(gpr_t)):
        pose = Pose3(Rot3.rz(gyaw[i]), gpos[i])
        gpr[i] = trace_at(world, pose, sensor, r_gpr).samples

    quat = np.column_stack([np.cos(0.5 * yaw), np.zeros(n), np.zeros(n), np.sin(0.5 * yaw)])
    meta = {
        "seed": int(seed),
        "world_seed": int(world.seed),
        "gravity": G,
        "imu_rate": run.imu_rate,
        "wheel_rate": run.wheel_rate,
        "trigger_spacing": sensor.trigger_spacing,
        "center_freq_mhz": sensor.center_freq_mhz,
        "samples": sensor.samples,
        "time_window_ns": sensor.time_window_ns,
        "true_accel_bias": ba[0].tolist(),
        "true_gyro_bias": bg[0].tolist(),
    }
    return RawDataset(
        gpr_t=gpr_t, gpr_dist=targets, gpr=gpr, dt_ns=sensor.dt,
        imu_t=t, accel=accel, gyro=gyro,
        wheel_t=t[wheel_idx], wheel_dist=meas[wheel_idx],
        truth_t=t, truth_pos=pos, truth_quat=quat, meta=meta,
    ), traj
