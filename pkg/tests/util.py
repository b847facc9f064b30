"""Random generators and finite-difference helpers for the tests."""
import numpy as np

from gprloc.geom import Pose3
from gprloc.graph import State
from gprloc.preprocess import PreprocessConfig, condition_trace
from gprloc.simworld import SensorConfig, build_world, trace_at, world_config

FD_STEP = 1e-6


def random_pose(rng, max_angle=np.pi - 0.1, scale=2.0):
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    phi = axis * rng.uniform(0, max_angle)
    return Pose3.exp(np.concatenate([phi, rng.normal(size=3) * scale]))


def random_state(rng):
    return State(random_pose(rng, 1.5), rng.normal(size=3), rng.normal(size=6) * 0.05)


def numeric_jacobians(factor, values, step=FD_STEP):
    """Central differences of the raw residual along each variable's tangent."""
    out = []
    for k in factor.keys:
        r0 = factor.error(values)
        N = np.zeros((len(r0), 15))
        for i in range(15):
            e = np.zeros(15)
            e[i] = step
            vp = dict(values)
            vm = dict(values)
            vp[k] = values[k].retract(e)
            vm[k] = values[k].retract(-e)
            N[:, i] = (factor.error(vp) - factor.error(vm)) / (2 * step)
        out.append(N)
    return out


def jacobian_rel_error(factor, values):
    """Largest analytic-vs-numeric difference relative to the Jacobian scale."""
    _, Js = factor.jacobians(values)
    worst = 0.0
    for J, N in zip(Js, numeric_jacobians(factor, values)):
        worst = max(worst, float(np.abs(J - N).max() / max(np.abs(N).max(), 1.0)))
    return worst


def shift_pair(img, start, shift, n):
    """(S1, S2) crops of a long image with S1's features ``shift`` columns later in S2."""
    return img[:, start:start + n], img[:, start - shift:start - shift + n]


def clean_strip(seed, length=8.0, spacing=0.05):
    """Noise-free conditioned image along y = 0 in a feature-dense world."""
    wcfg = world_config("dense", x_range=(-1.0, length + 1.0), y_range=(-1.5, 1.5))
    world = build_world(seed, wcfg)
    sensor = SensorConfig(noise_sigma=0.0)
    pcfg = PreprocessConfig()
    xs = np.arange(0.0, length, spacing)
    cols = [condition_trace(trace_at(world, Pose3.from_xyz_yaw(x, 0.0), sensor), pcfg).samples for x in xs]
    return np.array(cols).T
