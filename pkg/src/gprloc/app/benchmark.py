"""Synthetic benchmark suites: registration accuracy, drift correction,
incremental-versus-batch agreement and per-step solver timing."""
from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from ..graph import (FactorGraph, ImuFactor, PriorFactor, State, gpr_factor, gpr_noise,
                     wheel_factor, wheel_noise)
from ..preint import preintegrate
from ..simworld import (RunConfig, SensorConfig, SubsurfaceWorld, Trajectory, noiseless,
                        simulate_run, square_loop)
from ..solver import IncrementalSmoother, SolverConfig, optimize
from . import workflow
from .config import AppConfig
from .pipeline import MODELS, GraphConfig, TrajectoryEstimate
from .train import ValidationReport, harvest_pairs, train_and_validate

KINDS = ("forward_backward", "square_loop")
BENCH_SEEDS = (0, 1, 2, 3, 4)
TRAIN_SEEDS = (50, 51)


def with_kind(cfg: AppConfig, kind) -> AppConfig:
    return replace(cfg, trajectory=replace(cfg.trajectory, kind=kind))


def bench_dataset(cfg: AppConfig, kind, seed):
    return workflow.simulate(with_kind(cfg, kind), seed)


# --------------------------------------------------------------------------
# registration table


def registration_table(cfg: AppConfig | None = None, seeds=BENCH_SEEDS, kinds=KINDS):
    """Harvest labelled pairs from every (seed, kind) run, train and validate.

    Returns (head, ValidationReport, pair sets).
    """
    cfg = cfg or AppConfig()
    bank = workflow.default_bank(cfg)
    scfg = replace(cfg.salience, gate_threshold=cfg.registration.gate_threshold)
    sets = []
    for seed in seeds:
        for kind in kinds:
            ds = bench_dataset(cfg, kind, seed)
            sets.append(harvest_pairs(ds, f"{kind}{seed}", cfg.preprocess, cfg.submap, scfg,
                                      cfg.registration, bank, cfg.harvest))
    t_max = cfg.registration.t_max(cfg.submap.columns)
    head, report = train_and_validate(sets, cfg.submap.spacing, cfg.model.train_frac,
                                      cfg.model.huber_delta, t_max, cfg.seed)
    return head, report, sets


def mean_errors_cm(report: ValidationReport):
    """Pooled validation mean absolute error (cm) per predictor."""
    return {m: s.mae_cm for m, s in report.combined.items()}


# --------------------------------------------------------------------------
# drift ablation


@dataclass
class SequenceResult:
    name: str
    ate: dict                     # mode -> ATE RMSE (m)
    estimates: dict               # mode -> TrajectoryEstimate
    curves: dict                  # mode -> ATE after every incremental step
    closures: int


@dataclass
class DriftResult:
    sequences: list = field(default_factory=list)
    train_report: ValidationReport | None = None

    def mean_ate(self, mode):
        return float(np.mean([s.ate[mode] for s in self.sequences]))

    def table(self):
        return {m: self.mean_ate(m) for m in MODELS}


def drift_benchmark(cfg: AppConfig | None = None, seeds=BENCH_SEEDS, kinds=KINDS,
                    train_seeds=TRAIN_SEEDS) -> DriftResult:
    """Four-mode ablation over every (seed, kind); the head is trained on other seeds."""
    cfg = cfg or AppConfig()
    bank = workflow.default_bank(cfg)
    train_sets = [bench_dataset(cfg, kind, s) for s in train_seeds for kind in kinds]
    names = [f"{kind}{s}" for s in train_seeds for kind in kinds]
    head, report, _, _ = workflow.train(train_sets, cfg, names, bank)
    out = DriftResult(train_report=report)
    for seed in seeds:
        for kind in kinds:
            ds = bench_dataset(cfg, kind, seed)
            fe, ests = workflow.ablation(ds, cfg, head, bank)
            out.sequences.append(SequenceResult(
                f"{kind}{seed}",
                {m: workflow.ate(e, ds) for m, e in ests.items()},
                ests,
                {m: workflow.ate_curve(e, ds) for m, e in ests.items()},
                len(fe.pairs)))
    return out


def first_closure_change(est: TrajectoryEstimate, curve):
    """(ATE before, ATE after) the first step that added loop closures, or None."""
    if not est.closure_steps:
        return None
    k = est.closure_steps[0]
    if k < 1 or not np.isfinite(curve[k - 1]):
        return None
    return float(curve[k - 1]), float(curve[k])


# --------------------------------------------------------------------------
# incremental versus one-shot batch


def dead_reckoned_initial(graph: FactorGraph):
    """Initial values chained from the prior on state 0 through the wheel factors."""
    prior = next(f for f in graph.factors if f.kind == "prior")
    wheel = {f.keys[1]: f for f in graph.factors if f.kind == "wheel"}
    keys = graph.keys()
    vals = {keys[0]: prior.prior}
    for prev, k in zip(keys[:-1], keys[1:]):
        f = wheel[k]
        vals[k] = State(vals[prev].pose.compose(f.z.inverse()), vals[prev].v, vals[prev].b)
    return vals


def batch_cost(graph: FactorGraph, solver: SolverConfig | None = None):
    """Final cost of one LM solve over the whole graph from a dead-reckoned start."""
    solver = solver or SolverConfig()
    _, report = optimize(graph, dead_reckoned_initial(graph), solver)
    return report.final_cost


def incremental_vs_batch(est: TrajectoryEstimate, solver: SolverConfig | None = None):
    """(incremental final cost, batch final cost) for an estimate from ``run_backend``."""
    return est.final_cost, batch_cost(est.graph, solver)


# --------------------------------------------------------------------------
# per-step timing


def _empty_world():
    return SubsurfaceWorld(np.zeros((0, 4)), np.zeros((0, 7)), 0.1, 0.0, 0)


def timing_graph(n_states=500, seed=0, closure_every=10, closure_lag=40, state_stride=200):
    """Graph of ``n_states`` states along a repeated square with wheel, IMU and
    relative closure factors, built from noise-free synthetic motion.

    Returns (factor lists per state, truth states) so callers can feed the
    states one at a time.
    """
    run = noiseless(RunConfig())
    dur_per_lap = 4 * (50.0 + 2.0) + 4 * (np.pi / 2 / run.yaw_rate + 2.0)
    laps = int(np.ceil(n_states * state_stride / run.imu_rate / dur_per_lap)) + 1
    wps = square_loop(50.0, laps)
    traj = Trajectory.from_waypoints(wps, run.speed, run.yaw_rate, run.ramp, run.dwell)
    sensor = SensorConfig(samples=64, trigger_spacing=1000.0, ringing_amplitude=0.0, wow_amplitude=0.0)
    ds, _ = simulate_run(_empty_world(), wps, sensor, run, seed=seed, trajectory=traj)
    idx = np.arange(n_states) * state_stride
    if idx[-1] >= len(ds.imu_t):
        raise ValueError("trajectory too short for the requested state count")
    gc = GraphConfig()
    truth = []
    for i in idx:
        pose = ds.truth_pose(i)
        j = min(i + 1, len(ds.imu_t) - 1)
        v = (ds.truth_pos[j] - ds.truth_pos[max(i - 1, 0)]) / (ds.imu_t[j] - ds.imu_t[max(i - 1, 0)])
        truth.append(State(pose, v))
    steps = [[PriorFactor(0, truth[0], gc.prior_noise())]]
    for k in range(1, n_states):
        a, b = idx[k - 1], idx[k]
        z = truth[k].pose.between(truth[k - 1].pose)
        fs = [wheel_factor(k - 1, k, z, wheel_noise(float(np.linalg.norm(z.t)), gc.wheel_frac,
                                                     gc.wheel_rot_sigma, gc.wheel_floor)),
              ImuFactor(k - 1, k, preintegrate(ds.imu_t[a:b + 1], ds.accel[a:b + 1], ds.gyro[a:b + 1]),
                        gc.imu_noise())]
        if k % closure_every == 0 and k >= closure_lag:
            zo = truth[k].pose.between(truth[k - closure_lag].pose)
            fs.append(gpr_factor(k - closure_lag, k, zo, gpr_noise(gc.gpr_sigma, gc.gpr_weak_sigma)))
        steps.append(fs)
    return steps, truth


def step_timing(n_states=500, mode="batch", window=50, seed=0, repeats=1):
    """Wall time (s) of the incremental update that adds the ``n_states``-th state.

    The first ``n_states - 1`` states are loaded at their true values and
    then the last one is added through the smoother as in normal operation.
    """
    steps, truth = timing_graph(n_states, seed)
    best = np.inf
    for _ in range(repeats):
        sm = IncrementalSmoother(SolverConfig(mode=mode, window=window))
        for k in range(n_states - 1):
            sm.graph.add_variable(k, truth[k])
            for f in steps[k]:
                sm.graph.add_factor(f)
        sm.last_key = n_states - 2
        t0 = time.perf_counter()
        sm.update(n_states - 1, steps[-1])
        best = min(best, time.perf_counter() - t0)
    return float(best)
