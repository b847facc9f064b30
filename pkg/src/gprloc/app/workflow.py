"""Glue between the configuration and the simulation, training and localization stages."""
from __future__ import annotations

import logging
from dataclasses import replace

import numpy as np

from ..regmodel import FilterBank, LinearHead, RegConfig, load_model
from ..simworld import RawDataset, Trajectory, build_world, forward_backward, simulate_run, square_loop
from .config import AppConfig
from .evaluate import ate_over_time, ate_rmse
from .frontend import DataError, FrontEnd, run_frontend
from .pipeline import MODELS, TrajectoryEstimate, gpr_measurements, run_backend
from .train import harvest_pairs, train_and_validate

log = logging.getLogger(__name__)

WORLD_MARGIN = 2.0   # m of world beyond the trajectory's bounding box


def waypoints(cfg: AppConfig):
    tc = cfg.trajectory
    if tc.kind == "forward_backward":
        return forward_backward(tc.length)
    return square_loop(tc.side, tc.laps)


def world_extent(wps, margin=WORLD_MARGIN):
    w = np.asarray(wps, dtype=float)
    lo, hi = w.min(axis=0) - margin, w.max(axis=0) + margin
    return (float(lo[0]), float(hi[0])), (float(lo[1]), float(hi[1]))


def simulate(cfg: AppConfig, seed=None) -> RawDataset:
    """World and run from one seed; the world covers the trajectory plus a margin."""
    seed = cfg.seed if seed is None else seed
    wps = waypoints(cfg)
    xr, yr = world_extent(wps)
    wcfg = replace(cfg.world, x_range=xr, y_range=yr)
    world = build_world(seed, wcfg)
    rc = cfg.run
    traj = Trajectory.from_waypoints(wps, speed=rc.speed, yaw_rate=rc.yaw_rate, ramp=rc.ramp, dwell=rc.dwell)
    ds, _ = simulate_run(world, wps, cfg.sensor, rc, seed=seed, trajectory=traj)
    return ds


def default_bank(cfg: AppConfig):
    return FilterBank.default(cfg.model.k, cfg.model.bank_seed)


def load_learned(path, cfg: AppConfig):
    """Head and bank from a model file; its registration settings must match the config."""
    try:
        head, bank, rcfg = load_model(path)
    except (OSError, ValueError, KeyError) as e:
        raise DataError(f"cannot load model {path}: {e}") from None
    if rcfg != cfg.registration:
        log.warning("model registration settings %s override config %s", rcfg, cfg.registration)
    return head, bank, rcfg


def frontend(ds: RawDataset, cfg: AppConfig, bank: FilterBank, rcfg: RegConfig | None = None) -> FrontEnd:
    rcfg = rcfg or cfg.registration
    scfg = replace(cfg.salience, gate_threshold=rcfg.gate_threshold)
    return run_frontend(ds, cfg.preprocess, cfg.submap, scfg, rcfg, bank, cfg.frontend)


def localize(ds: RawDataset, cfg: AppConfig, mode, head: LinearHead | None = None,
             fe: FrontEnd | None = None, bank: FilterBank | None = None, rcfg=None):
    if mode not in MODELS:
        raise ValueError(f"unknown model {mode!r}")
    if fe is None:
        fe = frontend(ds, cfg, bank or default_bank(cfg), rcfg)
    est = run_backend(ds, fe, mode, cfg.graph, cfg.solver, head, config_hash=cfg.hash())
    return fe, est


def closure_set(fe: FrontEnd, mode, ds=None, head=None):
    return sorted((ko, kn) for _, ko, kn, _ in gpr_measurements(fe, mode, ds, head))


def ablation(ds: RawDataset, cfg: AppConfig, head: LinearHead, bank: FilterBank, rcfg=None):
    """All four model modes on one front end; loop-closure sets must coincide."""
    fe = frontend(ds, cfg, bank, rcfg)
    ref = sorted((a, b) for a, b, _ in fe.pair_keys() if a != b)
    out = {}
    for mode in MODELS:
        if mode != "odometry-only":
            got = closure_set(fe, mode, ds, head)
            if got != ref:
                raise AssertionError(f"{mode} received a different loop-closure set")
        _, out[mode] = localize(ds, cfg, mode, head, fe=fe)
    log.info("loop closures shared by all GPR modes: %s", ref)
    return fe, out


def ate(est: TrajectoryEstimate, ds: RawDataset):
    return ate_rmse(est.times, est.positions, ds.truth_t, ds.truth_pos)


def ate_curve(est: TrajectoryEstimate, ds: RawDataset):
    return ate_over_time(est, ds.truth_t, ds.truth_pos)


def train(datasets, cfg: AppConfig, names=None, bank: FilterBank | None = None):
    """Harvest labelled pairs from every dataset and fit the linear head."""
    if len(datasets) < 2:
        raise DataError("training needs at least two datasets")
    bank = bank or default_bank(cfg)
    names = names or [f"dataset{i}" for i in range(len(datasets))]
    scfg = replace(cfg.salience, gate_threshold=cfg.registration.gate_threshold)
    sets = []
    for ds, name in zip(datasets, names):
        if len(ds.truth_t) == 0:
            raise DataError(f"{name}: training needs ground truth")
        sets.append(harvest_pairs(ds, name, cfg.preprocess, cfg.submap, scfg, cfg.registration, bank,
                                  cfg.harvest))
    t_max = cfg.registration.t_max(cfg.submap.columns)
    try:
        head, report = train_and_validate(sets, cfg.submap.spacing, cfg.model.train_frac,
                                          cfg.model.huber_delta, t_max, cfg.seed)
    except ValueError as e:
        raise DataError(str(e)) from None
    return head, report, bank, sets
