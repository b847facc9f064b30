"""Command-line entry point: simulate, preprocess, train, localize, eval, plot."""
from __future__ import annotations

import argparse
import logging
import os
import sys

import numpy as np

from ..geom import Pose3, Rot3
from ..regmodel import save_model
from ..simworld import ConfigError
from ..solver import IndeterminateSystemError
from .config import load_config
from .dataset import read_dataset, write_dataset
from .evaluate import EvalError, ate_over_time, ate_rmse
from .frontend import DataError
from .pipeline import MODELS, TrajectoryEstimate, dataset_hash
from . import workflow

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("gprloc")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _u64(text):
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def build_parser():
    p = _Parser(prog="gprloc", description="GPR submap localization toolkit")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, dataset=True, out=True, multi=False):
        sp.add_argument("--config", help="key = value configuration file")
        sp.add_argument("--seed", type=_u64, help="overrides the configured seed")
        if dataset:
            sp.add_argument("--dataset", required=True, action="append" if multi else "store",
                            help="dataset directory" + (" (repeatable)" if multi else ""))
        if out:
            sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("-v", "--verbose", action="store_true")

    common(sub.add_parser("simulate", help="write a synthetic dataset"), dataset=False)
    common(sub.add_parser("preprocess", help="build submaps and gated pairs"))
    sp = sub.add_parser("train", help="fit the linear head and report validation losses")
    common(sp, multi=True)
    sp = sub.add_parser("localize", help="run the localization pipeline")
    common(sp)
    sp.add_argument("--model", required=True,
                    help=f"model file, or one of {', '.join(m for m in MODELS if m != 'learned')}")
    sp = sub.add_parser("eval", help="ATE of a localize output against truth")
    common(sp)
    sp = sub.add_parser("plot", help="trajectory overlay and ATE-over-time figures")
    common(sp)
    return p


# --------------------------------------------------------------------------
# trajectory and history files


def write_estimate(out_dir, est: TrajectoryEstimate):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "trajectory.csv"), "w") as fh:
        fh.write(est.to_csv())
    rows = [(k, i, *p) for k, h in enumerate(est.history) for i, p in enumerate(h)]
    np.savetxt(os.path.join(out_dir, "history.csv"), np.array(rows, dtype=float).reshape(-1, 5),
               fmt="%.17g", delimiter=",", header="step,state,x,y,z", comments="")


def read_estimate(out_dir) -> TrajectoryEstimate:
    path = os.path.join(out_dir, "trajectory.csv")
    try:
        with open(path) as fh:
            first = fh.readline().strip()
            header = fh.readline().strip()
            data = np.loadtxt(fh, delimiter=",", ndmin=2)
    except OSError as e:
        raise DataError(f"cannot read estimate: {e}") from None
    except ValueError as e:
        raise DataError(f"trajectory.csv: malformed row ({e})") from None
    if not first.startswith("#") or header != "timestamp,x,y,z,qw,qx,qy,qz":
        raise DataError("trajectory.csv: missing provenance line or header")
    prov = dict(kv.split("=", 1) for kv in first[1:].split() if "=" in kv)
    poses = [Pose3(Rot3(r[4:8]), r[1:4]) for r in data]
    est = TrajectoryEstimate(data[:, 0], poses, prov.get("model", "?"), prov.get("config_hash", ""),
                             prov.get("dataset_hash", ""))
    hist = os.path.join(out_dir, "history.csv")
    if os.path.exists(hist):
        h = np.loadtxt(hist, delimiter=",", skiprows=1, ndmin=2)
        est.history = [h[h[:, 0] == k][:, 2:5] for k in range(int(h[:, 0].max()) + 1)] if len(h) else []
    return est


# --------------------------------------------------------------------------
# commands


def cmd_simulate(args, cfg):
    ds = workflow.simulate(cfg)
    write_dataset(ds, args.out, cfg.to_text())
    print(f"wrote {len(ds.gpr_t)} traces, {len(ds.imu_t)} IMU samples to {args.out}")


def cmd_preprocess(args, cfg):
    ds = read_dataset(args.dataset)
    fe = workflow.frontend(ds, cfg, workflow.default_bank(cfg))
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "segments.csv"), "w") as fh:
        fh.write("segment,status,reason,start_m,t_start,state,salience\n")
        for i, s in enumerate(fe.segments):
            fh.write(f"{i},{s.status},{s.reason},{s.start!r},{s.t_start!r},{s.state},{s.salience!r}\n")
            if s.submap is not None:
                np.savetxt(os.path.join(args.out, f"submap_{i:04d}.csv"), s.submap.data, fmt="%.9g",
                           delimiter=",")
    with open(os.path.join(args.out, "pairs.csv"), "w") as fh:
        fh.write("old,new,flipped,gate_stat,engineered_m,truth_m," + ",".join(
            f"argmax_{j}" for j in range(workflow.default_bank(cfg).k)) + "\n")
        for p in fe.pairs:
            fh.write(f"{p.old},{p.new},{int(p.flipped)},{p.feats.gate_stat!r},{p.engineered!r},{p.truth!r},"
                     + ",".join(str(int(a)) for a in p.feats.argmax) + "\n")
    n_fin = sum(s.submap is not None for s in fe.segments)
    print(f"{n_fin} submaps, {fe.candidates} candidate pairs, {len(fe.pairs)} accepted by the gate")


def cmd_train(args, cfg):
    datasets = [read_dataset(d, require_truth=True) for d in args.dataset]
    names = [os.path.basename(os.path.normpath(d)) for d in args.dataset]
    head, report, bank, _ = workflow.train(datasets, cfg, names)
    os.makedirs(args.out, exist_ok=True)
    save_model(os.path.join(args.out, "model.json"), head, bank, cfg.registration)
    lines = report.lines()
    with open(os.path.join(args.out, "report.txt"), "w") as fh:
        fh.write("\n".join(lines) + "\n")
    print("\n".join(lines))


def cmd_localize(args, cfg):
    ds = read_dataset(args.dataset)
    head = bank = rcfg = None
    if args.model in MODELS and args.model != "learned":
        mode = args.model
    elif args.model == "learned":
        raise UsageError("--model learned needs a model file path")
    else:
        mode = "learned"
        head, bank, rcfg = workflow.load_learned(args.model, cfg)
    fe, est = workflow.localize(ds, cfg, mode, head, bank=bank, rcfg=rcfg)
    write_estimate(args.out, est)
    with open(os.path.join(args.out, "closures.csv"), "w") as fh:
        fh.write("state_old,state_new,flipped\n")
        for a, b, f in fe.pair_keys():
            fh.write(f"{a},{b},{int(f)}\n")
    print(f"{mode}: {len(est.times)} states, {len(fe.pairs)} loop closures, config {est.config_hash}")


def cmd_eval(args, cfg):
    ds = read_dataset(args.dataset, require_truth=True)
    est = read_estimate(args.out)
    h = dataset_hash(ds)
    if est.dataset_hash != h:
        raise DataError(f"estimate was computed on dataset {est.dataset_hash}, not {h}")
    a = ate_rmse(est.times, est.positions, ds.truth_t, ds.truth_pos)
    line = f"ATE {est.model}: {a:.4f} m"
    with open(os.path.join(args.out, "ate.txt"), "w") as fh:
        fh.write(line + "\n")
    print(line)


def cmd_plot(args, cfg):
    from .plot import ate_time_plot, trajectory_plot

    ds = read_dataset(args.dataset, require_truth=True)
    est = read_estimate(args.out)
    if est.dataset_hash != dataset_hash(ds):
        raise DataError("estimate and dataset hashes differ")
    trajectory_plot(args.out, est.times, {est.model: est.positions}, ds.truth_t, ds.truth_pos)
    curve = ate_over_time(est, ds.truth_t, ds.truth_pos) if est.history else np.full(len(est.times), np.nan)
    ate_time_plot(args.out, est.times[: len(curve)], {est.model: curve})
    print(f"wrote trajectory_overlay.svg/.csv and ate_over_time.svg/.csv to {args.out}")


COMMANDS = {
    "simulate": cmd_simulate,
    "preprocess": cmd_preprocess,
    "train": cmd_train,
    "localize": cmd_localize,
    "eval": cmd_eval,
    "plot": cmd_plot,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(e, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as e:          # --help
        return EXIT_OK if e.code in (0, None) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            from dataclasses import replace
            cfg = replace(cfg, seed=args.seed)
        COMMANDS[args.command](args, cfg)
    except (UsageError, ConfigError) as e:
        print(f"gprloc: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, EvalError) as e:
        print(f"gprloc: data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except (IndeterminateSystemError, FloatingPointError, np.linalg.LinAlgError) as e:
        print(f"gprloc: numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
