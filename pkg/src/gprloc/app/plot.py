"""Trajectory overlay and ATE-over-time figures (SVG) with their CSV data."""
from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .evaluate import associate, rigid_align  # noqa: E402


def _save(fig, path):
    with plt.rc_context({"svg.hashsalt": "gprloc", "svg.fonttype": "none"}):
        fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def aligned_positions(times, pos, truth_t, truth_pos, max_dt=0.01):
    """Estimate positions rigidly aligned onto truth (as used for ATE)."""
    ie, it = associate(times, truth_t, max_dt)
    if len(ie) < 3:
        return np.asarray(pos, dtype=float)
    R, t = rigid_align(np.asarray(pos)[ie], np.asarray(truth_pos)[it])
    return np.asarray(pos) @ R.T + t


def trajectory_plot(out_dir, times, estimates: dict, truth_t, truth_pos, name="trajectory_overlay"):
    """``estimates`` maps a label to an (n, 3) position array at ``times``."""
    os.makedirs(out_dir, exist_ok=True)
    labels = list(estimates)
    aligned = {k: aligned_positions(times, estimates[k], truth_t, truth_pos) for k in labels}
    ie, it = associate(times, truth_t)
    tp = np.full((len(times), 3), np.nan)
    tp[ie] = np.asarray(truth_pos)[it]
    header = "timestamp,truth_x,truth_y," + ",".join(f"{k}_x,{k}_y" for k in labels)
    cols = [np.asarray(times), tp[:, 0], tp[:, 1]] + [a[:, j] for k in labels for a in [aligned[k]] for j in (0, 1)]
    csv = os.path.join(out_dir, f"{name}.csv")
    np.savetxt(csv, np.column_stack(cols), fmt="%.17g", delimiter=",", header=header, comments="")

    fig, ax = plt.subplots(figsize=(6, 5))
    ax.plot(truth_pos[:, 0], truth_pos[:, 1], color="k", lw=1.0, label="truth")
    for k in labels:
        ax.plot(aligned[k][:, 0], aligned[k][:, 1], marker=".", lw=1.0, label=k)
    ax.set_xlabel("x (m)")
    ax.set_ylabel("y (m)")
    ax.set_aspect("equal", adjustable="datalim")
    ax.legend(loc="best", fontsize=8)
    svg = os.path.join(out_dir, f"{name}.svg")
    _save(fig, svg)
    return svg, csv


def ate_time_plot(out_dir, times, curves: dict, closure_times=(), name="ate_over_time"):
    """``curves`` maps a label to the per-step ATE (m) at ``times``."""
    os.makedirs(out_dir, exist_ok=True)
    labels = list(curves)
    csv = os.path.join(out_dir, f"{name}.csv")
    header = "timestamp," + ",".join(f"{k}_ate" for k in labels)
    np.savetxt(csv, np.column_stack([np.asarray(times)] + [np.asarray(curves[k]) for k in labels]),
               fmt="%.17g", delimiter=",", header=header, comments="")
    fig, ax = plt.subplots(figsize=(6, 3.5))
    for k in labels:
        ax.plot(times, curves[k], lw=1.2, label=k)
    for i, t in enumerate(closure_times):
        ax.axvline(t, color="0.7", lw=0.6, ls="--", label="loop closure" if i == 0 else None)
    ax.set_xlabel("time (s)")
    ax.set_ylabel("ATE (m)")
    ax.legend(loc="best", fontsize=8)
    svg = os.path.join(out_dir, f"{name}.svg")
    _save(fig, svg)
    return svg, csv
