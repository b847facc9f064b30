"""Dataset directory layout: ``meta`` plus one CSV file per stream."""
from __future__ import annotations

import json
import os

import numpy as np

from ..simworld import RawDataset
from .frontend import DataError

FORMAT = "gprloc-dataset"
VERSION = 1
UNITS = {
    "time": "s",
    "trace_time": "ns",
    "distance": "m",
    "accel": "m/s^2",
    "gyro": "rad/s",
    "position": "m",
    "quaternion": "w,x,y,z",
}

IMU_HEADER = ["timestamp", "ax", "ay", "az", "gx", "gy", "gz"]
WHEEL_HEADER = ["timestamp", "distance"]
TRUTH_HEADER = ["timestamp", "x", "y", "z", "qw", "qx", "qy", "qz"]


def gpr_header(samples):
    return ["timestamp", "wheel_distance"] + [f"sample_{i}" for i in range(samples)]


def _write_csv(path, header, cols):
    data = np.column_stack(cols) if cols else np.zeros((0, len(header)))
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        if len(data):
            np.savetxt(fh, data, fmt="%.17g", delimiter=",")


def _read_csv(path, header=None, min_cols=None):
    name = os.path.basename(path)
    try:
        with open(path) as fh:
            first = fh.readline().strip()
            got = first.split(",") if first else []
            if header is not None and got != header:
                raise DataError(f"{name}: header {first!r} does not match {','.join(header)!r}")
            if min_cols is not None and len(got) < min_cols:
                raise DataError(f"{name}: header has {len(got)} columns, expected at least {min_cols}")
            data = np.loadtxt(fh, delimiter=",", ndmin=2)
    except OSError as e:
        raise DataError(f"cannot read {name}: {e}") from None
    except ValueError as e:
        raise DataError(f"{name}: malformed row ({e})") from None
    if data.size == 0:
        data = np.zeros((0, len(got)))
    if data.shape[1] != len(got):
        raise DataError(f"{name}: rows have {data.shape[1]} columns, header has {len(got)}")
    if not np.all(np.isfinite(data)):
        raise DataError(f"{name}: non-finite values")
    t = data[:, 0]
    bad = np.nonzero(np.diff(t) <= 0)[0]
    if len(bad):
        i = int(bad[0])
        raise DataError(f"{name}: timestamps not strictly increasing at row {i + 2} ({t[i]} -> {t[i + 1]})")
    return got, data


def write_dataset(ds: RawDataset, out_dir, config_text=""):
    os.makedirs(out_dir, exist_ok=True)
    samples = ds.gpr.shape[1]
    meta = {
        "format": FORMAT,
        "version": VERSION,
        "units": UNITS,
        "dt_ns": ds.dt_ns,
        "samples": samples,
        "info": ds.meta,
        "config": config_text,
    }
    with open(os.path.join(out_dir, "meta"), "w") as fh:
        json.dump(meta, fh, indent=1, sort_keys=True)
        fh.write("\n")
    _write_csv(os.path.join(out_dir, "gpr.csv"), gpr_header(samples),
               [ds.gpr_t, ds.gpr_dist, ds.gpr])
    _write_csv(os.path.join(out_dir, "imu.csv"), IMU_HEADER, [ds.imu_t, ds.accel, ds.gyro])
    _write_csv(os.path.join(out_dir, "wheel.csv"), WHEEL_HEADER, [ds.wheel_t, ds.wheel_dist])
    if len(ds.truth_t):
        _write_csv(os.path.join(out_dir, "truth.csv"), TRUTH_HEADER,
                   [ds.truth_t, ds.truth_pos, ds.truth_quat])


def read_meta(path):
    try:
        with open(os.path.join(path, "meta")) as fh:
            meta = json.load(fh)
    except OSError as e:
        raise DataError(f"cannot read meta: {e}") from None
    except json.JSONDecodeError as e:
        raise DataError(f"meta is not valid JSON: {e}") from None
    if meta.get("format") != FORMAT:
        raise DataError(f"meta: unknown format {meta.get('format')!r}")
    if meta.get("version") != VERSION:
        raise DataError(f"meta: unsupported version {meta.get('version')!r}")
    if "dt_ns" not in meta or "samples" not in meta:
        raise DataError("meta: missing dt_ns or samples")
    return meta


def read_dataset(path, require_truth=False) -> RawDataset:
    """Load and validate a dataset directory; raises DataError on any defect."""
    if not os.path.isdir(path):
        raise DataError(f"dataset directory {path} does not exist")
    meta = read_meta(path)
    samples = int(meta["samples"])
    _, g = _read_csv(os.path.join(path, "gpr.csv"), gpr_header(samples))
    _, imu = _read_csv(os.path.join(path, "imu.csv"), IMU_HEADER)
    _, wh = _read_csv(os.path.join(path, "wheel.csv"), WHEEL_HEADER)
    truth_path = os.path.join(path, "truth.csv")
    if os.path.exists(truth_path):
        _, tr = _read_csv(truth_path, TRUTH_HEADER)
    elif require_truth:
        raise DataError("truth.csv is required for this command")
    else:
        tr = np.zeros((0, 8))
    if np.any(np.diff(wh[:, 1]) < 0):
        raise DataError("wheel.csv: cumulative distance decreases")
    info = dict(meta.get("info", {}))
    info["config"] = meta.get("config", "")
    return RawDataset(
        gpr_t=g[:, 0], gpr_dist=g[:, 1], gpr=g[:, 2:], dt_ns=float(meta["dt_ns"]),
        imu_t=imu[:, 0], accel=imu[:, 1:4], gyro=imu[:, 4:7],
        wheel_t=wh[:, 0], wheel_dist=wh[:, 1],
        truth_t=tr[:, 0], truth_pos=tr[:, 1:4], truth_quat=tr[:, 4:8], meta=info,
    )
