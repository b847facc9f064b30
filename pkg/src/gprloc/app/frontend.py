"""Measurement front end: trace conditioning, submaps, states and gated pairs.

Everything here is independent of the registration model used later, so
all model modes share one set of states, odometry measurements and gated
loop-closure candidates.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..geom import Pose3, Rot3, so3_exp
from ..preint import PreintegratedImu, preintegrate
from ..preprocess import (MeanTraceState, PreprocessConfig, Radargram, Trace,
                          condition_trace, finish_image, local_average)
from ..regmodel import (CorrFeatures, FilterBank, RegConfig, corr_feat_full,
                        engineered_register, feature_maps, gate)
from ..submap import SalienceConfig, Submap, SubmapBuilder, SubmapRule, salience
from ..simworld import RawDataset


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class FrontEndConfig:
    max_gap: float = 1.0             # s, largest tolerated gap inside a stream
    max_candidates: int = 50
    heading_tol: float = np.pi / 4
    reject_boundary: bool = True     # drop pairs whose gate peak sits at +-T_max


@dataclass
class SegmentRecord:
    start: float                 # wheel distance of the first trace
    t_start: float
    status: str                  # "finalized", "rejected" or "open"
    reason: str = ""
    submap: Submap | None = None
    salience: float = 0.0
    state: int = -1              # index of the state created at t_start
    yaw: float = 0.0             # dead-reckoned heading at t_start


@dataclass
class GatedPair:
    old: int                     # segment indices
    new: int
    flipped: bool
    feats: CorrFeatures
    engineered: float            # m, engineered registration of the same pair
    truth: float = float("nan")  # m, true image shift (when truth is available)


@dataclass
class FrontEnd:
    state_times: np.ndarray
    state_wheel: np.ndarray          # wheel distance at each state time
    wheel_z: list                    # Pose3 (prev seen from next) between consecutive states
    wheel_dist: list                 # distance travelled between consecutive states
    imu: list                        # PreintegratedImu between consecutive states
    segments: list
    pairs: list
    candidates: int                  # pairs offered to the gate
    columns: int
    spacing: float

    def pair_keys(self):
        return [(self.segments[p.old].state, self.segments[p.new].state, p.flipped) for p in self.pairs]


def check_streams(ds: RawDataset, max_gap):
    for name, t in (("gpr", ds.gpr_t), ("imu", ds.imu_t), ("wheel", ds.wheel_t), ("truth", ds.truth_t)):
        if len(t) == 0:
            continue
        d = np.diff(t)
        if np.any(d <= 0):
            raise DataError(f"{name} timestamps not strictly increasing")
        if name in ("imu", "wheel") and np.any(d > max_gap):
            i = int(np.argmax(d))
            raise DataError(f"{name} stream gap of {d[i]:.3f} s at t={t[i]:.3f}")
    if len(ds.imu_t) < 2 or len(ds.wheel_t) < 2:
        raise DataError("IMU and wheel streams need at least two samples")


def condition_traces(ds: RawDataset, cfg: PreprocessConfig):
    """Causal local average over the last few traces, then dewow and gain."""
    raw = list(ds.traces())
    out = []
    w = cfg.average_window
    for i in range(len(raw)):
        win = [tr for _, tr in raw[max(0, i - w + 1): i + 1]]
        out.append(condition_trace(local_average(win), cfg))
    return out


def gyro_yaw(ds: RawDataset):
    """Heading from integrating the z gyro (trapezoid), at IMU times."""
    g = ds.gyro[:, 2]
    inc = 0.5 * (g[1:] + g[:-1]) * np.diff(ds.imu_t)
    return np.concatenate([[0.0], np.cumsum(inc)])


def wheel_at(ds: RawDataset, t):
    return np.interp(t, ds.wheel_t, ds.wheel_dist)


def dead_reckon(ds: RawDataset, i0, i1):
    """Relative pose from IMU index i0 to i1 by wheel distance along the gyro attitude."""
    R = np.eye(3)
    p = np.zeros(3)
    t = ds.imu_t
    w = wheel_at(ds, t[i0:i1 + 1])
    for k in range(i0, i1):
        dt = t[k + 1] - t[k]
        dR = so3_exp(0.5 * (ds.gyro[k] + ds.gyro[k + 1]) * dt)
        Rm = R @ so3_exp(0.25 * (ds.gyro[k] + ds.gyro[k + 1]) * dt)
        p = p + Rm @ np.array([w[k + 1 - i0] - w[k - i0], 0.0, 0.0])
        R = R @ dR
    return Pose3(Rot3.from_matrix(R), p)


def _wrap(a):
    return (a + np.pi) % (2 * np.pi) - np.pi


def build_segments(ds: RawDataset, traces, rule: SubmapRule, pcfg: PreprocessConfig,
                   scfg: SalienceConfig, skip=0):
    """Run the submap builder over the conditioned trace stream.

    ``skip`` drops leading traces, which shifts every cut; training uses it
    to harvest more overlapping submaps from the same run.
    """
    builder = SubmapBuilder(rule)
    mean_state = MeanTraceState()
    segs = []
    gi = 0
    yaw_rate = ds.gyro[:, 2]
    for i in range(skip, len(traces)):
        t = ds.gpr_t[i]
        while gi + 1 < len(ds.imu_t) and ds.imu_t[gi + 1] <= t:
            if builder.start is not None:
                builder.add_gyro(ds.imu_t[gi + 1] - ds.imu_t[gi], 0.5 * (yaw_rate[gi] + yaw_rate[gi + 1]))
            gi += 1
        st = builder.accumulate(traces[i], traces[i].position, float(yaw_rate[gi]), float(t))
        if st.state == "collecting":
            if not segs or segs[-1].status != "open":
                segs.append(SegmentRecord(st.start, st.t_start, "open"))
            continue
        seg = segs[-1]
        seg.status, seg.reason = st.state, st.reason
        if st.submap is not None:
            img, mean_state = finish_image(st.submap.image, mean_state, pcfg)
            seg.submap = Submap(img, st.submap.start, st.submap.end, None, st.t_start, st.t_end)
            seg.salience = salience(seg.submap, scfg)
        segs.append(SegmentRecord(traces[i].position, float(t), "open"))
    return segs


class FeatureCache:
    """Feature maps per (segment, flipped), computed on first use."""

    def __init__(self, bank: FilterBank):
        self.bank = bank
        self._img = {}
        self._maps = {}

    def image(self, idx, sm: Submap, flipped):
        key = (idx, flipped)
        if key not in self._img:
            self._img[key] = sm.flipped() if flipped else sm
        return self._img[key]

    def maps(self, idx, sm: Submap, flipped):
        key = (idx, flipped)
        if key not in self._maps:
            self._maps[key] = feature_maps(self.image(idx, sm, flipped), self.bank)
        return self._maps[key]


def run_frontend(ds: RawDataset, pcfg: PreprocessConfig | None = None, rule: SubmapRule | None = None,
                 scfg: SalienceConfig | None = None, rcfg: RegConfig | None = None,
                 bank: FilterBank | None = None, fcfg: FrontEndConfig | None = None,
                 truth_labels=True) -> FrontEnd:
    pcfg = pcfg or PreprocessConfig()
    rule = rule or SubmapRule()
    scfg = scfg or SalienceConfig()
    rcfg = rcfg or RegConfig()
    bank = bank or FilterBank.default()
    fcfg = fcfg or FrontEndConfig()
    check_streams(ds, fcfg.max_gap)
    if len(ds.gpr_t) == 0:
        raise DataError("no GPR traces")

    traces = condition_traces(ds, pcfg)
    segs = build_segments(ds, traces, rule, pcfg, scfg)

    # states: stream start, every segment start, stream end; snapped to IMU samples
    t_imu = ds.imu_t
    wanted = [t_imu[0]] + [s.t_start for s in segs] + [t_imu[-1]]
    idx = np.clip(np.searchsorted(t_imu, wanted), 0, len(t_imu) - 1)
    prev = np.clip(idx - 1, 0, len(t_imu) - 1)
    idx = np.where(np.abs(t_imu[prev] - wanted) <= np.abs(t_imu[idx] - wanted), prev, idx)
    state_idx = []
    seg_state = []
    for j, k in enumerate(idx):
        if not state_idx or k > state_idx[-1]:
            state_idx.append(int(k))
        if 1 <= j <= len(segs):
            seg_state.append(len(state_idx) - 1)
    for s, si in zip(segs, seg_state):
        s.state = si
    state_idx = np.array(state_idx)
    st_t = t_imu[state_idx]
    st_w = wheel_at(ds, st_t)

    yaw = gyro_yaw(ds)
    for s in segs:
        s.yaw = float(np.interp(s.t_start, t_imu, yaw))

    wheel_z, wheel_d, imus = [], [], []
    for a, b in zip(state_idx[:-1], state_idx[1:]):
        rel = dead_reckon(ds, a, b)
        wheel_z.append(rel.inverse())
        wheel_d.append(float(st_w[len(wheel_d) + 1] - st_w[len(wheel_d)]))
        imus.append(preintegrate(t_imu[a:b + 1], ds.accel[a:b + 1], ds.gyro[a:b + 1]))

    # gated loop-closure candidates
    fin = [i for i, s in enumerate(segs) if s.status == "finalized" and s.salience >= scfg.threshold]
    cache = FeatureCache(bank)
    pairs, offered = [], 0
    truth_fn = _truth_projector(ds) if truth_labels and len(ds.truth_t) else None
    n_cols = rule.columns
    t_max = rcfg.t_max(n_cols)
    for pos, j in enumerate(fin):
        cands = [i for i in fin[:pos] if i != j - 1][::-1][: fcfg.max_candidates]
        for i in cands:
            dyaw = _wrap(segs[j].yaw - segs[i].yaw)
            if abs(dyaw) < fcfg.heading_tol:
                flipped = False
            elif abs(abs(dyaw) - np.pi) < fcfg.heading_tol:
                flipped = True
            else:
                continue
            offered += 1
            S1 = segs[i].submap
            S2 = cache.image(j, segs[j].submap, flipped)
            maps = (cache.maps(i, S1, False), cache.maps(j, segs[j].submap, flipped))
            feats = corr_feat_full(S1, S2, bank, t_max, rcfg, maps=maps)
            if not gate(S1, S2, bank, rcfg, feats=feats):
                continue
            if fcfg.reject_boundary and abs(feats.gate_shift) >= t_max:
                continue
            eng = engineered_register(S1, S2, t_max, rcfg).translation
            y = truth_fn(segs[i].submap, segs[j].submap, flipped) if truth_fn else float("nan")
            pairs.append(GatedPair(i, j, flipped, feats, eng, y))
    return FrontEnd(st_t, st_w, wheel_z, wheel_d, imus, segs, pairs, offered, n_cols, rule.spacing)


def _truth_projector(ds: RawDataset):
    """True along-track offset between the first image columns of a pair."""
    tp = np.column_stack([np.interp(ds.gpr_t, ds.truth_t, ds.truth_pos[:, k]) for k in range(3)])
    d = ds.gpr_dist
    # truth heading at each trace
    qw, qz = ds.truth_quat[:, 0], ds.truth_quat[:, 3]
    yaw_truth = np.unwrap(2 * np.arctan2(qz, qw))
    ty = np.interp(ds.gpr_t, ds.truth_t, yaw_truth)

    memo = {}

    def pos_at(dist):
        if dist not in memo:
            memo[dist] = np.array([np.interp(dist, d, tp[:, k]) for k in range(3)])
        return memo[dist]

    def label(S1: Submap, S2: Submap, flipped):
        p1 = pos_at(S1.start)
        p2 = pos_at(S2.end if flipped else S2.start)
        psi = memo.get(("yaw", S1.start))
        if psi is None:
            psi = memo[("yaw", S1.start)] = np.interp(S1.start, d, ty)
        u = np.array([np.cos(psi), np.sin(psi), 0.0])
        return float(u @ (p1 - p2))

    return label


def gpr_measurement(fe: FrontEnd, pair: GatedPair, d):
    """Relative pose of the old state seen from the new one, from an image shift d (m)."""
    so, sn = fe.segments[pair.old], fe.segments[pair.new]
    d_old = fe.state_wheel[so.state] - so.start
    d_new = fe.state_wheel[sn.state] - sn.start
    if pair.flipped:
        L = (fe.columns - 1) * fe.spacing
        return Pose3(Rot3.rz(np.pi), np.array([L - d - d_old - d_new, 0.0, 0.0]))
    return Pose3(Rot3(), np.array([d + d_old - d_new, 0.0, 0.0]))
