"""Fixed-length submaps built from odometry-tagged traces, plus salience."""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .preprocess import Radargram, Trace


class StreamError(ValueError):
    pass


@dataclass(frozen=True)
class SubmapRule:
    length: float = 2.0          # m, nominal submap length
    spacing: float = 0.05        # m, column spacing of the resampled image
    min_length: float = 1.8      # m covered by traces before the closing trace
    max_length: float = 2.2      # m, a longer gap to the closing trace rejects
    max_cum_yaw: float = 0.2     # rad, integral of |yaw rate| over the segment
    max_yaw_rate: float = 0.3    # rad/s, any single gyro reading
    min_traces: int = 10

    def __post_init__(self):
        if not 0 < self.min_length < self.max_length:
            raise ValueError("need 0 < min_length < max_length")
        if not self.min_length <= self.length <= self.max_length:
            raise ValueError("length must lie within [min_length, max_length]")
        if self.spacing <= 0 or self.max_cum_yaw <= 0 or self.max_yaw_rate <= 0 or self.min_traces <= 0:
            raise ValueError("thresholds must be positive")

    @property
    def columns(self):
        return int(round(self.length / self.spacing)) + 1


@dataclass(frozen=True)
class SalienceConfig:
    window: int = 8                  # rows
    threshold: float = 0.05
    gate_threshold: float = 0.2

    def __post_init__(self):
        if self.window < 1:
            raise ValueError("pooling window must be >= 1")
        if self.threshold <= 0 or not 0 < self.gate_threshold < 1:
            raise ValueError("salience threshold must be positive and gate threshold in (0, 1)")


@dataclass(frozen=True)
class Submap:
    image: Radargram
    start: float                 # cumulative wheel distance of column 0
    end: float                   # distance of the last column
    anchor: object = None        # graph key of the state at the submap start
    t_start: float = 0.0
    t_end: float = 0.0
    reversed: bool = False

    @property
    def spacing(self):
        return self.image.spacing

    @property
    def data(self):
        return self.image.data

    @property
    def columns(self):
        return self.image.data.shape[1]

    def flipped(self):
        """Same submap seen travelling the other way (columns reversed)."""
        return replace(self, image=replace(self.image, data=self.image.data[:, ::-1].copy()),
                       reversed=not self.reversed)


@dataclass(frozen=True)
class BuilderStatus:
    state: str                   # "collecting", "finalized" or "rejected"
    submap: Submap | None = None
    reason: str = ""
    start: float = 0.0
    end: float = 0.0
    t_start: float = 0.0
    t_end: float = 0.0


def resample(distances, traces, start, spacing, n):
    """Linear interpolation of stacked traces onto ``start + k * spacing``.

    Traces at repeated distances are averaged first.  Returns a
    (samples, n) image.
    """
    d = np.asarray(distances, dtype=float)
    X = np.asarray(traces, dtype=float)           # (m, samples)
    u, inv = np.unique(d, return_inverse=True)
    if len(u) < len(d):
        acc = np.zeros((len(u), X.shape[1]))
        np.add.at(acc, inv, X)
        X = acc / np.bincount(inv)[:, None]
    d = u
    grid = start + np.arange(n) * spacing
    j = np.clip(np.searchsorted(d, grid, side="right"), 1, len(d) - 1)
    d0, d1 = d[j - 1], d[j]
    w = np.where(d1 > d0, (grid - d0) / np.where(d1 > d0, d1 - d0, 1.0), 0.0)
    w = np.clip(w, 0.0, 1.0)
    if len(d) == 1:
        return np.repeat(X[:1].T, n, axis=1)
    out = X[j - 1] * (1 - w)[:, None] + X[j] * w[:, None]
    return out.T


class SubmapBuilder:
    """Cuts a trace stream into consecutive, non-overlapping segments.

    A segment starts at its first trace and closes at the first trace whose
    distance reaches ``start + length``; that trace is used for the last
    interpolation step and also opens the next segment.
    """

    def __init__(self, rule: SubmapRule | None = None, dt: float = 1.0):
        self.rule = rule or SubmapRule()
        self.dt = dt
        self._reset()
        self.last_distance = None

    def _reset(self):
        self.start = None
        self.t_start = 0.0
        self.dist = []
        self.data = []
        self.cum_yaw = 0.0
        self.peak_rate = 0.0

    def add_gyro(self, dt, yaw_rate):
        """Fold a gyro reading into the turning tally of the open segment."""
        self.cum_yaw += abs(yaw_rate) * dt
        self.peak_rate = max(self.peak_rate, abs(yaw_rate))

    def accumulate(self, trace: Trace, distance: float, yaw_rate: float = 0.0, time: float = 0.0):
        if self.last_distance is not None and distance < self.last_distance:
            raise StreamError(f"wheel distance decreased ({distance} < {self.last_distance})")
        self.last_distance = distance
        self.dt = trace.dt
        self.peak_rate = max(self.peak_rate, abs(yaw_rate))
        if self.start is None:
            self._open(trace, distance, time)
            return BuilderStatus("collecting", start=distance, t_start=time)
        rule = self.rule
        if distance < self.start + rule.length - 1e-9:
            self.dist.append(distance)
            self.data.append(trace.samples)
            return BuilderStatus("collecting", start=self.start, t_start=self.t_start)
        status = self._close(trace, distance, time)
        self._reset()
        self._open(trace, distance, time)
        return status

    def _open(self, trace, distance, time):
        self.start = distance
        self.t_start = time
        self.dist = [distance]
        self.data = [trace.samples]

    def _close(self, trace, distance, time):
        rule = self.rule
        common = dict(start=self.start, end=distance, t_start=self.t_start, t_end=time)
        if self.cum_yaw > rule.max_cum_yaw or self.peak_rate > rule.max_yaw_rate:
            return BuilderStatus("rejected", reason="turning", **common)
        if len(self.dist) < rule.min_traces:
            return BuilderStatus("rejected", reason="too few traces", **common)
        if self.dist[-1] - self.start < rule.min_length or distance - self.start > rule.max_length:
            return BuilderStatus("rejected", reason="length", **common)
        img = resample(self.dist + [distance], self.data + [trace.samples],
                       self.start, rule.spacing, rule.columns)
        sm = Submap(Radargram(img, rule.spacing, self.dt, ("resample",)),
                    self.start, self.start + (rule.columns - 1) * rule.spacing,
                    t_start=self.t_start, t_end=time)
        return BuilderStatus("finalized", submap=sm, **common)

    def flush(self):
        """Discard the open segment at end of stream."""
        if self.start is None:
            return None
        st = BuilderStatus("rejected", reason="incomplete", start=self.start,
                           end=self.dist[-1], t_start=self.t_start)
        self._reset()
        return st


def salience(sm, cfg: SalienceConfig | None = None) -> float:
    """Max over rows of the window-averaged row-wise standard deviation."""
    cfg = cfg or SalienceConfig()
    img = sm.data if isinstance(sm, Submap) else np.asarray(sm, dtype=float)
    if img.size == 0:
        raise ValueError("empty image")
    rs = img.std(axis=1)
    w = min(cfg.window, len(rs))
    pooled = np.convolve(rs, np.full(w, 1.0 / w), mode="valid")
    return float(pooled.max())


def is_salient(sm, cfg: SalienceConfig | None = None) -> bool:
    cfg = cfg or SalienceConfig()
    return salience(sm, cfg) >= cfg.threshold
