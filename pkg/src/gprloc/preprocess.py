"""GPR trace conditioning and radargram cleanup.

Order of operations in the pipeline is fixed: local average -> dewow ->
SEC gain (per trace), then stacking into a submap image, running mean-trace
removal and percentile thresholding (per image).
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy import signal

GAIN_CLAMP = 1e6


@dataclass(frozen=True)
class Trace:
    samples: np.ndarray
    dt: float                 # ns per sample, sample 0 at t = 0
    position: float = 0.0     # cumulative wheel distance, m

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=float)
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if not np.all(np.isfinite(s)):
            raise ValueError("trace contains non-finite samples")
        object.__setattr__(self, "samples", s)

    @property
    def times(self):
        return np.arange(len(self.samples)) * self.dt


@dataclass(frozen=True)
class Radargram:
    data: np.ndarray          # rows = time samples, cols = along-track
    spacing: float            # m between columns
    dt: float = 1.0
    applied: tuple = ()

    def with_data(self, data, step):
        return replace(self, data=data, applied=self.applied + (step,))


@dataclass(frozen=True)
class PreprocessConfig:
    gain_a: float = 0.0           # 1/ns
    gain_b: float = 0.5
    center_freq_mhz: float = 500.0
    lowcut_ratio: float = 0.1     # low-cut corner as a fraction of the centre frequency
    average_window: int = 3
    threshold_pct: float = 50.0

    def __post_init__(self):
        if self.gain_a < 0 or self.gain_b < 0:
            raise ValueError("gain constants must be non-negative")
        if not 0 < self.threshold_pct < 100:
            raise ValueError("threshold percentile must lie in (0, 100)")
        if self.average_window < 1:
            raise ValueError("average window must be >= 1")

    @property
    def lowcut_mhz(self):
        return self.center_freq_mhz * self.lowcut_ratio


def local_average(traces):
    """Sample-wise mean of a window of traces; position is the mean position."""
    traces = list(traces)
    if not traces:
        raise ValueError("empty averaging window")
    n = len(traces[0].samples)
    if any(len(t.samples) != n for t in traces):
        raise ValueError("traces in a window must share length")
    data = np.mean([t.samples for t in traces], axis=0)
    return Trace(data, traces[0].dt, float(np.mean([t.position for t in traces])))


def dewow_samples(x, dt, lowcut_mhz):
    x = np.asarray(x, dtype=float)
    y = x - x.mean()
    fs = 1e3 / dt  # MHz
    wn = lowcut_mhz / (0.5 * fs)
    if 0 < wn < 1 and len(y) > 3:
        b, a = signal.butter(1, wn, btype="highpass")
        y = signal.filtfilt(b, a, y, padtype="odd", padlen=min(len(y) - 1, 3 * int(np.ceil(1.0 / (np.pi * wn))) + 3))
    return y - y.mean()


def dewow(t: Trace, cfg: PreprocessConfig | None = None) -> Trace:
    """DC removal followed by a zero-phase first-order high-pass."""
    cfg = cfg or PreprocessConfig()
    return Trace(dewow_samples(t.samples, t.dt, cfg.lowcut_mhz), t.dt, t.position)


def sec_gain_curve(times, a, b):
    times = np.asarray(times, dtype=float)
    with np.errstate(divide="ignore"):
        logt = np.where(times > 0, np.log(np.where(times > 0, times, 1.0)), -np.inf)
    if b == 0:
        logg = a * times
    else:
        logg = a * times + b * logt
    return np.exp(np.minimum(logg, np.log(GAIN_CLAMP)))


def sec_gain(t: Trace, a: float, b: float) -> Trace:
    """Multiply by G(t) = exp(a t) t^b, with 0^0 = 1 and G clamped at 1e6."""
    return Trace(t.samples * sec_gain_curve(t.times, a, b), t.dt, t.position)


@dataclass
class MeanTraceState:
    """Running mean trace over every column folded in so far (single writer)."""

    count: int = 0
    mean: np.ndarray | None = None


def remove_mean_trace(img: Radargram, state: MeanTraceState):
    """Subtract the running mean trace, then fold this image into it.

    With an empty state the image's own mean trace is subtracted.
    """
    data = img.data
    if state.mean is not None and len(state.mean) != data.shape[0]:
        raise ValueError("mean-trace length does not match image rows")
    ref = data.mean(axis=1) if state.count == 0 else state.mean
    out = data - ref[:, None]
    n = data.shape[1]
    total = state.count + n
    col_sum = data.sum(axis=1)
    new_mean = col_sum / total if state.count == 0 else (state.mean * state.count + col_sum) / total
    return img.with_data(out, "mean_trace"), MeanTraceState(total, new_mean)


def threshold(img: Radargram, pct: float) -> Radargram:
    """Zero every value whose magnitude is below the pct-th percentile of |values|."""
    if not 0 < pct < 100:
        raise ValueError("percentile must lie in (0, 100)")
    mag = np.abs(img.data)
    q = np.percentile(mag, pct)
    return img.with_data(np.where(mag < q, 0.0, img.data), "threshold")


def condition_trace(t: Trace, cfg: PreprocessConfig) -> Trace:
    """dewow then gain: the per-trace part of the chain (after averaging)."""
    return sec_gain(dewow(t, cfg), cfg.gain_a, cfg.gain_b)


def finish_image(img: Radargram, state: MeanTraceState, cfg: PreprocessConfig):
    """Image-level steps: mean-trace removal, thresholding."""
    img, state = remove_mean_trace(img, state)
    return threshold(img, cfg.threshold_pct), state
