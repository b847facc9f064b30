import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gprloc.preprocess import Trace
from gprloc.submap import (SalienceConfig, StreamError, SubmapBuilder, SubmapRule,
                           is_salient, resample, salience)

DT = 0.1875


def _feed(builder, dists, samples=None, yaw_rate=0.0, rng=None):
    rng = rng or np.random.default_rng(0)
    out = []
    for i, d in enumerate(dists):
        s = samples[i] if samples is not None else rng.normal(size=16)
        out.append(builder.accumulate(Trace(s, DT, d), d, yaw_rate, time=float(i)))
    return out


def test_straight_segment_has_41_columns():
    b = SubmapBuilder(SubmapRule())
    st_ = _feed(b, np.arange(0, 42) * 0.05)
    fin = [s for s in st_ if s.state == "finalized"]
    assert len(fin) == 1
    sm = fin[0].submap
    assert sm.columns == 41
    assert (sm.end - sm.start) / sm.spacing + 1 == pytest.approx(41)
    assert st_[0].state == "collecting"


def test_turning_segment_is_rejected():
    b = SubmapBuilder(SubmapRule())
    dists = np.arange(0, 42) * 0.05
    st_ = []
    for i, d in enumerate(dists):
        if i:
            b.add_gyro(0.05, np.pi / 2 / 2.0)        # a quarter turn spread over the segment
        st_.append(b.accumulate(Trace(np.zeros(16), DT, d), d, 0.0, float(i)))
    rej = [s for s in st_ if s.state == "rejected"]
    assert rej and rej[0].reason == "turning"


def test_peak_yaw_rate_rejects():
    b = SubmapBuilder(SubmapRule(max_yaw_rate=0.3))
    st_ = _feed(b, np.arange(0, 42) * 0.05, yaw_rate=0.5)
    assert [s.reason for s in st_ if s.state == "rejected"] == ["turning"]


def test_too_few_traces_rejected():
    b = SubmapBuilder(SubmapRule(min_traces=10))
    st_ = _feed(b, [0.0, 0.5, 1.0, 1.5, 1.9, 2.0])
    assert [s.reason for s in st_ if s.state == "rejected"] == ["too few traces"]


def test_long_gap_rejected():
    b = SubmapBuilder(SubmapRule())
    st_ = _feed(b, list(np.arange(0, 37) * 0.05) + [2.5])
    assert [s.reason for s in st_ if s.state == "rejected"] == ["length"]


def test_decreasing_distance_is_stream_error():
    b = SubmapBuilder()
    _feed(b, [0.0, 0.1])
    with pytest.raises(StreamError):
        _feed(b, [0.05])


def test_flush_discards_open_segment():
    b = SubmapBuilder()
    _feed(b, [0.0, 0.1, 0.2])
    st_ = b.flush()
    assert st_.state == "rejected" and st_.reason == "incomplete"
    assert b.flush() is None


def test_resample_linear_weights():
    traces = np.array([[1.0, 0.0], [2.0, 10.0], [5.0, 3.0]])
    img = resample([0.0, 0.04, 0.11], traces, 0.0, 0.05, 3)
    np.testing.assert_allclose(img[:, 1], 6 / 7 * traces[1] + 1 / 7 * traces[2])
    np.testing.assert_allclose(img[:, 0], traces[0])


def test_resample_exact_on_grid():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(41, 8))
    img = resample(np.arange(41) * 0.05, X, 0.0, 0.05, 41)
    np.testing.assert_allclose(img, X.T, atol=1e-12)


def test_resample_averages_repeated_distances():
    img = resample([0.0, 0.0, 0.1], np.array([[1.0], [3.0], [4.0]]), 0.0, 0.05, 3)
    np.testing.assert_allclose(img[0], [2.0, 3.0, 4.0])


@settings(max_examples=30, deadline=None)
@given(st.floats(-100, 100), st.integers(0, 1000))
def test_translation_consistent(offset, seed):
    rng = np.random.default_rng(seed)
    dists = np.cumsum(rng.uniform(0.03, 0.07, 60))
    samples = rng.normal(size=(60, 8))
    imgs = []
    for off in (0.0, offset):
        b = SubmapBuilder()
        st_ = _feed(b, dists + off, samples)
        fin = [s.submap.data for s in st_ if s.state == "finalized"]
        imgs.append(fin[0] if fin else None)
    if imgs[0] is not None:
        np.testing.assert_allclose(imgs[0], imgs[1], atol=1e-9)


def test_submap_flipped_reverses_columns():
    b = SubmapBuilder()
    sm = [s.submap for s in _feed(b, np.arange(0, 42) * 0.05) if s.submap is not None][0]
    f = sm.flipped()
    np.testing.assert_array_equal(f.data, sm.data[:, ::-1])
    assert f.reversed and not f.flipped().reversed


def test_salience_examples():
    assert salience(np.full((16, 41), 3.0)) == 0.0
    img = np.zeros((16, 41))
    img[:, 5] = np.linspace(0, 2, 16)
    rs = img.std(axis=1)
    np.testing.assert_allclose(rs, np.abs(img[:, 5]) * np.sqrt(40) / 41)


def test_structured_image_beats_noise_of_equal_energy():
    rng = np.random.default_rng(2)
    rows, cols = 64, 41
    r, c = np.mgrid[0:rows, 0:cols]
    apex = 20 + np.sqrt(100 + (c - 20.0) ** 2) - 10
    hyper = np.exp(-0.5 * ((r - apex) / 1.5) ** 2)
    noise = rng.normal(size=(rows, cols))
    noise *= np.sqrt((hyper ** 2).sum() / (noise ** 2).sum())
    assert salience(hyper) > salience(noise)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 1000), st.floats(-50, 50))
def test_salience_invariant_to_offset(seed, c):
    img = np.random.default_rng(seed).normal(size=(16, 20))
    assert salience(img + c) == pytest.approx(salience(img), rel=1e-9, abs=1e-12)


def test_is_salient_threshold():
    img = np.zeros((16, 41))
    img[:, ::2] = 1.0
    assert is_salient(img, SalienceConfig(threshold=0.4))
    assert not is_salient(img, SalienceConfig(threshold=0.6))
    with pytest.raises(ValueError):
        salience(np.zeros((0, 0)))


@pytest.mark.parametrize("kw", [dict(min_length=2.3), dict(spacing=0.0), dict(max_cum_yaw=0.0),
                                dict(min_traces=0)])
def test_rule_ranges(kw):
    with pytest.raises(ValueError):
        SubmapRule(**kw)


def test_salience_config_ranges():
    with pytest.raises(ValueError):
        SalienceConfig(window=0)
    with pytest.raises(ValueError):
        SalienceConfig(gate_threshold=1.5)
