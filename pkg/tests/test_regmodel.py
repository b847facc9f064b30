import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gprloc.regmodel import (FilterBank, LinearHead, RegConfig, corr_feat, corr_feat_full,
                             cost_curves, engineered_register, feature_maps, gate, huber,
                             learned_register, load_model, pearson, save_model, train_linear_head)

from util import clean_strip, shift_pair

COLS = 41
K = 0.05
BANK = FilterBank.default()
CFG = RegConfig()
T_MAX = CFG.t_max(COLS)


@pytest.fixture(scope="module")
def strip():
    return clean_strip(3)


@pytest.fixture(scope="module")
def other_strip():
    return clean_strip(4)


def test_pearson_examples():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(10, 10))
    assert pearson(X, X) == pytest.approx(1.0)
    assert pearson(X, -X) == pytest.approx(-1.0)
    A, B = rng.normal(size=(2, 100, 100))
    assert abs(pearson(A, B)) < 0.1


def test_pearson_degenerate_and_errors():
    r, deg = pearson(np.ones((3, 3)), np.ones((3, 3)), return_flag=True)
    assert r == 0.0 and deg
    r, deg = pearson(np.ones((3, 3)), np.arange(9.0).reshape(3, 3), return_flag=True)
    assert r == 0.0 and deg
    with pytest.raises(ValueError):
        pearson(np.ones((2, 2)), np.ones((3, 3)))
    with pytest.raises(ValueError):
        pearson(np.ones(1), np.ones(1))


def test_pearson_mean_taken_over_shared_region():
    A = np.array([[1.0, 2.0, 3.0]])
    assert pearson(A + 100.0, A) == pytest.approx(1.0)


def test_cost_curve_matches_direct_pearson():
    rng = np.random.default_rng(1)
    A, B = rng.normal(size=(2, 8, 20))
    curve = cost_curves(A, B, 6, 5)
    for T, v in zip(curve.shifts, curve.values):
        if T >= 0:
            ref = pearson(A[:, :20 - T], B[:, T:])
        else:
            ref = pearson(A[:, -T:], B[:, :20 + T])
        assert v == pytest.approx(ref, abs=1e-12)
    assert np.all(np.abs(curve.values) <= 1.0)


def test_cost_curve_excludes_short_overlaps():
    rng = np.random.default_rng(2)
    A, B = rng.normal(size=(2, 4, 10))
    curve = cost_curves(A, B, 8, 5)
    short = 10 - np.abs(curve.shifts) < 5
    assert np.all(np.isneginf(curve.values[short])) and not curve.valid[short].any()


def test_engineered_self_registration(strip):
    S1, S2 = shift_pair(strip, 40, 8, COLS)
    res = engineered_register(S1, S2, T_MAX, CFG, spacing=K)
    assert res.translation == pytest.approx(8 * K, abs=1e-12)
    assert res.confidence == pytest.approx(1.0)
    assert res.accepted
    same = engineered_register(S1, S1, T_MAX, CFG, spacing=K)
    assert same.translation == 0.0 and same.shift == 0.0


def test_engineered_translation_is_bounded(strip):
    rng = np.random.default_rng(3)
    for _ in range(20):
        A = rng.normal(size=strip[:, :COLS].shape)
        res = engineered_register(A, rng.normal(size=A.shape), T_MAX, CFG, spacing=K)
        assert abs(res.translation) <= T_MAX * K + 1e-12
        assert 0.0 <= res.confidence <= 1.0


def test_disjoint_regions_are_rejected(strip, other_strip):
    S1 = strip[:, 20:20 + COLS]
    S2 = other_strip[:, 100:100 + COLS]
    assert not engineered_register(S1, S2, T_MAX, CFG, spacing=K).accepted
    assert not gate(S1, S2, BANK, CFG)


def test_engineered_tie_goes_to_smallest_shift():
    img = np.tile(np.array([1.0, -1.0]), (6, 10))       # period-2 columns: every even shift ties
    res = engineered_register(img, img.copy(), 6, RegConfig(min_overlap_frac=0.2), spacing=1.0)
    assert res.shift == 0.0


@pytest.mark.parametrize("T", [-8, -3, 0, 5, 8])
def test_antisymmetry(strip, T):
    S1, S2 = shift_pair(strip, 50, T, COLS)
    fwd = engineered_register(S1, S2, T_MAX, CFG, spacing=K).translation
    back = engineered_register(S2, S1, T_MAX, CFG, spacing=K).translation
    assert fwd == pytest.approx(-back, abs=K)
    a = corr_feat(S1, S2, BANK, T_MAX, CFG)
    b = corr_feat(S2, S1, BANK, T_MAX, CFG)
    np.testing.assert_array_equal(a, -b)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.1, 10.0), st.floats(-5.0, 5.0), st.integers(-8, 8))
def test_engineered_affine_invariance(a, c, T):
    img = clean_strip(3, length=4.0)
    S1, S2 = shift_pair(img, 20, T, COLS)
    ref = engineered_register(S1, S2, T_MAX, CFG, spacing=K)
    res = engineered_register(a * S1 + c, a * S2 + c, T_MAX, CFG, spacing=K)
    assert res.shift == ref.shift
    assert res.confidence == pytest.approx(ref.confidence, abs=1e-9)


@settings(max_examples=20, deadline=None)
@given(st.floats(-5.0, 5.0), st.integers(-8, 8))
def test_corr_feat_invariant_to_offset(c, T):
    img = clean_strip(3, length=4.0)
    S1, S2 = shift_pair(img, 20, T, COLS)
    np.testing.assert_array_equal(corr_feat(S1 + c, S2 + c, BANK, T_MAX, CFG),
                                  corr_feat(S1, S2, BANK, T_MAX, CFG))


def test_filter_bank_layout():
    assert BANK.k == 16
    for kk, name in zip(BANK.kernels, BANK.names):
        if name != "identity":
            assert abs(kk.sum()) < 1e-12
    assert FilterBank.default(seed=1).names == BANK.names
    with pytest.raises(ValueError):
        FilterBank.default(k=1)
    again = FilterBank.from_dict(BANK.to_dict())
    for a, b in zip(again.kernels, BANK.kernels):
        np.testing.assert_array_equal(a, b)


def test_feature_maps_examples():
    rng = np.random.default_rng(4)
    img = rng.normal(size=(20, 30))
    maps = feature_maps(img, BANK)
    assert maps.shape == (16, 14, 24)
    np.testing.assert_allclose(maps[BANK.names.index("identity")], img[3:-3, 3:-3])
    vert = BANK.names.index("edge90")
    np.testing.assert_allclose(feature_maps(np.full((20, 30), 2.0), BANK)[vert], 0.0, atol=1e-12)
    line = np.zeros((20, 30))
    line[:, 12:] = 1.0                                     # a vertical step at column 12
    resp = np.abs(feature_maps(line, BANK)[vert]).sum(axis=0)
    assert abs(int(np.argmax(resp)) + 3 - 11.5) <= 1
    with pytest.raises(ValueError):
        feature_maps(np.zeros((5, 5)), BANK)


def test_corr_feat_examples(strip):
    S1, S2 = shift_pair(strip, 40, 8, COLS)
    f = corr_feat_full(S1, S2, BANK, T_MAX, CFG)
    assert np.all(f.argmax[~f.mask] == 8)
    np.testing.assert_array_equal(corr_feat(S1, S1, BANK, T_MAX, CFG), 0)
    assert gate(S1, S2, BANK, CFG) and gate(S1, S1, BANK, CFG)


def test_all_masked_is_rejected():
    flat = np.ones((30, COLS))
    f = corr_feat_full(flat, flat, BANK, T_MAX, CFG)
    assert f.mask.all() and np.all(f.argmax == 0)
    assert not gate(flat, flat, BANK, CFG)


def test_huber_values():
    np.testing.assert_allclose(huber(np.array([0.05, -0.3]), 0.1), [0.00125, 0.025])


def _exact_training(rng, n=400, k=6):
    shifts = rng.integers(-10, 11, n)
    A = np.tile(shifts[:, None], (1, k)).astype(float)
    return A, shifts * K


def test_head_fits_exact_data():
    rng = np.random.default_rng(5)
    A, y = _exact_training(rng)
    A[:, 0] += rng.integers(-1, 2, len(A))                 # break the exact collinearity
    head = train_linear_head(A, y, K)
    assert head.weights.sum() == pytest.approx(1.0, abs=1e-6)
    assert abs(head.bias) < 1e-8
    assert head.meta["loss"] < 1e-10
    np.testing.assert_allclose(head.predict_shift_m(A[:5]), y[:5], atol=1e-8)


def test_head_rank_deficient_falls_back_to_ridge():
    rng = np.random.default_rng(6)
    A, y = _exact_training(rng)
    head = train_linear_head(A, y, K)
    assert head.meta["rank_deficient"]
    assert head.weights.sum() == pytest.approx(1.0, abs=1e-4)
    assert np.all(np.isfinite(head.weights))


def test_head_ignores_noise_filter():
    rng = np.random.default_rng(7)
    A, y = _exact_training(rng)
    A[:, 1:] += rng.integers(-1, 2, A[:, 1:].shape)        # small integer jitter
    A[:, 0] = rng.integers(-16, 17, len(A))                 # pure noise
    head = train_linear_head(A, y, K)
    assert abs(head.weights[0]) < 0.05


def test_huber_resists_single_outlier():
    rng = np.random.default_rng(8)
    n, k = 300, 3
    A = rng.normal(size=(n, k)) * 5
    w_true = np.array([0.5, 0.3, 0.2])
    y = K * A @ w_true + rng.normal(size=n) * 0.005
    clean = train_linear_head(A, y, K, min_pairs_per_filter=10)
    y_bad = y.copy()
    y_bad[0] = 10 * y[0] if abs(y[0]) > 0.05 else 1.0
    robust = train_linear_head(A, y_bad, K)
    X = np.column_stack([K * A, np.ones(n)])
    ls = np.linalg.lstsq(X, y, rcond=None)[0]
    ls_bad = np.linalg.lstsq(X, y_bad, rcond=None)[0]
    beta = np.append(clean.weights, clean.bias)
    beta_bad = np.append(robust.weights, robust.bias)
    assert np.abs(beta_bad - beta).max() < 0.5 * np.abs(ls_bad - ls).max()


def test_head_needs_enough_pairs():
    with pytest.raises(ValueError):
        train_linear_head(np.zeros((20, 4)), np.zeros(20), K)


def test_prediction_is_clamped_and_finite():
    head = LinearHead(np.ones(3), 0.0, K, t_max=16)
    assert head.predict_shift_m(np.array([100.0, 100.0, 100.0])) == pytest.approx(16 * K)


def test_learned_register_examples(strip):
    rng = np.random.default_rng(9)
    A, y = [], []
    for _ in range(200):
        T = int(rng.integers(-T_MAX, T_MAX + 1))
        S1, S2 = shift_pair(strip, int(rng.integers(T_MAX, strip.shape[1] - COLS - T_MAX)), T, COLS)
        A.append(corr_feat(S1, S2, BANK, T_MAX, CFG))
        y.append(T * K)
    head = train_linear_head(np.array(A), np.array(y), K, t_max=T_MAX)
    S1, S2 = shift_pair(strip, 60, -6, COLS)
    res = learned_register(S1, S2, head, BANK, CFG)
    assert abs(res.translation + 6 * K) <= K
    assert res.accepted and 0.0 <= res.confidence <= 1.0
    assert abs(learned_register(S1, S1, head, BANK, CFG).translation) <= K


def test_model_file_roundtrip(tmp_path):
    head = LinearHead(np.linspace(0, 1, BANK.k), 0.01, K, 16, {"loss": 0.5})
    p = tmp_path / "model.json"
    save_model(p, head, BANK, CFG)
    h2, b2, c2 = load_model(p)
    np.testing.assert_array_equal(h2.weights, head.weights)
    assert h2.bias == head.bias and h2.K == K and h2.meta == head.meta
    assert b2.names == BANK.names and c2 == CFG


def test_model_file_errors(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{"format": "something-else"}')
    with pytest.raises(ValueError):
        load_model(p)
    head = LinearHead(np.zeros(3), 0.0, K)
    save_model(p, head, BANK, CFG)
    with pytest.raises(ValueError):
        load_model(p)


def test_reg_config_ranges():
    with pytest.raises(ValueError):
        RegConfig(t_max_frac=1.0)
    with pytest.raises(ValueError):
        RegConfig(gate_threshold=0.0)
    assert CFG.t_max(41) == 16 and CFG.min_overlap(41) == 11
