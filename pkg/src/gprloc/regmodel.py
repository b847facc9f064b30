"""Submap-pair registration: Pearson cost curves, a fixed filter bank, the
correlation gate and the linear "corr-feat" head.

Shift convention: ``T > 0`` means features of S1 at column ``c`` appear in
S2 at column ``c + T``, so the overlap compares ``S1[:, :n-T]`` with
``S2[:, T:]``.  The returned translation ``K * T`` is then the along-track
distance from the start of S2 back to the start of S1.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

MODEL_FORMAT = "gprloc-linear-head"
MODEL_VERSION = 1


@dataclass(frozen=True)
class RegConfig:
    t_max_frac: float = 0.4          # of submap columns
    min_overlap_frac: float = 0.25   # of submap columns
    gate_threshold: float = 0.2

    def __post_init__(self):
        if not 0 < self.t_max_frac < 1 or not 0 < self.min_overlap_frac < 1:
            raise ValueError("fractions must lie in (0, 1)")
        if not 0 < self.gate_threshold < 1:
            raise ValueError("gate threshold must lie in (0, 1)")

    def t_max(self, columns):
        return int(np.floor(self.t_max_frac * columns))

    def min_overlap(self, columns):
        return max(2, int(np.ceil(self.min_overlap_frac * columns)))


def _as_image(s):
    return np.asarray(getattr(s, "data", s), dtype=float)


def _spacing(s, default=1.0):
    return float(getattr(s, "spacing", default))


# --------------------------------------------------------------------------
# correlation


def _pearson_batch(A, B):
    """Pearson over the trailing two axes; returns (r, degenerate)."""
    a = A - A.mean(axis=(-2, -1), keepdims=True)
    b = B - B.mean(axis=(-2, -1), keepdims=True)
    saa = (a * a).sum(axis=(-2, -1))
    sbb = (b * b).sum(axis=(-2, -1))
    sab = (a * b).sum(axis=(-2, -1))
    # a region is constant when its centred energy is round-off relative to its raw energy
    tiny_a = saa <= 1e-20 * (A * A).sum(axis=(-2, -1)) + 1e-300
    tiny_b = sbb <= 1e-20 * (B * B).sum(axis=(-2, -1)) + 1e-300
    degenerate = tiny_a | tiny_b
    den = np.sqrt(np.where(degenerate, 1.0, saa * sbb))
    r = np.where(degenerate, 0.0, sab / den)
    return np.clip(r, -1.0, 1.0), degenerate


def pearson(A, B, return_flag=False):
    """Pearson correlation of two equally shaped regions.

    A constant region makes the correlation undefined; 0 is returned and
    the degenerate flag set.
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if A.shape != B.shape:
        raise ValueError("regions must share shape")
    if A.size < 2:
        raise ValueError("need at least two pixels")
    r, deg = _pearson_batch(A.reshape(1, 1, -1), B.reshape(1, 1, -1))
    r, deg = float(r[0]), bool(deg[0])
    return (r, deg) if return_flag else r


@dataclass(frozen=True)
class CostCurve:
    shifts: np.ndarray        # integer shifts -T_max..T_max
    values: np.ndarray        # (..., n_shifts); excluded shifts hold -inf
    valid: np.ndarray         # bool, same shape as values

    def best(self):
        """Argmax shift along the last axis, ties toward the smallest |T|.

        Returns (shift, peak value, usable flag) with one entry per curve.
        """
        v = np.where(self.valid, self.values, -np.inf)
        order = np.lexsort((self.shifts, np.abs(self.shifts)))
        vo = v[..., order]
        peak = vo.max(axis=-1, keepdims=True)
        tol = 1e-12 * np.maximum(1.0, np.abs(np.where(np.isfinite(peak), peak, 0.0)))
        first = np.argmax(vo >= peak - tol, axis=-1)
        shift = self.shifts[order][first]
        usable = np.isfinite(peak[..., 0])
        return np.where(usable, shift, 0), np.where(usable, peak[..., 0], 0.0), usable


def cost_curves(F1, F2, t_max, min_overlap):
    """Cost curves for stacks of images (..., rows, cols) over shifts |T| <= t_max.

    Column-pair inner products are formed once; each shift then only sums
    a diagonal band, so the cost is independent of the number of shifts.
    """
    F1 = np.asarray(F1, dtype=float)
    F2 = np.asarray(F2, dtype=float)
    if F1.shape != F2.shape:
        raise ValueError("images must share shape")
    rows, n = F1.shape[-2:]
    shifts = np.arange(-t_max, t_max + 1)
    m = n - np.abs(shifts)
    lo1 = np.maximum(0, -shifts)          # first column of S1 in the overlap
    lo2 = np.maximum(0, shifts)           # first column of S2
    c = np.arange(n)
    inside = c[None, :] < np.maximum(m, 0)[:, None]
    c1 = np.where(inside, lo1[:, None] + c[None, :], 0)
    c2 = np.where(inside, lo2[:, None] + c[None, :], 0)

    def band(P, lo):
        hi = lo + np.maximum(m, 0)
        return P[..., hi] - P[..., lo]

    def prefix(v):
        return np.concatenate([np.zeros(v.shape[:-1] + (1,)), np.cumsum(v, axis=-1)], axis=-1)

    sa = band(prefix(F1.sum(axis=-2)), lo1)
    sb = band(prefix(F2.sum(axis=-2)), lo2)
    qa = band(prefix((F1 * F1).sum(axis=-2)), lo1)
    qb = band(prefix((F2 * F2).sum(axis=-2)), lo2)
    X = np.swapaxes(F1, -1, -2) @ F2
    sab = (X[..., c1, c2] * inside).sum(axis=-1)
    npx = rows * np.maximum(m, 1)
    caa = qa - sa * sa / npx
    cbb = qb - sb * sb / npx
    cab = sab - sa * sb / npx
    deg = (caa <= 1e-12 * qa + 1e-300) | (cbb <= 1e-12 * qb + 1e-300)
    ok = (m >= min_overlap) & ~deg
    r = np.where(ok, cab / np.sqrt(np.where(ok, caa * cbb, 1.0)), 0.0)
    vals = np.where(ok, np.clip(r, -1.0, 1.0), -np.inf)
    valid = ok & np.ones(vals.shape, dtype=bool)
    return CostCurve(shifts, vals, valid)


@dataclass(frozen=True)
class RegistrationResult:
    translation: float        # m along the direction of travel
    confidence: float         # in [0, 1]
    accepted: bool
    shift: float = 0.0        # columns (possibly fractional for the learned head)


def engineered_register(S1, S2, t_max=None, cfg: RegConfig | None = None, spacing=None):
    """Translation K * argmax_T r(T) of the raw images."""
    cfg = cfg or RegConfig()
    A, B = _as_image(S1), _as_image(S2)
    if A.shape != B.shape:
        raise ValueError("submaps must share shape")
    K = spacing if spacing is not None else _spacing(S1)
    n = A.shape[1]
    t_max = cfg.t_max(n) if t_max is None else int(t_max)
    curve = cost_curves(A, B, t_max, cfg.min_overlap(n))
    shift, peak, usable = curve.best()
    shift, peak = int(shift), float(peak)
    conf = float(np.clip(peak, 0.0, 1.0)) if usable else 0.0
    return RegistrationResult(K * shift, conf, bool(usable) and conf >= cfg.gate_threshold, float(shift))


# --------------------------------------------------------------------------
# filter bank


def _edge_kernel(angle, size=7, sigma=1.5):
    """Derivative-of-Gaussian edge detector across direction ``angle``.

    0 responds to horizontal edges (intensity changing down the rows),
    pi/2 to vertical edges (changing along the columns).
    """
    c = size // 2
    i, j = np.mgrid[-c:c + 1, -c:c + 1].astype(float)
    u = np.cos(angle) * i + np.sin(angle) * j
    k = -u * np.exp(-(i * i + j * j) / (2 * sigma * sigma))
    k = k - k.mean()
    return k / np.abs(k).sum()


def _log_kernel(sigma, size=7):
    c = size // 2
    i, j = np.mgrid[-c:c + 1, -c:c + 1].astype(float)
    r2 = (i * i + j * j) / (2 * sigma * sigma)
    k = -(1 - r2) * np.exp(-r2)
    return k - k.mean()


def _sparse_kernel(rng, size=7, taps=3):
    k = np.zeros(size * size)
    pos = rng.choice(size * size, 2 * taps, replace=False)
    k[pos[:taps]] = 1.0
    k[pos[taps:]] = -1.0
    return k.reshape(size, size)


@dataclass(frozen=True)
class FilterBank:
    kernels: tuple            # of (size, size) arrays
    names: tuple

    @property
    def k(self):
        return len(self.kernels)

    @classmethod
    def default(cls, k=16, seed=0, size=7):
        """Oriented edge detectors, two LoG scales, identity, then seeded sparse stencils."""
        if k < 2:
            raise ValueError("filter bank needs k >= 2")
        ks, names = [], []
        for deg in (0, 45, 90, -45):
            ks.append(_edge_kernel(np.deg2rad(deg), size))
            names.append(f"edge{deg}")
        for s in (1.0, 2.0):
            ks.append(_log_kernel(s, size))
            names.append(f"log{s:g}")
        ident = np.zeros((size, size))
        ident[size // 2, size // 2] = 1.0
        ks.append(ident)
        names.append("identity")
        rng = np.random.default_rng(seed)
        i = 0
        while len(ks) < k:
            ks.append(_sparse_kernel(rng, size))
            names.append(f"sparse{i}")
            i += 1
        return cls(tuple(ks[:k]), tuple(names[:k]))

    def to_dict(self):
        return {"names": list(self.names), "kernels": [kk.tolist() for kk in self.kernels]}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(np.asarray(kk, dtype=float) for kk in d["kernels"]), tuple(d["names"]))


def feature_maps(S, bank: FilterBank):
    """Valid-mode 2D convolution with every kernel; returns (k, rows', cols')."""
    img = _as_image(S)
    kh = max(kk.shape[0] for kk in bank.kernels)
    kw = max(kk.shape[1] for kk in bank.kernels)
    if img.shape[0] < kh or img.shape[1] < kw:
        raise ValueError("image smaller than the kernels")
    stack = np.zeros((bank.k, kh, kw))
    for i, kk in enumerate(bank.kernels):
        # pad to the common size so every map has the same shape
        r0, c0 = (kh - kk.shape[0]) // 2, (kw - kk.shape[1]) // 2
        stack[i, r0:r0 + kk.shape[0], c0:c0 + kk.shape[1]] = kk
    win = np.lib.stride_tricks.sliding_window_view(img, (kh, kw))
    # convolution = correlation with the flipped kernel
    return np.einsum("rcij,kij->krc", win, stack[:, ::-1, ::-1], optimize=True)


@dataclass(frozen=True)
class CorrFeatures:
    argmax: np.ndarray        # (k,) integer shifts, 0 where masked
    mask: np.ndarray          # (k,) True where the filter's curve was degenerate
    peaks: np.ndarray         # (k,) peak correlation per filter
    gate_stat: float          # max over T of the mean correlation of unmasked filters
    gate_shift: int


def corr_feat_full(S1, S2, bank: FilterBank, t_max=None, cfg: RegConfig | None = None, maps=None):
    """Per-filter argmax shifts, mask, peaks and the gate statistic.

    ``maps`` may carry precomputed feature maps of (S1, S2).
    """
    cfg = cfg or RegConfig()
    A, B = _as_image(S1), _as_image(S2)
    if A.shape != B.shape:
        raise ValueError("submaps must share shape")
    n = A.shape[1]
    t_max = cfg.t_max(n) if t_max is None else int(t_max)
    F1, F2 = maps if maps is not None else (feature_maps(A, bank), feature_maps(B, bank))
    curve = cost_curves(F1, F2, t_max, cfg.min_overlap(n))
    shift, peak, usable = curve.best()
    mask = ~usable
    if np.all(mask):
        return CorrFeatures(np.zeros(bank.k, dtype=int), mask, np.zeros(bank.k), 0.0, 0)
    v = np.where(curve.valid, curve.values, 0.0)[~mask]
    cnt = curve.valid[~mask].sum(axis=0)
    mean = np.where(cnt > 0, v.sum(axis=0) / np.maximum(cnt, 1), -np.inf)
    g = CostCurve(curve.shifts, mean, cnt > 0)
    gs, gv, _ = g.best()
    return CorrFeatures(np.where(mask, 0, shift).astype(int), mask, peak, float(gv), int(gs))


def corr_feat(S1, S2, bank: FilterBank, t_max=None, cfg: RegConfig | None = None):
    """Per-filter argmax shifts (k integers); degenerate filters give 0."""
    return corr_feat_full(S1, S2, bank, t_max, cfg).argmax


def gate(S1, S2, bank: FilterBank | None = None, cfg: RegConfig | None = None, feats=None):
    """Accept a pair when the mean per-filter correlation peaks above the threshold."""
    cfg = cfg or RegConfig()
    if feats is None:
        feats = corr_feat_full(S1, S2, bank or FilterBank.default(), cfg=cfg)
    return bool(not np.all(feats.mask) and feats.gate_stat >= cfg.gate_threshold)


# --------------------------------------------------------------------------
# learned head


def huber(r, delta):
    a = np.abs(r)
    return np.where(a <= delta, 0.5 * r * r, delta * (a - 0.5 * delta))


@dataclass
class LinearHead:
    weights: np.ndarray
    bias: float
    K: float                      # m per column
    t_max: int = 16
    meta: dict = field(default_factory=dict)

    def predict_shift_m(self, a):
        a = np.asarray(a, dtype=float)
        y = self.K * (a @ self.weights) + self.bias
        lim = self.t_max * self.K
        return np.clip(y, -lim, lim)

    def to_dict(self):
        return {"weights": [float(w) for w in self.weights], "bias": float(self.bias),
                "K": float(self.K), "t_max": int(self.t_max), "meta": self.meta}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["weights"], dtype=float), float(d["bias"]), float(d["K"]),
                   int(d["t_max"]), dict(d.get("meta", {})))


def train_linear_head(A, y, K, delta=0.1, ridge=1e-6, t_max=16, max_iter=200, tol=1e-8,
                      min_pairs_per_filter=10):
    """Fit y ~ K * w.a + b under a Huber loss by iteratively reweighted least squares."""
    A = np.asarray(A, dtype=float)
    y = np.asarray(y, dtype=float)
    n, k = A.shape
    if n < min_pairs_per_filter * k:
        raise ValueError(f"need at least {min_pairs_per_filter * k} training pairs, got {n}")
    X = np.column_stack([K * A, np.ones(n)])
    rank_def = np.linalg.matrix_rank(X) < k + 1
    if rank_def:
        log.warning("design matrix is rank deficient; using ridge %.1e", ridge)
    reg = np.eye(k + 1) * (ridge if rank_def else 0.0)

    def solve(wts):
        Xw = X * wts[:, None]
        return np.linalg.solve(X.T @ Xw + reg, Xw.T @ y)

    beta = solve(np.ones(n))
    it = 0
    for it in range(1, max_iter + 1):
        r = y - X @ beta
        a = np.abs(r)
        wts = np.where(a <= delta, 1.0, delta / np.maximum(a, 1e-300))
        new = solve(wts)
        change = float(np.max(np.abs(new - beta)))
        beta = new
        if change < tol:
            break
    r = y - X @ beta
    loss = float(np.mean(huber(r, delta)))
    meta = {"loss": loss, "iterations": it, "rank_deficient": bool(rank_def), "delta": delta,
            "pairs": int(n)}
    return LinearHead(beta[:k], float(beta[k]), float(K), int(t_max), meta)


def learned_register(S1, S2, head: LinearHead, bank: FilterBank, cfg: RegConfig | None = None,
                     feats=None):
    cfg = cfg or RegConfig()
    if feats is None:
        feats = corr_feat_full(S1, S2, bank, head.t_max, cfg)
    accepted = gate(S1, S2, bank, cfg, feats=feats)
    y = float(head.predict_shift_m(feats.argmax))
    conf = float(np.clip(feats.gate_stat, 0.0, 1.0))
    return RegistrationResult(y, conf, accepted, y / head.K)


# --------------------------------------------------------------------------
# model file


def save_model(path, head: LinearHead, bank: FilterBank, cfg: RegConfig):
    rec = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "k": bank.k,
        "bank": bank.to_dict(),
        "head": head.to_dict(),
        "gate_threshold": cfg.gate_threshold,
        "t_max_frac": cfg.t_max_frac,
        "min_overlap_frac": cfg.min_overlap_frac,
    }
    with open(path, "w") as fh:
        json.dump(rec, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_model(path):
    with open(path) as fh:
        rec = json.load(fh)
    if rec.get("format") != MODEL_FORMAT:
        raise ValueError(f"{path}: not a {MODEL_FORMAT} file")
    if rec.get("version") != MODEL_VERSION:
        raise ValueError(f"{path}: unsupported model version {rec.get('version')}")
    bank = FilterBank.from_dict(rec["bank"])
    if bank.k != rec["k"]:
        raise ValueError(f"{path}: kernel count mismatch")
    head = LinearHead.from_dict(rec["head"])
    if len(head.weights) != bank.k:
        raise ValueError(f"{path}: weight count does not match kernel count")
    cfg = RegConfig(rec["t_max_frac"], rec["min_overlap_frac"], rec["gate_threshold"])
    return head, bank, cfg
