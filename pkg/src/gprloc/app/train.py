"""Training-pair harvesting, head training and the validation report."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..preprocess import PreprocessConfig
from ..regmodel import (FilterBank, LinearHead, RegConfig, corr_feat_full,
                        engineered_register, gate, huber, train_linear_head)
from ..simworld import RawDataset
from ..submap import SalienceConfig, SubmapRule
from .frontend import FeatureCache, _truth_projector, _wrap, build_segments, condition_traces


@dataclass
class PairSet:
    """Gated submap pairs of one dataset with truth labels (m)."""

    name: str
    argmax: np.ndarray        # (n, k)
    mask: np.ndarray          # (n, k)
    engineered: np.ndarray    # (n,) m
    truth: np.ndarray         # (n,) m
    gate_stat: np.ndarray     # (n,)

    def __len__(self):
        return len(self.truth)

    def subset(self, idx):
        return PairSet(self.name, self.argmax[idx], self.mask[idx], self.engineered[idx],
                       self.truth[idx], self.gate_stat[idx])


@dataclass(frozen=True)
class HarvestConfig:
    stride: int = 3               # traces between the cut offsets of successive passes
    passes: int = 14
    max_pairs: int = 400          # per dataset, drawn at random when exceeded
    margin: float = 1.0           # keep candidate pairs whose true shift is within margin * T_max
    seed: int = 0


def harvest_pairs(ds: RawDataset, name="dataset", pcfg: PreprocessConfig | None = None,
                  rule: SubmapRule | None = None, scfg: SalienceConfig | None = None,
                  rcfg: RegConfig | None = None, bank: FilterBank | None = None,
                  hcfg: HarvestConfig | None = None) -> PairSet:
    """Cut the run into submaps at several offsets and keep gated, truly overlapping pairs.

    Pairs must be disjoint in time and travel along parallel or
    anti-parallel headings (from truth); opposite headings use the
    reversed newer image, as the localization front end does.
    """
    pcfg = pcfg or PreprocessConfig()
    rule = rule or SubmapRule()
    scfg = scfg or SalienceConfig()
    rcfg = rcfg or RegConfig()
    bank = bank or FilterBank.default()
    hcfg = hcfg or HarvestConfig()
    traces = condition_traces(ds, pcfg)
    subs = []
    for p in range(hcfg.passes):
        for s in build_segments(ds, traces, rule, pcfg, scfg, skip=p * hcfg.stride):
            if s.submap is not None and s.salience >= scfg.threshold:
                subs.append(s.submap)
    subs.sort(key=lambda s: s.t_start)
    label = _truth_projector(ds)
    qw, qz = ds.truth_quat[:, 0], ds.truth_quat[:, 3]
    yaw_truth = np.unwrap(2 * np.arctan2(qz, qw))
    heading = [float(np.interp(s.t_start, ds.truth_t, yaw_truth)) for s in subs]
    n_cols = rule.columns
    t_max = rcfg.t_max(n_cols)
    lim = hcfg.margin * t_max * rule.spacing

    cands = []
    for j in range(len(subs)):
        for i in range(j):
            if subs[i].t_end > subs[j].t_start:
                continue
            dyaw = abs(_wrap(heading[j] - heading[i]))
            if dyaw < np.pi / 4:
                flipped = False
            elif dyaw > 3 * np.pi / 4:
                flipped = True
            else:
                continue
            y = label(subs[i], subs[j], flipped)
            if abs(y) <= lim:
                cands.append((i, j, flipped, y))
    rng = np.random.default_rng(hcfg.seed)
    if len(cands) > hcfg.max_pairs:
        keep = np.sort(rng.choice(len(cands), hcfg.max_pairs, replace=False))
        cands = [cands[k] for k in keep]

    cache = FeatureCache(bank)
    rows = []
    for i, j, flipped, y in cands:
        S1 = subs[i]
        S2 = cache.image(j, subs[j], flipped)
        maps = (cache.maps(i, S1, False), cache.maps(j, subs[j], flipped))
        f = corr_feat_full(S1, S2, bank, t_max, rcfg, maps=maps)
        if not gate(S1, S2, bank, rcfg, feats=f):
            continue
        eng = engineered_register(S1, S2, t_max, rcfg).translation
        rows.append((f.argmax, f.mask, eng, y, f.gate_stat))
    k = bank.k
    if not rows:
        return PairSet(name, np.zeros((0, k), int), np.zeros((0, k), bool), np.zeros(0), np.zeros(0), np.zeros(0))
    a, m, e, y, g = zip(*rows)
    return PairSet(name, np.array(a), np.array(m), np.array(e), np.array(y), np.array(g))


def split(ps: PairSet, train_frac, seed=0):
    if not 0 < train_frac < 1:
        raise ValueError("split ratio must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    idx = rng.permutation(len(ps))
    n = int(round(train_frac * len(ps)))
    return ps.subset(np.sort(idx[:n])), ps.subset(np.sort(idx[n:]))


@dataclass
class ModelScores:
    huber_cm: float
    mae_cm: float


@dataclass
class ValidationReport:
    per_dataset: dict = field(default_factory=dict)   # name -> {"learned"|"engineered"|"zeroth": ModelScores}
    combined: dict = field(default_factory=dict)
    n_train: int = 0
    n_val: int = 0

    def lines(self):
        out = [f"training pairs {self.n_train}, validation pairs {self.n_val}",
               f"{'dataset':<16}{'model':<12}{'huber_cm':>10}{'mae_cm':>10}"]
        for name, d in list(self.per_dataset.items()) + [("combined", self.combined)]:
            for model in ("learned", "engineered", "zeroth"):
                if model in d:
                    s = d[model]
                    out.append(f"{name:<16}{model:<12}{s.huber_cm:>10.3f}{s.mae_cm:>10.3f}")
        return out


def _scores(pred, y, delta):
    r = np.asarray(pred) - np.asarray(y)
    if r.size == 0:
        return ModelScores(float("nan"), float("nan"))
    return ModelScores(100 * float(np.mean(huber(r, delta))), 100 * float(np.mean(np.abs(r))))


def train_and_validate(pairsets, spacing, train_frac=0.7, delta=0.1, t_max=16, seed=0):
    """Train one head on the pooled training splits; score learned, engineered and
    zeroth-order (mean training shift) predictors on every validation split."""
    if len(pairsets) < 1:
        raise ValueError("need at least one pair set")
    trains, vals = [], []
    for i, ps in enumerate(pairsets):
        tr, va = split(ps, train_frac, seed + i)
        trains.append(tr)
        vals.append(va)
    A = np.concatenate([t.argmax for t in trains])
    y = np.concatenate([t.truth for t in trains])
    head = train_linear_head(A, y, spacing, delta=delta, t_max=t_max)
    zeroth = float(np.mean(y))
    rep = ValidationReport(n_train=len(y), n_val=int(sum(len(v) for v in vals)))
    allp = {"learned": [], "engineered": [], "zeroth": []}
    ally = []
    for v in vals:
        preds = {"learned": head.predict_shift_m(v.argmax) if len(v) else np.zeros(0),
                 "engineered": v.engineered,
                 "zeroth": np.full(len(v), zeroth)}
        rep.per_dataset[v.name] = {m: _scores(p, v.truth, delta) for m, p in preds.items()}
        for m, p in preds.items():
            allp[m].append(p)
        ally.append(v.truth)
    y_all = np.concatenate(ally)
    rep.combined = {m: _scores(np.concatenate(p), y_all, delta) for m, p in allp.items()}
    head.meta["zeroth"] = zeroth
    return head, rep
