"""Absolute trajectory error with rigid alignment."""
from __future__ import annotations

import numpy as np


class EvalError(ValueError):
    pass


def associate(est_t, truth_t, max_dt=0.01):
    """Nearest-neighbour timestamp matching; returns (est_idx, truth_idx)."""
    est_t = np.asarray(est_t, dtype=float)
    truth_t = np.asarray(truth_t, dtype=float)
    if len(truth_t) == 0 or len(est_t) == 0:
        return np.zeros(0, int), np.zeros(0, int)
    j = np.clip(np.searchsorted(truth_t, est_t), 1, max(len(truth_t) - 1, 1))
    j0 = np.clip(j - 1, 0, len(truth_t) - 1)
    j1 = np.clip(j, 0, len(truth_t) - 1)
    pick = np.where(np.abs(truth_t[j0] - est_t) <= np.abs(truth_t[j1] - est_t), j0, j1)
    ok = np.abs(truth_t[pick] - est_t) <= max_dt + 1e-12
    return np.nonzero(ok)[0], pick[ok]


def rigid_align(P, Q):
    """R, t minimising sum |R p + t - q|^2 (no scale)."""
    P = np.asarray(P, dtype=float)
    Q = np.asarray(Q, dtype=float)
    mp, mq = P.mean(axis=0), Q.mean(axis=0)
    H = (P - mp).T @ (Q - mq)
    U, _, Vt = np.linalg.svd(H)
    D = np.eye(3)
    D[2, 2] = np.sign(np.linalg.det(Vt.T @ U.T)) or 1.0
    R = Vt.T @ D @ U.T
    return R, mq - R @ mp


def ate_positions(est_pos, truth_pos):
    est_pos = np.asarray(est_pos, dtype=float)
    truth_pos = np.asarray(truth_pos, dtype=float)
    if len(est_pos) < 3:
        raise EvalError(f"need at least 3 matched poses, got {len(est_pos)}")
    R, t = rigid_align(est_pos, truth_pos)
    d = est_pos @ R.T + t - truth_pos
    return float(np.sqrt(np.mean(np.sum(d * d, axis=1))))


def ate_rmse(est_t, est_pos, truth_t, truth_pos, max_dt=0.01):
    """ATE RMSE (m) after nearest-neighbour association within ``max_dt`` s."""
    ie, it = associate(est_t, truth_t, max_dt)
    if len(ie) < 3:
        raise EvalError(f"need at least 3 matched timestamps within {max_dt} s, got {len(ie)}")
    return ate_positions(np.asarray(est_pos)[ie], np.asarray(truth_pos)[it])


def ate_over_time(est, truth_t, truth_pos, max_dt=0.01):
    """ATE of the online estimate after each incremental step.

    Step k uses the estimate of states 0..k available at that step; steps
    with fewer than 3 states give NaN.
    """
    ie, it = associate(est.times, truth_t, max_dt)
    lookup = dict(zip(ie.tolist(), it.tolist()))
    out = np.full(len(est.history), np.nan)
    for k, pos in enumerate(est.history):
        idx = [i for i in range(len(pos)) if i in lookup]
        if len(idx) >= 3:
            out[k] = ate_positions(pos[idx], np.asarray(truth_pos)[[lookup[i] for i in idx]])
    return out
