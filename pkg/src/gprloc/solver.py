"""Levenberg-Marquardt over a FactorGraph, plus an incremental session.

The damped normal equations ``(H + lambda diag(H)) d = -J^T r`` are factored
with SuperLU in symmetric mode (diagonal pivots, minimum-degree ordering on
``H``), which for an SPD matrix is a sparse LDL^T.
"""
from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .graph import STATE_DIM, FactorGraph, Factor, State

log = logging.getLogger(__name__)


class IndeterminateSystemError(RuntimeError):
    def __init__(self, keys):
        self.keys = list(keys)
        super().__init__(f"indeterminate system: unconstrained directions in variables {self.keys}")


@dataclass
class SolverConfig:
    max_iterations: int = 50
    cost_tol: float = 1e-10      # relative cost decrease
    step_tol: float = 1e-9       # tangent step norm
    lambda_init: float = 1e-4
    lambda_up: float = 10.0
    lambda_down: float = 10.0
    lambda_max: float = 1e12
    mode: str = "batch"          # "batch" (warm-started full) or "window"
    window: int = 50
    pivot_tol: float = 1e-12     # relative pivot size flagged as rank deficiency

    def __post_init__(self):
        if self.cost_tol <= 0 or self.step_tol <= 0:
            raise ValueError("tolerances must be positive")
        if self.lambda_up <= 1 or self.lambda_down <= 1:
            raise ValueError("lambda factors must exceed 1")
        if self.mode not in ("batch", "window"):
            raise ValueError(f"unknown incremental mode {self.mode!r}")


@dataclass
class LinearSystem:
    J: sp.csr_matrix
    r: np.ndarray
    ordering: list            # variable keys, column block order
    offsets: dict             # key -> first column

    @property
    def cost(self):
        return float(self.r @ self.r)


def linearize(graph: FactorGraph, values=None, free=None) -> LinearSystem:
    """Whitened Jacobian and residual.

    ``free`` restricts the columns to a subset of variables; factors touching
    no free variable are dropped and fixed variables act as constants.
    """
    values = graph.values if values is None else values
    ordering = [k for k in graph.values if free is None or k in free]
    offsets = {k: i * STATE_DIM for i, k in enumerate(ordering)}
    rows, cols, data, res = [], [], [], []
    row = 0
    for f in graph.factors:
        if free is not None and not any(k in offsets for k in f.keys):
            continue
        r, Js = f.linearize(values)
        m = len(r)
        rr = np.arange(row, row + m)
        for k, J in zip(f.keys, Js):
            c0 = offsets.get(k)
            if c0 is None:
                continue
            rows.append(np.repeat(rr, STATE_DIM))
            cols.append(np.tile(np.arange(c0, c0 + STATE_DIM), m))
            data.append(J.ravel())
        res.append(r)
        row += m
    n = len(ordering) * STATE_DIM
    if rows:
        J = sp.csr_matrix((np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(row, n))
        r = np.concatenate(res)
    else:
        J = sp.csr_matrix((0, n))
        r = np.zeros(0)
    return LinearSystem(J, r, ordering, offsets)


def _factor(A):
    return splu(sp.csc_matrix(A), permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                options={"SymmetricMode": True})


def _deficient_keys(sys: LinearSystem, cols):
    keys = []
    for c in cols:
        k = sys.ordering[int(c) // STATE_DIM]
        if k not in keys:
            keys.append(k)
    return keys


def check_determinate(sys: LinearSystem, pivot_tol=1e-12):
    """Raise IndeterminateSystemError if J^T J is (numerically) singular."""
    H = (sys.J.T @ sys.J).tocsc()
    n = H.shape[0]
    if n == 0:
        return
    diag = H.diagonal()
    empty = np.flatnonzero(diag == 0)
    if empty.size:
        raise IndeterminateSystemError(_deficient_keys(sys, empty))
    # Jacobi-scale so the pivot test is unit independent
    s = 1.0 / np.sqrt(diag)
    Hs = sp.diags(s) @ H @ sp.diags(s)
    try:
        lu = _factor(Hs)
    except RuntimeError:
        raise IndeterminateSystemError(sys.ordering) from None
    d = np.abs(lu.U.diagonal())
    bad = np.flatnonzero(d < pivot_tol)
    if bad.size:
        cols = np.argsort(lu.perm_c)[bad]
        raise IndeterminateSystemError(_deficient_keys(sys, cols))


def solve_normal_equations(sys: LinearSystem, lam: float):
    """Solve (H + lam diag(H)) d = -J^T r."""
    H = (sys.J.T @ sys.J).tocsc()
    g = sys.J.T @ sys.r
    if H.shape[0] == 0:
        return np.zeros(0)
    A = H + lam * sp.diags(H.diagonal())
    try:
        lu = _factor(A)
    except RuntimeError:
        empty = np.flatnonzero(H.diagonal() == 0)
        raise IndeterminateSystemError(
            _deficient_keys(sys, empty) if empty.size else sys.ordering) from None
    return lu.solve(-g)


def _apply(values, sys: LinearSystem, delta):
    out = dict(values)
    for k, c0 in sys.offsets.items():
        out[k] = values[k].retract(delta[c0:c0 + STATE_DIM])
    return out


@dataclass
class IterationRecord:
    iteration: int
    cost: float
    lam: float
    step_norm: float
    accepted: bool


@dataclass
class OptimizationReport:
    initial_cost: float = 0.0
    final_cost: float = 0.0
    iterations: list = field(default_factory=list)
    converged: bool = False
    diverged: bool = False
    reason: str = ""

    @property
    def accepted_steps(self):
        return sum(1 for it in self.iterations if it.accepted)

    def accepted_costs(self):
        return [self.initial_cost] + [it.cost for it in self.iterations if it.accepted]

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["iteration", "cost", "lambda", "step_norm", "accepted"])
        for it in self.iterations:
            w.writerow([it.iteration, repr(it.cost), repr(it.lam), repr(it.step_norm), int(it.accepted)])
        return buf.getvalue()


def _cost(graph, values, free):
    if free is None:
        return graph.cost(values)
    return float(sum(f.cost(values) for f in graph.factors if any(k in free for k in f.keys)))


def optimize(graph: FactorGraph, initial=None, cfg: SolverConfig | None = None, free=None,
             check_gauge=True):
    """Levenberg-Marquardt; returns (estimate dict, OptimizationReport)."""
    cfg = cfg or SolverConfig()
    values = dict(graph.values if initial is None else initial)
    missing = [k for k in graph.values if k not in values]
    if missing:
        raise KeyError(f"initial estimate lacks variables {missing}")
    sys = linearize(graph, values, free)
    if check_gauge:
        check_determinate(sys, cfg.pivot_tol)
    cost = sys.cost
    report = OptimizationReport(initial_cost=cost, final_cost=cost)
    lam = cfg.lambda_init
    if cost == 0.0:
        report.converged, report.reason = True, "zero cost"
        return values, report
    for it in range(cfg.max_iterations):
        delta = solve_normal_equations(sys, lam)
        step = float(np.linalg.norm(delta))
        if step < cfg.step_tol:
            report.converged, report.reason = True, "step tolerance"
            break
        trial = _apply(values, sys, delta)
        new_cost = _cost(graph, trial, free)
        accepted = new_cost < cost
        report.iterations.append(IterationRecord(it, new_cost if accepted else cost, lam, step, accepted))
        if accepted:
            rel = (cost - new_cost) / max(cost, 1e-300)
            values, cost = trial, new_cost
            lam = lam / cfg.lambda_down
            if rel < cfg.cost_tol or cost == 0.0:
                report.converged, report.reason = True, "cost tolerance"
                break
            sys = linearize(graph, values, free)
        else:
            lam = max(lam * cfg.lambda_up, 1e-9)
            if lam > cfg.lambda_max:
                report.diverged, report.reason = True, "lambda exceeded maximum"
                log.warning("LM diverged: lambda %.3g", lam)
                break
    else:
        report.reason = "max iterations"
    report.final_cost = cost
    return values, report


class IncrementalSmoother:
    """Adds one state at a time and re-optimizes (warm-started batch or window)."""

    def __init__(self, cfg: SolverConfig | None = None):
        self.cfg = cfg or SolverConfig()
        self.graph = FactorGraph()
        self.last_key = None
        self.reports: list[OptimizationReport] = []

    @property
    def estimate(self):
        return self.graph.current_estimate()

    def update(self, key, factors: list[Factor], initial: State | None = None):
        if initial is None:
            initial = self._predict(key, factors)
        self.graph.add_variable(key, initial)
        for f in factors:
            self.graph.add_factor(f)
        free = None
        if self.cfg.mode == "window" and len(self.graph) > self.cfg.window:
            free = set(self.graph.keys()[-self.cfg.window:])
        values, report = optimize(self.graph, cfg=self.cfg, free=free, check_gauge=free is None)
        self.graph.update(values)
        self.reports.append(report)
        self.last_key = key
        return self.estimate

    def _predict(self, key, factors):
        if self.last_key is None:
            raise ValueError("first state needs an explicit initial value")
        prev = self.graph.values[self.last_key]
        for f in factors:
            if f.kind == "wheel" and f.keys == (self.last_key, key):
                return State(prev.pose.compose(f.z.inverse()), prev.v, prev.b)
        raise ValueError(f"no odometry factor between {self.last_key!r} and {key!r}")
