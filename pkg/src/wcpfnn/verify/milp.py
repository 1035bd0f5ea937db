"""MILP container and best-first branch-and-bound on binary variables."""
from __future__ import annotations

import heapq
import time
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .lp import INFEASIBLE, OPTIMAL, LPResult, StandardLP


@dataclass
class MilpModel:
    """``max c @ x + c0`` s.t. ``A_ub x <= b_ub``, ``A_eq x = b_eq``, bounds.

    Variables listed in ``binary`` must additionally be 0 or 1. ``names``
    labels each column; encoders add index maps of their own.
    """

    c: np.ndarray
    c0: float
    A_ub: np.ndarray
    b_ub: np.ndarray
    A_eq: np.ndarray
    b_eq: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    binary: np.ndarray
    names: list = field(default_factory=list)

    @property
    def n_vars(self) -> int:
        return self.c.size

    def objective(self, x) -> float:
        return float(self.c @ x + self.c0)

    def residual(self, x) -> float:
        """Largest violation of any row, bound or integrality at ``x``."""
        x = np.asarray(x, float)
        parts = [0.0]
        if len(self.b_ub):
            parts.append(np.max(self.A_ub @ x - self.b_ub))
        if len(self.b_eq):
            parts.append(np.max(np.abs(self.A_eq @ x - self.b_eq)))
        parts.append(np.max(self.lb - x, initial=0.0))
        parts.append(np.max(x - self.ub, initial=0.0))
        if self.binary.size:
            xb = x[self.binary]
            parts.append(np.max(np.minimum(np.abs(xb), np.abs(xb - 1.0))))
        return float(max(parts))


class ModelBuilder:
    """Incremental construction of a :class:`MilpModel`."""

    def __init__(self):
        self.lb, self.ub, self.names, self.is_bin = [], [], [], []
        self.ub_rows, self.eq_rows = [], []

    def var(self, name, lo, hi, binary=False) -> int:
        self.lb.append(float(lo))
        self.ub.append(float(hi))
        self.names.append(name)
        self.is_bin.append(binary)
        return len(self.lb) - 1

    def le(self, coefs: dict, rhs: float):
        self.ub_rows.append((coefs, float(rhs)))

    def eq(self, coefs: dict, rhs: float):
        self.eq_rows.append((coefs, float(rhs)))

    def _dense(self, rows, n):
        A = np.zeros((len(rows), n))
        b = np.zeros(len(rows))
        for r, (coefs, rhs) in enumerate(rows):
            for j, a in coefs.items():
                A[r, j] += a
            b[r] = rhs
        return A, b

    def build(self, objective: dict, c0: float = 0.0) -> MilpModel:
        n = len(self.lb)
        c = np.zeros(n)
        for j, a in objective.items():
            c[j] += a
        A_ub, b_ub = self._dense(self.ub_rows, n)
        A_eq, b_eq = self._dense(self.eq_rows, n)
        return MilpModel(c, float(c0), A_ub, b_ub, A_eq, b_eq, np.array(self.lb),
                         np.array(self.ub), np.flatnonzero(self.is_bin), list(self.names))


_CACHE_SIZE = 32


@dataclass(frozen=True)
class MilpConfig:
    gap_tol: float = 1e-6
    int_tol: float = 1e-6
    node_limit: int = 200_000
    time_limit: float | None = None  # seconds


@dataclass
class MilpResult:
    objective: float          # incumbent value, -inf if none
    x: np.ndarray | None
    bound: float              # proven upper bound
    node_count: int
    gap: float

    @property
    def feasible(self) -> bool:
        return self.x is not None


class BudgetExhausted(RuntimeError):
    def __init__(self, msg: str, partial: MilpResult):
        super().__init__(msg)
        self.partial = partial


def solve_lp(model: MilpModel, lb=None, ub=None) -> LPResult:
    """LP relaxation (binaries relaxed to [0, 1]) as a maximization."""
    lp = StandardLP(-model.c, model.A_ub, model.b_ub, model.A_eq, model.b_eq)
    res = lp.solve(model.lb if lb is None else lb, model.ub if ub is None else ub)
    if res.status == OPTIMAL:
        res.objective = -res.objective + model.c0
    return res


# heuristic(lp_point) -> (objective, feasible point) or None
Heuristic = Callable[[np.ndarray], "tuple[float, np.ndarray] | None"]


def solve_milp_bnb(model: MilpModel, cfg: MilpConfig | None = None,
                   heuristic: Heuristic | None = None,
                   cutoff: float = -np.inf) -> MilpResult:
    """Best-first branch-and-bound over the binaries.

    Nodes whose LP bound is not above ``max(incumbent, cutoff) + gap_tol``
    are pruned, so with a finite ``cutoff`` the result may carry no point
    when nothing beats it. Branching picks the most fractional binary
    (lowest index on ties); the queue orders by bound, then depth (deeper
    first), then creation order.
    """
    cfg = cfg or MilpConfig()
    t0 = time.perf_counter()
    lp = StandardLP(-model.c, model.A_ub, model.b_ub, model.A_eq, model.b_eq)
    bins = model.binary
    best_val, best_x = -np.inf, None
    nodes = 0
    counter = 0

    def threshold():
        return max(best_val, cutoff) + cfg.gap_tol

    def offer(val, x):
        nonlocal best_val, best_x
        if val > best_val:
            best_val, best_x = val, x

    # parent tableaux of recently solved nodes, keyed by node id
    cache: OrderedDict = OrderedDict()
    # (-bound, -depth, counter, lb, ub, (parent id, basis))
    queue = [(-np.inf, 0, 0, model.lb.copy(), model.ub.copy(), None)]
    while queue:
        neg_bound, neg_depth, _, lb, ub, warm = heapq.heappop(queue)
        if -neg_bound <= threshold():
            # best-first: everything left is dominated as well
            queue.clear()
            break
        if nodes >= cfg.node_limit or (
                cfg.time_limit is not None and time.perf_counter() - t0 > cfg.time_limit):
            heapq.heappush(queue, (neg_bound, neg_depth, counter, lb, ub, warm))
            open_bound = max(-queue[0][0], best_val)
            partial = MilpResult(best_val, best_x, open_bound, nodes,
                                 max(open_bound - best_val, 0.0))
            raise BudgetExhausted(f"branch-and-bound budget exhausted after {nodes} nodes",
                                  partial)
        nodes += 1
        node_id = nodes
        if warm is None:
            res = lp.solve(lb, ub)
        else:
            parent, basis = warm
            res = lp.solve(lb, ub, warm=basis, tableau=cache.get(parent))
        if res.status == INFEASIBLE:
            continue
        val = -res.objective + model.c0
        x = res.x
        if heuristic is not None:
            found = heuristic(x)
            if found is not None:
                offer(*found)
        if val <= threshold():
            continue
        xb = x[bins]
        frac = np.abs(xb - np.round(xb))
        if frac.size == 0 or frac.max() <= cfg.int_tol:
            xi = x.copy()
            xi[bins] = np.round(xb)
            offer(val, xi)
            continue
        j = bins[int(np.argmax(np.abs(xb - 0.5) == np.min(np.abs(xb - 0.5))))]
        cache[node_id] = res.tableau
        while len(cache) > _CACHE_SIZE:
            cache.popitem(last=False)
        for v in (0.0, 1.0):
            clb, cub = lb.copy(), ub.copy()
            clb[j] = cub[j] = v
            counter += 1
            heapq.heappush(queue, (-val, neg_depth - 1, counter, clb, cub,
                                   (node_id, res.basis)))
    # proven within gap_tol of the incumbent or of the cutoff
    return MilpResult(best_val, best_x, max(best_val, cutoff), nodes, 0.0)
