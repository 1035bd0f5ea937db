"""Dense bounded-variable simplex.

Problems are held in the standard form ``min c^T x  s.t.  A x = b,
lb <= x <= ub`` where ``A`` already contains one slack column per
inequality row and one artificial column per row. Artificials are free
only during phase 1 and fixed at zero afterwards, so any basis found once
can be reused as a warm start after bound changes (dual simplex), which is
how branch-and-bound drives it.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

OPTIMAL, INFEASIBLE = "optimal", "infeasible"

_PIVOT_TOL = 1e-9
_REFACTOR_EVERY = 40


class LPError(RuntimeError):
    """Numerical breakdown or an unbounded relaxation."""


@dataclass
class LPResult:
    status: str
    objective: float
    x: np.ndarray | None
    basis: tuple | None = None
    iterations: int = 0
    tableau: tuple | None = None   # (B^-1 A, B^-1 b) for the final basis


class StandardLP:
    """``min c^T x`` over ``A_ub x <= b_ub``, ``A_eq x = b_eq`` and bounds.

    Column layout: structural (n), slacks (m_ub), artificials (m).
    """

    def __init__(self, c, A_ub, b_ub, A_eq, b_eq, feas_tol: float = 1e-9,
                 opt_tol: float = 1e-9, max_iter: int = 50_000):
        c = np.asarray(c, dtype=float)
        n = c.size
        A_ub = np.asarray(A_ub, dtype=float).reshape(-1, n)
        A_eq = np.asarray(A_eq, dtype=float).reshape(-1, n)
        m1, m2 = len(A_ub), len(A_eq)
        m = m1 + m2
        self.n, self.m_ub, self.m = n, m1, m
        A = np.zeros((m, n + m1 + m))
        A[:m1, :n] = A_ub
        A[m1:, :n] = A_eq
        A[:m1, n:n + m1] = np.eye(m1)
        A[:, n + m1:] = np.eye(m)
        self.A = A
        self.b = np.concatenate([np.asarray(b_ub, float).ravel(),
                                 np.asarray(b_eq, float).ravel()])
        self.c = np.concatenate([c, np.zeros(m1 + m)])
        self.N = A.shape[1]
        self.art = np.arange(n + m1, self.N)
        self.feas_tol = feas_tol
        self.opt_tol = opt_tol
        self.max_iter = max_iter

    def full_bounds(self, lb, ub):
        lo = np.concatenate([lb, np.zeros(self.m_ub), np.zeros(self.m)])
        hi = np.concatenate([ub, np.full(self.m_ub, np.inf), np.zeros(self.m)])
        return lo, hi

    def solve(self, lb, ub, warm: tuple | None = None, tableau=None) -> LPResult:
        """Solve with structural bounds ``lb``/``ub``.

        ``warm`` is a ``(basis, at_upper)`` pair from an earlier result on
        the same problem; it must be dual feasible (any optimal basis is).
        Passing that result's ``tableau`` as well skips refactorization.
        """
        lo, hi = self.full_bounds(np.asarray(lb, float), np.asarray(ub, float))
        if np.any(lo > hi + self.feas_tol):
            return LPResult(INFEASIBLE, np.nan, None)
        if warm is not None:
            try:
                t = _Tableau(self, lo, hi, *warm, tableau=tableau)
                if t.make_dual_feasible():
                    status = t.dual_simplex()
                    if status == INFEASIBLE:
                        return LPResult(INFEASIBLE, np.nan, None, iterations=t.iters)
                    if status == OPTIMAL:
                        status = t.primal_simplex(self.c)  # cleanup, usually no-op
                        if status == OPTIMAL:
                            return t.result()
            except (np.linalg.LinAlgError, LPError):
                pass
        return self._cold(lo, hi)

    def _cold(self, lo, hi) -> LPResult:
        n, m1, m = self.n, self.m_ub, self.m
        x = np.where(np.isfinite(lo), lo, np.where(np.isfinite(hi), hi, 0.0))
        r = self.b - self.A[:, :n] @ x[:n]
        basis = np.empty(m, dtype=int)
        art_lo, art_hi = np.zeros(m), np.zeros(m)
        cost1 = np.zeros(self.N)
        for i in range(m):
            if i < m1 and r[i] >= 0:
                basis[i] = n + i
            else:
                basis[i] = n + m1 + i
                if r[i] >= 0:
                    art_hi[i] = np.inf
                    cost1[n + m1 + i] = 1.0
                else:
                    art_lo[i] = -np.inf
                    cost1[n + m1 + i] = -1.0
        lo1, hi1 = lo.copy(), hi.copy()
        lo1[self.art], hi1[self.art] = art_lo, art_hi
        at_upper = np.zeros(self.N, dtype=bool)
        at_upper[:n] = ~np.isfinite(lo[:n]) & np.isfinite(hi[:n])
        t = _Tableau(self, lo1, hi1, basis, at_upper)
        status = t.primal_simplex(cost1)
        if status != OPTIMAL:
            raise LPError("phase 1 did not terminate")
        if cost1 @ t.x > 10 * self.feas_tol * max(1.0, np.abs(self.b).max()):
            return LPResult(INFEASIBLE, np.nan, None, iterations=t.iters)
        t.lo[self.art] = 0.0
        t.hi[self.art] = 0.0
        t.at_upper[self.art] = False
        t.refresh()
        if t.max_infeasibility() > self.feas_tol:
            # artificials left basic at tiny nonzero values
            if t.dual_simplex_from_primal() == INFEASIBLE:
                return LPResult(INFEASIBLE, np.nan, None, iterations=t.iters)
        status = t.primal_simplex(self.c)
        if status != OPTIMAL:
            raise LPError(f"phase 2 ended with status {status}")
        return t.result()


class _Tableau:
    def __init__(self, lp: StandardLP, lo, hi, basis, at_upper, tableau=None):
        self.lp = lp
        self.lo, self.hi = lo.copy(), hi.copy()
        self.basis = np.array(basis, dtype=int)
        self.at_upper = np.array(at_upper, dtype=bool)
        self.iters = 0
        if tableau is None:
            self.refactor()
        else:
            self.T, self.beta = tableau[0].copy(), tableau[1].copy()
            self.since = 0
            self.is_basic = np.zeros(lp.N, dtype=bool)
            self.is_basic[self.basis] = True
            self.refresh()

    # -- linear algebra
    def refactor(self):
        lp = self.lp
        Binv = np.linalg.inv(lp.A[:, self.basis])
        n, m1 = lp.n, lp.m_ub
        # slack and artificial columns are identity blocks
        T = np.empty((lp.m, lp.N))
        T[:, :n] = Binv @ lp.A[:, :n]
        T[:, n:n + m1] = Binv[:, :m1]
        T[:, n + m1:] = Binv
        self.T = T
        self.beta = Binv @ lp.b
        self.since = 0
        self.is_basic = np.zeros(lp.N, dtype=bool)
        self.is_basic[self.basis] = True
        self.refresh()

    def nonbasic_values(self):
        x = np.where(self.at_upper, self.hi, self.lo)
        # free nonbasic variables sit at zero
        x = np.where(np.isfinite(x), x, 0.0)
        x[self.is_basic] = 0.0
        return x

    def refresh(self):
        x = self.nonbasic_values()
        x[self.basis] = self.beta - self.T @ x
        self.x = x

    def pivot(self, r, j):
        T = self.T
        piv = T[r, j]
        T[r] /= piv
        self.beta[r] /= piv
        col = T[:, j].copy()
        col[r] = 0.0
        T -= np.outer(col, T[r])
        self.beta -= col * self.beta[r]
        leaving = self.basis[r]
        self.is_basic[leaving] = False
        self.is_basic[j] = True
        self.basis[r] = j
        self.at_upper[j] = False
        self.iters += 1
        self.since += 1
        if self.since >= _REFACTOR_EVERY:
            self.refactor()
        if self.iters > self.lp.max_iter:
            raise LPError("iteration limit")

    def max_infeasibility(self):
        xb = self.x[self.basis]
        return max(np.max(self.lo[self.basis] - xb, initial=0.0),
                   np.max(xb - self.hi[self.basis], initial=0.0))

    def reduced_costs(self, cost):
        d = cost - cost[self.basis] @ self.T
        d[self.basis] = 0.0
        return d

    # -- primal simplex (requires a primal feasible basis)
    def primal_simplex(self, cost) -> str:
        tol = self.lp.opt_tol
        ftol = self.lp.feas_tol
        degenerate = 0
        while True:
            d = self.reduced_costs(cost)
            movable = ~self.is_basic & (self.hi > self.lo)
            free = movable & ~np.isfinite(self.lo) & ~np.isfinite(self.hi)
            up = movable & ((~self.at_upper & (d < -tol)) | (free & (d < -tol)))
            down = movable & ((self.at_upper & (d > tol)) | (free & (d > tol)))
            cand = up | down
            if not cand.any():
                return OPTIMAL
            if degenerate > 50:
                j = int(np.flatnonzero(cand)[0])  # Bland
            else:
                score = np.where(cand, np.abs(d), -1.0)
                j = int(np.argmax(score))
            direction = 1.0 if up[j] else -1.0
            alpha = direction * self.T[:, j]
            xb = self.x[self.basis]
            lb, ub = self.lo[self.basis], self.hi[self.basis]
            with np.errstate(divide="ignore", invalid="ignore"):
                dec = alpha > _PIVOT_TOL
                inc = alpha < -_PIVOT_TOL
                ratio = np.full(len(alpha), np.inf)
                ratio[dec] = (xb[dec] - lb[dec] + ftol) / alpha[dec]
                ratio[inc] = (ub[inc] - xb[inc] + ftol) / -alpha[inc]
            theta_max = ratio.min()
            flip = self.hi[j] - self.lo[j]
            if not np.isfinite(theta_max) and not np.isfinite(flip):
                raise LPError("unbounded relaxation")
            if flip <= theta_max:
                self.at_upper[j] = direction > 0
                self.refresh()
                degenerate = 0
                continue
            # Harris: among rows within the relaxed ratio pick the largest pivot
            with np.errstate(divide="ignore", invalid="ignore"):
                exact = np.full(len(alpha), np.inf)
                exact[dec] = (xb[dec] - lb[dec]) / alpha[dec]
                exact[inc] = (ub[inc] - xb[inc]) / -alpha[inc]
            ok = exact <= theta_max
            r = int(np.argmax(np.where(ok, np.abs(alpha), -1.0)))
            theta = max(exact[r], 0.0)
            degenerate = degenerate + 1 if theta <= ftol else 0
            leaving = self.basis[r]
            leave_upper = alpha[r] < 0
            self.pivot(r, j)
            self.at_upper[leaving] = leave_upper and np.isfinite(self.hi[leaving])
            self.refresh()

    # -- dual simplex (requires a dual feasible basis)
    def make_dual_feasible(self) -> bool:
        """Put nonbasic variables on the bound matching their reduced cost."""
        d = self.reduced_costs(self.lp.c)
        tol = self.lp.opt_tol
        nb = ~self.is_basic
        want_upper = nb & (d < -tol)
        want_lower = nb & (d > tol)
        if np.any(want_upper & ~np.isfinite(self.hi) & (self.hi > self.lo)):
            return False
        if np.any(want_lower & ~np.isfinite(self.lo) & (self.hi > self.lo)):
            return False
        self.at_upper[want_upper] = True
        self.at_upper[want_lower] = False
        fixed = nb & (self.hi <= self.lo)
        self.at_upper[fixed] = False
        self.refresh()
        return True

    def dual_simplex_from_primal(self) -> str:
        if not self.make_dual_feasible():
            raise LPError("basis is not dual feasible")
        return self.dual_simplex()

    def dual_simplex(self) -> str:
        ftol = self.lp.feas_tol
        tol = self.lp.opt_tol
        while True:
            xb = self.x[self.basis]
            lb, ub = self.lo[self.basis], self.hi[self.basis]
            below = lb - xb
            above = xb - ub
            infeas = np.maximum(below, above)
            r = int(np.argmax(infeas))
            if infeas[r] <= ftol:
                return OPTIMAL
            d = self.reduced_costs(self.lp.c)
            row = self.T[r]
            movable = ~self.is_basic & (self.hi > self.lo)
            at_up = self.at_upper
            if below[r] > above[r]:
                # raise x_r: increase j at lower with row<0, decrease j at upper with row>0
                elig = movable & (((~at_up) & (row < -_PIVOT_TOL)) | (at_up & (row > _PIVOT_TOL)))
                to_upper = False
            else:
                elig = movable & (((~at_up) & (row > _PIVOT_TOL)) | (at_up & (row < -_PIVOT_TOL)))
                to_upper = True
            if not elig.any():
                return INFEASIBLE
            with np.errstate(divide="ignore", invalid="ignore"):
                ratio = np.where(elig, np.abs(d) / np.abs(row), np.inf)
                relaxed = np.where(elig, (np.abs(d) + tol) / np.abs(row), np.inf)
            bound = relaxed.min()
            ok = elig & (ratio <= bound)
            j = int(np.argmax(np.where(ok, np.abs(row), -1.0)))
            leaving = self.basis[r]
            self.pivot(r, j)
            self.at_upper[leaving] = to_upper
            self.refresh()

    def result(self) -> LPResult:
        x = self.x
        if self.since and np.max(np.abs(self.lp.A @ x - self.lp.b), initial=0.0) > 1e-10:
            self.refactor()
        if self.max_infeasibility() > 10 * self.lp.feas_tol:
            raise LPError("lost primal feasibility")
        x = self.x
        n = self.lp.n
        return LPResult(OPTIMAL, float(self.lp.c @ x), x[:n].copy(),
                        (self.basis.copy(), self.at_upper.copy()), self.iters,
                        (self.T, self.beta))
