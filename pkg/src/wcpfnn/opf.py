"""Label generation: Newton-Raphson power flow and a penalty-method AC-OPF.

The OPF minimizes ``c^T G`` over ``(v, G)`` subject to the quadratic-form
constraints. Constraints are moved into an augmented-Lagrangian penalty
whose weight grows geometrically; each inner problem is unconstrained and
solved by a trust-region Newton method with the exact Hessian, which is
cheap because every constraint is quadratic in ``v`` and linear in ``G``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from .grid import NetworkCase, QuadraticFormModel, evaluate_residuals
from .grid.case import PQ, PV

logger = logging.getLogger(__name__)


class PowerFlowError(RuntimeError):
    def __init__(self, msg: str, mismatch: float):
        super().__init__(f"{msg} (final mismatch {mismatch:.3e} p.u.)")
        self.mismatch = mismatch


class OPFError(RuntimeError):
    """No multistart candidate reached the feasibility tolerances."""

    def __init__(self, msg: str, best: "DispatchSolution | None" = None):
        super().__init__(msg)
        self.best = best


def solve_power_flow(qf: QuadraticFormModel, case: NetworkCase, G, D,
                     slack_voltage: float | None = None, use_pv: bool = True,
                     tol: float = 1e-8, max_iter: int = 30,
                     v0=None) -> np.ndarray:
    """Newton-Raphson on the cartesian injection equations.

    Non-slack buses with a generator are PV buses (voltage magnitude held at
    the case setpoint) when ``use_pv`` is set; every other bus is PQ with
    injections taken from ``G`` and ``D``.
    """
    nb = qf.n_bus
    s = qf.slack
    G = np.asarray(G, dtype=float)
    D = np.asarray(D, dtype=float)
    vs = case.buses[s].v_set if slack_voltage is None else slack_voltage
    gen_buses = {case.bus_index(g.bus_id) for g in case.generators}
    pv = [n for n in range(nb) if n != s and use_pv and n in gen_buses
          and case.buses[n].type == PV]
    pq = [n for n in range(nb) if n != s and n not in pv]
    vset = np.array([case.buses[n].v_set for n in range(nb)])

    free = np.array([n for n in range(nb) if n != s]
                    + [nb + n for n in range(nb) if n != s])
    p_rows = [n for n in range(nb) if n != s]
    q_rows = [nb + n for n in pq]
    target = qf.eq_gen @ G + qf.eq_demand @ D

    if v0 is None:
        v = np.zeros(2 * nb)
        v[:nb] = np.where([case.buses[n].type != PQ for n in range(nb)], vset, 1.0)
        v[pq] = 1.0
    else:
        v = np.array(v0, dtype=float)
    v[s], v[nb + s] = vs, 0.0

    def mismatch(v):
        q = qf.eq.values(v)
        parts = [q[p_rows] - target[p_rows], q[q_rows] - target[q_rows]]
        if pv:
            pv_ = np.array(pv)
            parts.append(v[pv_] ** 2 + v[nb + pv_] ** 2 - vset[pv_] ** 2)
        return np.concatenate(parts)

    F = mismatch(v)
    err = np.abs(F).max() if F.size else 0.0
    for it in range(max_iter):
        if err <= tol:
            return v
        J = qf.eq.jacobian(v)
        rows = [J[p_rows], J[q_rows]]
        if pv:
            Jv = np.zeros((len(pv), 2 * nb))
            for r, n in enumerate(pv):
                Jv[r, n] = 2 * v[n]
                Jv[r, nb + n] = 2 * v[nb + n]
            rows.append(Jv)
        Jf = np.vstack(rows)[:, free]
        try:
            step = np.linalg.solve(Jf, -F)
        except np.linalg.LinAlgError:
            raise PowerFlowError("singular Jacobian", err) from None
        v[free] += step
        F = mismatch(v)
        err = np.abs(F).max()
        if not np.isfinite(err) or err > 1e8:
            raise PowerFlowError("power flow diverged", err)
    if err <= tol:
        return v
    raise PowerFlowError(f"no convergence in {max_iter} iterations", err)


@dataclass(frozen=True)
class PenaltyConfig:
    penalty_start: float = 10.0
    penalty_growth: float = 10.0
    max_outer_iterations: int = 12
    inner_step_count: int = 200
    multistart_count: int = 5
    start_perturbation: float = 0.05
    eq_tol: float = 1e-6
    ineq_tol: float = 1e-6
    random_seed: int = 0

    def __post_init__(self):
        if self.penalty_growth <= 1:
            raise ValueError("penalty_growth must exceed 1")
        if self.eq_tol <= 0 or self.ineq_tol <= 0:
            raise ValueError("tolerances must be positive")
        if self.multistart_count < 1:
            raise ValueError("multistart_count must be at least 1")


@dataclass(frozen=True)
class DispatchSolution:
    G: np.ndarray
    v: np.ndarray
    objective: float
    max_equality_residual: float
    max_inequality_violation: float
    converged: bool
    iterations: int
    multipliers: tuple | None = None


def _residual_norms(qf, v, G, D):
    eq, ineq = evaluate_residuals(qf, v, G, D)
    viol = np.max(ineq[np.isfinite(ineq)], initial=0.0)
    return float(np.abs(eq).max()), float(max(viol, 0.0))


class _Lagrangian:
    """Augmented Lagrangian over the free variables (slack ``v_i`` removed)."""

    def __init__(self, qf: QuadraticFormModel, D):
        self.qf = qf
        self.dim = 2 * qf.n_bus
        n = self.dim + 2 * qf.n_gen
        self.free = np.delete(np.arange(n), qf.n_bus + qf.slack)
        self.n = n
        D = np.asarray(D, dtype=float)
        self.eq_rhs = qf.eq_demand @ D
        rows = np.flatnonzero(np.isfinite(qf.ineq_const))
        self.rows = rows
        self.ineq_rhs = (qf.ineq_demand @ D + qf.ineq_const)[rows]
        self.ineq_gen = qf.ineq_gen[rows]
        scale = np.abs(qf.cost).max()
        self.cost = qf.cost / scale if scale > 0 else qf.cost

    def full(self, z):
        x = np.zeros(self.n)
        x[self.free] = z
        return x

    def parts(self, z):
        x = self.full(z)
        qf, dim = self.qf, self.dim
        v, G = x[:dim], x[dim:]
        Mv_eq = (qf.eq._stack @ v).reshape(qf.n_eq, dim)
        Mv_in = (qf.ineq._stack @ v).reshape(qf.n_ineq, dim)[self.rows]
        eq = Mv_eq @ v - qf.eq_gen @ G - self.eq_rhs
        ineq = Mv_in @ v + self.ineq_gen @ G - self.ineq_rhs
        J_eq = np.hstack([2 * Mv_eq, -qf.eq_gen])
        J_in = np.hstack([2 * Mv_in, self.ineq_gen])
        return x, eq, ineq, J_eq, J_in

    def __call__(self, z, lam, mu, rho):
        x, eq, ineq, J_eq, J_in = self.parts(z)
        shifted = np.maximum(mu + rho * ineq, 0.0)
        val = (self.cost @ x[self.dim:] + lam @ eq + 0.5 * rho * eq @ eq
               + (shifted @ shifted - mu @ mu) / (2 * rho))
        grad = (lam + rho * eq) @ J_eq + shifted @ J_in
        grad[self.dim:] += self.cost
        return val, grad[self.free]

    def _weighted(self, stack, w):
        dim = self.dim
        return np.bincount(stack.i * dim + stack.j, weights=w[stack.form] * stack.val,
                           minlength=dim * dim).reshape(dim, dim)

    def hessian(self, z, lam, mu, rho):
        x, eq, ineq, J_eq, J_in = self.parts(z)
        shifted = np.maximum(mu + rho * ineq, 0.0)
        active = shifted > 0
        w_in = np.zeros(self.qf.n_ineq)
        w_in[self.rows] = shifted
        H = rho * (J_eq.T @ J_eq) + rho * (J_in[active].T @ J_in[active])
        H[:self.dim, :self.dim] += 2 * (self._weighted(self.qf.eq, lam + rho * eq)
                                        + self._weighted(self.qf.ineq, w_in))
        H = H[np.ix_(self.free, self.free)]
        # a relative diagonal shift keeps near-singular models out of the
        # trust-exact hard case, which can otherwise loop indefinitely
        H[np.diag_indices_from(H)] += 1e-9 * max(np.abs(np.diag(H)).max(), 1.0)
        return H


def _solve_from(lag: _Lagrangian, x0, cfg: PenaltyConfig, lam=None, mu=None):
    lam = np.zeros(lag.qf.n_eq) if lam is None else lam.copy()
    mu = np.zeros(len(lag.rows)) if mu is None else mu.copy()
    rho = cfg.penalty_start
    z = x0[lag.free].copy()
    prev = np.inf
    iters = 0
    for _ in range(cfg.max_outer_iterations):
        res = minimize(lag, z, args=(lam, mu, rho), jac=True, hess=lag.hessian,
                       method="trust-exact",
                       options={"gtol": 1e-10, "maxiter": cfg.inner_step_count})
        z = res.x
        iters += res.nit
        _, eq, ineq, _, _ = lag.parts(z)
        lam = lam + rho * eq
        mu = np.maximum(mu + rho * ineq, 0.0)
        eq_err = np.abs(eq).max()
        ineq_err = np.max(ineq, initial=0.0)
        if eq_err <= 0.1 * cfg.eq_tol and ineq_err <= 0.1 * cfg.ineq_tol:
            break
        infeas = max(eq_err, ineq_err)
        if infeas > 0.25 * prev:
            rho *= cfg.penalty_growth
        prev = infeas
    return lag.full(z), iters, (lam, mu)


def solve_opf_penalty(qf: QuadraticFormModel, D, cfg: PenaltyConfig | None = None,
                      warm_start: DispatchSolution | None = None) -> DispatchSolution:
    """Approximate AC-OPF solution for demand ``D``.

    Runs ``cfg.multistart_count`` starts (flat voltage first, then random
    perturbations) and returns the feasible start with the lowest cost;
    ties go to the earlier start. ``warm_start`` replaces the flat start
    and seeds the multipliers.
    """
    cfg = cfg or PenaltyConfig()
    D = np.asarray(D, dtype=float)
    if D.shape != (2 * qf.n_load,):
        raise ValueError(f"demand vector needs {2 * qf.n_load} entries")
    nb = qf.n_bus
    lag = _Lagrangian(qf, D)
    rng = np.random.default_rng(cfg.random_seed)

    def start(k):
        if k == 0 and warm_start is not None:
            return np.concatenate([warm_start.v, warm_start.G])
        x = np.zeros(lag.n)
        x[:nb] = 1.0
        x[2 * nb:] = 0.5 * (qf.gen_lower + qf.gen_upper)
        if k > 0:
            x[:2 * nb] += rng.normal(0.0, cfg.start_perturbation, 2 * nb)
            x[2 * nb:] = rng.uniform(qf.gen_lower, qf.gen_upper)
        x[nb + qf.slack] = 0.0
        return x

    mult0 = (None, None)
    if warm_start is not None and warm_start.multipliers is not None:
        mult0 = warm_start.multipliers

    best, best_key = None, None
    with np.errstate(all="ignore"):
        for k in range(cfg.multistart_count):
            x, iters, mult = _solve_from(lag, start(k), cfg,
                                         *(mult0 if k == 0 else (None, None)))
            v, G = x[:2 * nb], x[2 * nb:]
            if not np.all(np.isfinite(x)):
                continue
            eq_err, ineq_err = _residual_norms(qf, v, G, D)
            ok = eq_err <= cfg.eq_tol and ineq_err <= cfg.ineq_tol
            sol = DispatchSolution(G=G, v=v, objective=float(qf.cost @ G),
                                   max_equality_residual=eq_err,
                                   max_inequality_violation=ineq_err,
                                   converged=ok, iterations=iters,
                                   multipliers=mult)
            # feasibility first, then cost, then start order
            key = (not ok, sol.objective if ok else eq_err + ineq_err, k)
            if best is None or key < best_key:
                best, best_key = sol, key
    if best is None or not best.converged:
        detail = ("" if best is None else
                  f": equality {best.max_equality_residual:.2e}, "
                  f"inequality {best.max_inequality_violation:.2e}")
        raise OPFError("no start reached the feasibility tolerance" + detail, best)
    return best
