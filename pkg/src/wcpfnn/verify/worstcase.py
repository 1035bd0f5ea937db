"""Worst-case generation violation search and hypercube fitting.

Everything is solved in scaled input units ``u = (D - in_offset) * in_scale``
(the unit cube for the training domain); demands are recovered through the
inverse map. Coordinates with zero scale are constant and map back to the
input offset.
"""
from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import qmc

from ..nn.mlp import MlpParams, forward_with_preactivations
from .bounds import (ACTIVE, INACTIVE, LayerBounds, interval_bounds_scaled,
                     output_bounds, scaled_box)
from .milp import (BudgetExhausted, MilpConfig, MilpModel, MilpResult,
                   ModelBuilder, solve_milp_bnb)

logger = logging.getLogger(__name__)

UPPER, LOWER = "upper", "lower"


@dataclass(frozen=True)
class VerifierConfig:
    milp: MilpConfig = MilpConfig()
    seed_samples: int = 1000     # LHS forward passes that seed the incumbent
    seed: int = 0
    fix_threshold: float = 0.1
    local_half_width: float = 0.5


@dataclass
class Encoding:
    """A MILP plus the maps from its columns back to the network."""

    model: MilpModel
    net: MlpParams
    u_index: np.ndarray
    z_index: list              # per hidden layer: column of Z_k,i
    y_index: list              # per hidden layer: column of y_k,i or -1
    fixed: dict = field(default_factory=dict)

    def assignment(self, u) -> np.ndarray:
        """Column values induced by the exact forward pass at ``u``."""
        x = np.zeros(self.model.n_vars)
        x[self.u_index] = u
        tr = _forward_u(self.net, u)
        for k, (zi, yi) in enumerate(zip(self.z_index, self.y_index)):
            x[zi] = tr.post[k]
            has = yi >= 0
            x[yi[has]] = (tr.pre[k][has] > 0).astype(float)
        return x


def _forward_u(net: MlpParams, u):
    """Forward pass from scaled inputs (input scaling bypassed)."""
    D = net.in_offset + _safe_unscale(net, u)
    tr = forward_with_preactivations(net, D)
    return tr


def _safe_unscale(net: MlpParams, u):
    s = net.in_scale
    return np.divide(u, s, out=np.zeros_like(np.asarray(u, float)), where=s != 0)


def u_to_demand(net: MlpParams, u) -> np.ndarray:
    return net.in_offset + _safe_unscale(net, np.asarray(u, float))


def demand_to_u(net: MlpParams, D) -> np.ndarray:
    return (np.asarray(D, float) - net.in_offset) * net.in_scale


def _encode_network(b: ModelBuilder, net: MlpParams, bounds: LayerBounds, fixed=None):
    """Add input, ReLU and big-M rows; returns index maps."""
    fixed = fixed or {}
    u_idx = np.array([b.var(f"u[{i}]", lo, hi) for i, (lo, hi) in
                      enumerate(zip(bounds.input_lower, bounds.input_upper))])
    prev = u_idx
    z_all, y_all = [], []
    for k, (w, bias) in enumerate(zip(net.weights[:-1], net.biases[:-1])):
        zl, zu = bounds.lower[k], bounds.upper[k]
        z_idx = np.empty(len(bias), dtype=int)
        y_idx = np.full(len(bias), -1, dtype=int)
        for i in range(len(bias)):
            status = fixed.get((k, i))
            pre = {int(p): float(a) for p, a in zip(prev, w[i]) if a != 0.0}
            if zl[i] >= 0 or status == ACTIVE:
                z = b.var(f"z[{k},{i}]", max(zl[i], 0.0), max(zu[i], 0.0))
                row = {z: 1.0}
                for p, a in pre.items():
                    row[p] = row.get(p, 0.0) - a
                b.eq(row, bias[i])
                if zl[i] < 0:
                    b.le({p: -a for p, a in pre.items()}, bias[i])  # hat Z >= 0
            elif zu[i] <= 0 or status == INACTIVE:
                z = b.var(f"z[{k},{i}]", 0.0, 0.0)
                if zu[i] > 0:
                    b.le(pre, -bias[i])  # hat Z <= 0
            else:
                z = b.var(f"z[{k},{i}]", 0.0, zu[i])
                y = b.var(f"y[{k},{i}]", 0.0, 1.0, binary=True)
                y_idx[i] = y
                # Z <= hat Z - Zlow (1 - y)
                row = {z: 1.0, y: -zl[i]}
                for p, a in pre.items():
                    row[p] = row.get(p, 0.0) - a
                b.le(row, bias[i] - zl[i])
                # Z >= hat Z
                row = {z: -1.0}
                for p, a in pre.items():
                    row[p] = row.get(p, 0.0) + a
                b.le(row, -bias[i])
                # Z <= Zup y
                b.le({z: 1.0, y: -zu[i]}, 0.0)
            z_idx[i] = z
        z_all.append(z_idx)
        y_all.append(y_idx)
        prev = z_idx
    return u_idx, z_all, y_all


def _output_expr(net: MlpParams, last, m: int, side: str, g_lower, g_upper):
    """Violation of output ``m`` as (coefs over last hidden layer, constant)."""
    s = net.out_scale[m]
    w = net.weights[-1][m] * s
    const = net.out_offset[m] + s * net.biases[-1][m]
    if side == UPPER:
        return {int(j): float(a) for j, a in zip(last, w)}, const - g_upper[m]
    return {int(j): -float(a) for j, a in zip(last, w)}, g_lower[m] - const


def violation(net: MlpParams, D, g_lower, g_upper):
    """Per-output violations ``(G - upper, lower - G)`` for demands ``D``."""
    G = forward_with_preactivations(net, D).output
    return G - g_upper, g_lower - G


def encode_worstcase(net: MlpParams, bounds: LayerBounds, m: int, side: str,
                     g_lower, g_upper, fixed=None) -> Encoding:
    """MILP maximizing the violation of output ``m`` on ``side`` over the box."""
    if side not in (UPPER, LOWER):
        raise ValueError(f"side must be {UPPER!r} or {LOWER!r}")
    b = ModelBuilder()
    u_idx, z_idx, y_idx = _encode_network(b, net, bounds, fixed)
    last = z_idx[-1] if z_idx else u_idx
    coefs, const = _output_expr(net, last, m, side, g_lower, g_upper)
    return Encoding(b.build(coefs, const), net, u_idx, z_idx, y_idx, dict(fixed or {}))


# ---------------------------------------------------------------------------


@dataclass
class WorstCaseResult:
    v_g_max_pu: float
    v_g_max_mva: float
    D_WC: np.ndarray
    component: int
    side: str
    gap: float
    nodes: int
    wall_ms: float
    certified: bool
    raw_objective: float = 0.0        # unclamped best objective
    per_component: list = field(default_factory=list)
    quantity: str = "P"             # P or Q for generator nets


def _lhs_points(lo, hi, n, seed):
    if n <= 0:
        return np.empty((0, lo.size))
    unit = qmc.LatinHypercube(d=lo.size, scramble=True, seed=seed).random(n)
    return lo + unit * (hi - lo)


def find_worst_case(net: MlpParams, box_lower, box_upper, g_lower, g_upper,
                    cfg: VerifierConfig | None = None, base_mva: float = 1.0,
                    bounds: LayerBounds | None = None) -> WorstCaseResult:
    """Largest generation-bound violation of ``net`` over a demand box.

    One MILP per (output, side). A side is skipped when its bound is
    infinite or when interval bounds already show it cannot beat the
    incumbent; the incumbent is seeded from LHS forward passes so that
    most MILPs prune early. The reported value is clamped at zero.
    """
    cfg = cfg or VerifierConfig()
    t0 = time.perf_counter()
    g_lower = np.asarray(g_lower, float)
    g_upper = np.asarray(g_upper, float)
    u_lo, u_hi = scaled_box(net, box_lower, box_upper)
    if bounds is None:
        bounds = interval_bounds_scaled(net, u_lo, u_hi)
    out_lo, out_hi = output_bounds(net, bounds)

    # incumbent seeded from samples (and the box centre)
    U = np.vstack([0.5 * (u_lo + u_hi), _lhs_points(u_lo, u_hi, cfg.seed_samples, cfg.seed)])
    G = forward_with_preactivations(net, u_to_demand(net, U)).output
    best = (-np.inf, U[0], 0, UPPER)
    for side, V in ((UPPER, G - g_upper), (LOWER, g_lower - G)):
        V = np.where(np.isfinite(V), V, -np.inf)
        k, m = np.unravel_index(int(np.argmax(V)), V.shape)
        if V[k, m] > best[0]:
            best = (float(V[k, m]), U[k], int(m), side)

    tasks = []
    n_out = net.n_outputs
    for m in range(n_out):
        if np.isfinite(g_upper[m]):
            tasks.append((out_hi[m] - g_upper[m], m, UPPER))
        if np.isfinite(g_lower[m]):
            tasks.append((g_lower[m] - out_lo[m], m, LOWER))
    tasks.sort(key=lambda t: (-t[0], t[1], t[2]))

    global_bound = best[0]
    nodes = 0
    certified = True
    per = []
    for ibp_bound, m, side in tasks:
        floor = max(best[0], 0.0)
        if ibp_bound <= floor + cfg.milp.gap_tol:
            per.append({"component": m, "side": side, "bound": float(ibp_bound),
                        "objective": None, "witness": None, "nodes": 0})
            global_bound = max(global_bound, min(ibp_bound, floor))
            continue
        enc = encode_worstcase(net, bounds, m, side, g_lower, g_upper)

        def heuristic(x, enc=enc):
            u = x[enc.u_index]
            xa = enc.assignment(u)
            return enc.model.objective(xa), xa

        try:
            res = solve_milp_bnb(enc.model, cfg.milp, heuristic, cutoff=floor)
        except BudgetExhausted as exc:
            logger.warning("component %d %s: %s", m, side, exc)
            res = exc.partial
            certified = False
        nodes += res.node_count
        entry = {"component": m, "side": side, "bound": float(res.bound),
                 "objective": None, "witness": None, "nodes": res.node_count}
        global_bound = max(global_bound, res.bound)
        if res.x is not None:
            u = res.x[enc.u_index]
            # value of the exact forward pass at the witness
            V_up, V_lo = violation(net, u_to_demand(net, u), g_lower, g_upper)
            val = float((V_up if side == UPPER else V_lo)[m])
            entry["objective"] = val
            entry["witness"] = u_to_demand(net, u)
            if val > best[0]:
                best = (val, u, m, side)
        per.append(entry)

    val, u, m, side = best
    v = max(val, 0.0)
    gap = max(global_bound - max(val, 0.0), 0.0) if np.isfinite(global_bound) else np.inf
    if gap > cfg.milp.gap_tol:
        certified = False
    return WorstCaseResult(
        v_g_max_pu=v, v_g_max_mva=v * base_mva, D_WC=u_to_demand(net, u),
        component=m, side=side, gap=float(gap), nodes=nodes,
        wall_ms=1e3 * (time.perf_counter() - t0), certified=certified,
        raw_objective=float(val), per_component=per,
        quantity="P" if m < max(n_out // 2, 1) else "Q")


def fix_relu_statuses(net: MlpParams, bounds: LayerBounds, D_WC,
                      threshold: float = 0.1) -> dict:
    """Heuristic status fixing around the worst-case witness.

    A neuron is fixed active when its pre-activation at ``D_WC`` exceeds
    ``threshold`` times its upper bound and inactive when it lies below
    ``threshold`` times its lower bound. Neurons already stable under the
    bounds are reported with their status too.
    """
    tr = forward_with_preactivations(net, D_WC)
    fixed = {}
    for k, (zh, lo, hi) in enumerate(zip(tr.pre, bounds.lower, bounds.upper)):
        for i in range(len(zh)):
            if lo[i] >= 0 or zh[i] > threshold * hi[i]:
                fixed[(k, i)] = ACTIVE
            elif hi[i] <= 0 or zh[i] < threshold * lo[i]:
                fixed[(k, i)] = INACTIVE
    return fixed


@dataclass
class HypercubeResult:
    d_normalized: float
    d_fraction_nominal: float
    witness: np.ndarray
    alpha: float
    n_fixed: int
    center: np.ndarray | None = None        # D_WC
    half_width: np.ndarray | None = None    # d in demand units per coordinate
    witness_violation: float = 0.0
    exact: bool = False
    nodes: int = 0
    diagnostic: str = ""


def _encode_hypercube(net, bounds, fixed, m, side, g_lower, g_upper, target, centre):
    b = ModelBuilder()
    u_idx, z_idx, y_idx = _encode_network(b, net, bounds, fixed)
    last = z_idx[-1] if z_idx else u_idx
    coefs, const = _output_expr(net, last, m, side, g_lower, g_upper)
    # violation >= target
    b.le({j: -a for j, a in coefs.items()}, const - target)
    lo, hi = bounds.input_lower, bounds.input_upper
    reach = np.maximum(hi - centre, centre - lo)
    movable = np.flatnonzero(hi > lo)
    R = float(reach[movable].max()) if movable.size else 0.0
    big = 2.0 * R
    d = b.var("d", 0.0, R)
    sel = {}
    for i in movable:
        p = b.var(f"p[{i}]", 0.0, 1.0, binary=True)
        q = b.var(f"q[{i}]", 0.0, 1.0, binary=True)
        sel[int(i)] = (p, q)
        # d <= (u_i - c_i) + big (1 - p_i)
        b.le({d: 1.0, int(u_idx[i]): -1.0, p: big}, big - centre[i])
        # d <= (c_i - u_i) + big (1 - q_i)
        b.le({d: 1.0, int(u_idx[i]): 1.0, q: big}, big + centre[i])
    if sel:
        b.eq({v: 1.0 for pq in sel.values() for v in pq}, 1.0)
    enc = Encoding(b.build({d: 1.0}), net, u_idx, z_idx, y_idx, dict(fixed))
    return enc, d, sel


def fit_hypercube(net: MlpParams, domain_lower, domain_upper, wc: WorstCaseResult,
                  alpha: float, g_lower, g_upper, nominal=None,
                  cfg: VerifierConfig | None = None, exact: bool = False) -> HypercubeResult:
    """Largest inf-norm distance from ``D_WC`` keeping violation >= alpha * v.

    The search box is the domain intersected with a local box of half-width
    ``cfg.local_half_width`` (scaled units) around the witness. With
    ``exact=False`` ReLU statuses are fixed by :func:`fix_relu_statuses`;
    if the resulting witness fails the forward-pass check the problem is
    re-solved without fixing.
    """
    cfg = cfg or VerifierConfig()
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    if wc.v_g_max_pu <= 0:
        raise ValueError("hypercube fitting needs a positive worst-case violation")
    g_lower = np.asarray(g_lower, float)
    g_upper = np.asarray(g_upper, float)
    target = alpha * wc.v_g_max_pu
    c = demand_to_u(net, wc.D_WC)
    dl, du = scaled_box(net, domain_lower, domain_upper)
    lo = np.maximum(dl, c - cfg.local_half_width)
    hi = np.minimum(du, c + cfg.local_half_width)
    lo, hi = np.minimum(lo, c), np.maximum(hi, c)
    bounds = interval_bounds_scaled(net, lo, hi)
    fixed = {} if exact else fix_relu_statuses(net, bounds, wc.D_WC, cfg.fix_threshold)
    n_fixed = sum(1 for (k, i), s in fixed.items()
                  if bounds.lower[k][i] < 0 < bounds.upper[k][i])
    if fixed:
        bounds = interval_bounds_scaled(net, lo, hi, fixed=fixed)
    m, side = wc.component, wc.side
    enc, d_col, sel = _encode_hypercube(net, bounds, fixed, m, side, g_lower, g_upper,
                                        target, c)

    def viol_at(u):
        V_up, V_lo = violation(net, u_to_demand(net, u), g_lower, g_upper)
        return float((V_up if side == UPPER else V_lo)[m])

    def complete(u):
        x = enc.assignment(u)
        delta = u - c
        dist = np.abs(delta)
        x[d_col] = 0.0
        if sel:
            i = max(sel, key=lambda j: (dist[j], -j))
            x[d_col] = dist[i]
            x[sel[i][0] if delta[i] >= 0 else sel[i][1]] = 1.0
        return x

    def heuristic(x):
        u = np.clip(x[enc.u_index], lo, hi)
        if viol_at(u) < target:
            return None
        xa = complete(u)
        if enc.model.residual(xa) > 1e-7:
            return None
        return enc.model.objective(xa), xa

    try:
        res = solve_milp_bnb(enc.model, cfg.milp, heuristic)
    except BudgetExhausted as exc:
        logger.warning("hypercube MILP: %s", exc)
        res = exc.partial
    if res.x is None:
        return HypercubeResult(0.0, 0.0, wc.D_WC.copy(), alpha, n_fixed, wc.D_WC.copy(),
                               np.zeros_like(c), viol_at(c), exact, res.node_count,
                               "infeasible under fixed ReLU statuses")
    u = res.x[enc.u_index]
    v_w = viol_at(u)
    if v_w < target - 1e-9:
        if not exact:
            logger.info("witness fails the forward check; re-solving without fixing")
            return fit_hypercube(net, domain_lower, domain_upper, wc, alpha, g_lower,
                                 g_upper, nominal, cfg, exact=True)
        # fall back to the worst-case witness itself (d = 0 is always valid)
        u, v_w = c.copy(), viol_at(c)
    delta = u - c
    d_norm = float(np.max(np.abs(delta), initial=0.0))
    i = int(np.argmax(np.abs(delta))) if delta.size else 0
    D = u_to_demand(net, u)
    frac = 0.0
    if nominal is not None and delta.size:
        nom = np.asarray(nominal, float)
        dD = abs(D[i] - wc.D_WC[i])
        frac = float(dD / abs(nom[i])) if nom[i] != 0 else float("inf")
    half = np.abs(_safe_unscale(net, np.full_like(c, d_norm)))
    return HypercubeResult(d_norm, frac, D, alpha, n_fixed, wc.D_WC.copy(), half, v_w,
                           exact, res.node_count)


def report_dict(wc: WorstCaseResult, hc: HypercubeResult | None) -> dict:
    """JSON-ready verification report."""
    out = {"component": int(wc.component), "side": wc.side,
           "v_g_max_pu": float(wc.v_g_max_pu), "v_g_max_mva": float(wc.v_g_max_mva),
           "D_WC": [float(x) for x in wc.D_WC], "gap": float(wc.gap),
           "nodes": int(wc.nodes), "wall_ms": float(wc.wall_ms),
           "certified": bool(wc.certified), "hypercube": None}
    if hc is not None:
        out["hypercube"] = {"alpha": float(hc.alpha), "d_normalized": float(hc.d_normalized),
                            "d_fraction_nominal": float(hc.d_fraction_nominal),
                            "witness": [float(x) for x in hc.witness],
                            "n_fixed": int(hc.n_fixed)}
    return out


def report_json(wc: WorstCaseResult, hc: HypercubeResult | None) -> str:
    return json.dumps(report_dict(wc, hc), indent=2)
