import json

import numpy as np
import pytest
from scipy.optimize import linprog
from scipy.stats import qmc

from wcpfnn.nn import forward, forward_with_preactivations
from wcpfnn.nn.mlp import MlpParams
from wcpfnn.verify import (ACTIVE, INACTIVE, LOWER, UPPER, BudgetExhausted, LayerBounds, MilpConfig,
                           ModelBuilder, VerifierConfig, encode_worstcase, find_worst_case,
                           fit_hypercube, fix_relu_statuses, interval_bounds, report_dict,
                           report_json, solve_lp, solve_milp_bnb, violation)
from wcpfnn.verify.lp import INFEASIBLE, OPTIMAL, StandardLP

from conftest import abs_net, random_net
from oracles import pattern_enumeration, vertex_enumeration, worst_violation_enumeration

NO_SEED = VerifierConfig(seed_samples=0)


def grid_max(f, lo, hi, step=1e-3):
    xs = np.arange(lo, hi + step / 2, step)
    vals = np.array([f(x) for x in xs])
    k = int(np.argmax(vals))
    return vals[k], xs[k]


# ---- interval bounds -----------------------------------------------------

def test_ibp_abs_net():
    b = interval_bounds(abs_net(), [-1.0], [2.0])
    np.testing.assert_allclose(b.lower[0], [-1.0, -2.0])
    np.testing.assert_allclose(b.upper[0], [2.0, 1.0])


def test_ibp_zero_weights_give_bias():
    bias = np.array([0.3, -0.2, 1.0])
    net = MlpParams([np.zeros((3, 2)), np.zeros((1, 3))], [bias, np.zeros(1)],
                    np.zeros(2), np.ones(2), np.zeros(1), np.ones(1))
    b = interval_bounds(net, [-5, -5], [5, 5])
    np.testing.assert_array_equal(b.lower[0], bias)
    np.testing.assert_array_equal(b.upper[0], bias)


def test_ibp_sound_on_samples(rng):
    net = random_net(rng, [3, 8, 8, 2])
    lo, hi = np.array([-1.0, 0.0, 2.0]), np.array([1.0, 0.5, 3.0])
    b = interval_bounds(net, lo, hi)
    D = lo + rng.uniform(size=(10_000, 3)) * (hi - lo)
    tr = forward_with_preactivations(net, D)
    for k, pre in enumerate(tr.pre):
        assert np.all(pre >= b.lower[k] - 1e-12)
        assert np.all(pre <= b.upper[k] + 1e-12)


def test_ibp_monotone_under_shrinking(rng):
    net = random_net(rng, [2, 6, 6, 1])
    outer = interval_bounds(net, [-1, -1], [1, 1])
    inner = interval_bounds(net, [-0.5, 0.0], [0.2, 0.9])
    for k in range(2):
        assert np.all(inner.lower[k] >= outer.lower[k] - 1e-12)
        assert np.all(inner.upper[k] <= outer.upper[k] + 1e-12)


def test_ibp_empty_box():
    with pytest.raises(ValueError):
        interval_bounds(abs_net(), [1.0], [0.0])


# ---- LP and B&B ----------------------------------------------------------

def _single_var(lo, hi, rows=()):
    b = ModelBuilder()
    x = b.var("x", lo, hi)
    for coef, rhs in rows:
        b.le({x: coef}, rhs)
    return b.build({x: 1.0})


def test_lp_simple_max():
    res = solve_lp(_single_var(0.0, 5.0, [(1.0, 3.0)]))
    assert res.status == OPTIMAL
    assert res.objective == pytest.approx(3.0)


def test_lp_infeasible_pair():
    res = solve_lp(_single_var(-10.0, 10.0, [(1.0, 0.0), (-1.0, -1.0)]))
    assert res.status == INFEASIBLE


@pytest.mark.parametrize("seed", range(10))
def test_lp_matches_vertex_enumeration(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 4))
    m = int(rng.integers(1, 5))
    A = rng.normal(size=(m, n))
    bvec = rng.uniform(0.1, 2.0, m)
    lb, ub = -rng.uniform(0, 2, n), rng.uniform(0, 2, n)
    c = rng.normal(size=n)
    res = StandardLP(-c, A, bvec, np.zeros((0, n)), np.zeros(0)).solve(lb, ub)
    assert res.status == OPTIMAL
    assert -res.objective == pytest.approx(vertex_enumeration(c, A, bvec, lb, ub), abs=1e-7)


def test_lp_with_equalities_matches_highs(rng):
    for _ in range(20):
        n = 5
        A_ub, b_ub = rng.normal(size=(4, n)), rng.uniform(0.5, 2, 4)
        A_eq = rng.normal(size=(2, n))
        x0 = rng.uniform(-0.5, 0.5, n)
        b_eq = A_eq @ x0
        c = rng.normal(size=n)
        lb, ub = -np.ones(n), np.ones(n)
        ours = StandardLP(c, A_ub, b_ub, A_eq, b_eq).solve(lb, ub)
        ref = linprog(c, A_ub, b_ub, A_eq, b_eq, bounds=list(zip(lb, ub)), method="highs")
        assert ours.status == OPTIMAL and ref.status == 0
        assert ours.objective == pytest.approx(ref.fun, abs=1e-7)


def test_stable_network_solves_at_root():
    net = MlpParams([np.array([[1.0], [2.0]]), np.array([[1.0, -1.0]])],
                    [np.array([1.0, 0.5]), np.zeros(1)], [0.0], [1.0], [0.0], [1.0])
    bounds = interval_bounds(net, [0.0], [1.0])
    assert bounds.n_unstable() == 0
    enc = encode_worstcase(net, bounds, 0, UPPER, [-10.0], [0.0])
    assert enc.model.binary.size == 0
    res = solve_milp_bnb(enc.model)
    assert res.node_count == 1
    # output is 0.5 - x on [0, 1]
    assert res.objective == pytest.approx(0.5)


@pytest.mark.parametrize("seed", range(5))
def test_bnb_matches_pattern_enumeration(seed):
    rng = np.random.default_rng(100 + seed)
    sizes = [2, int(rng.integers(2, 6)), int(rng.integers(2, 5)), 1]
    net = random_net(rng, sizes, weight_scale=2.0)
    lo, hi = -np.ones(2), np.ones(2)
    bounds = interval_bounds(net, lo, hi)
    for side in (UPPER, LOWER):
        enc = encode_worstcase(net, bounds, 0, side, [-0.2], [0.2])
        res = solve_milp_bnb(enc.model)
        ref = pattern_enumeration(net, lo, hi, 0, side, [-0.2], [0.2])
        assert res.objective == pytest.approx(ref, abs=1e-6)


def test_bnb_budget_carries_partial(rng):
    net = random_net(rng, [3, 8, 8, 1], weight_scale=2.0)
    bounds = interval_bounds(net, -np.ones(3), np.ones(3))
    enc = encode_worstcase(net, bounds, 0, UPPER, [-1.0], [0.0])
    with pytest.raises(BudgetExhausted) as info:
        solve_milp_bnb(enc.model, MilpConfig(node_limit=2))
    part = info.value.partial
    assert part.node_count == 2
    assert part.bound >= part.objective


# ---- encoding ------------------------------------------------------------

def test_encoding_accepts_true_pattern(rng):
    net = random_net(rng, [3, 6, 5, 2])
    lo, hi = -np.ones(3), np.ones(3)
    bounds = interval_bounds(net, lo, hi)
    enc = encode_worstcase(net, bounds, 1, UPPER, [-1, -1], [1, 1])
    for D in lo + rng.uniform(size=(50, 3)) * (hi - lo):
        x = enc.assignment(D)
        assert enc.model.residual(x) <= 1e-9
        assert enc.model.objective(x) == pytest.approx(forward(net, D)[1] - 1.0, abs=1e-12)


def test_abs_net_worst_case_encoding():
    bounds = interval_bounds(abs_net(), [-1.0], [2.0])
    enc = encode_worstcase(abs_net(), bounds, 0, UPPER, [0.0], [1.5])
    res = solve_milp_bnb(enc.model)
    oracle, x_star = grid_max(lambda x: abs(x) - 1.5, -1.0, 2.0)
    assert res.objective == pytest.approx(oracle, abs=1e-6)
    assert res.x[enc.u_index][0] == pytest.approx(x_star, abs=1e-6)


def test_constant_output_no_violation():
    net = MlpParams([np.zeros((2, 1)), np.zeros((1, 2))], [np.zeros(2), np.array([0.5])],
                    [0.0], [1.0], [0.0], [1.0])
    bounds = interval_bounds(net, [-1.0], [1.0])
    for side in (UPPER, LOWER):
        res = solve_milp_bnb(encode_worstcase(net, bounds, 0, side, [0.0], [1.0]).model)
        assert res.objective <= 0


def test_single_layer_stable_equals_lp(rng):
    w = rng.uniform(0.5, 1.5, (4, 3))
    net = MlpParams([w, rng.normal(size=(1, 4))], [np.full(4, 5.0), np.zeros(1)],
                    np.zeros(3), np.ones(3), np.zeros(1), np.ones(1))
    bounds = interval_bounds(net, -np.ones(3), np.ones(3))
    assert bounds.n_unstable() == 0
    res = solve_milp_bnb(encode_worstcase(net, bounds, 0, UPPER, [-9.0], [0.0]).model)
    c = net.weights[1][0] @ w
    const = net.weights[1][0] @ net.biases[0]
    lp = linprog(-c, bounds=[(-1, 1)] * 3, method="highs")
    assert res.objective == pytest.approx(-lp.fun + const, abs=1e-9)


def test_bad_side_rejected():
    with pytest.raises(ValueError):
        encode_worstcase(abs_net(), interval_bounds(abs_net(), [0.0], [1.0]), 0, "both",
                         [0.0], [1.0])


# ---- worst case search ---------------------------------------------------

def test_find_worst_case_abs_net():
    wc = find_worst_case(abs_net(), [-1.0], [2.0], [0.0], [1.5], NO_SEED)
    assert wc.v_g_max_pu == pytest.approx(0.5, abs=1e-6)
    assert wc.D_WC[0] == pytest.approx(2.0, abs=1e-6)
    assert (wc.component, wc.side, wc.certified) == (0, UPPER, True)


def test_find_worst_case_inside_bounds_is_zero():
    # interval output bound on [-1, 1] is [-1, 2]
    wc = find_worst_case(abs_net(), [-1.0], [1.0], [-1.5], [2.5], NO_SEED)
    assert wc.v_g_max_pu == 0.0
    assert wc.certified and wc.nodes == 0


def test_find_worst_case_mva_scaling():
    wc = find_worst_case(abs_net(), [-1.0], [2.0], [0.0], [1.5], NO_SEED, base_mva=100.0)
    assert wc.v_g_max_mva == pytest.approx(50.0, abs=1e-4)


def test_find_worst_case_dominates_samples(rng):
    net = random_net(rng, [3, 8, 8, 2], weight_scale=1.5)
    lo, hi = np.zeros(3), np.ones(3)
    gl, gu = np.array([-0.3, -0.2]), np.array([0.3, 0.1])
    wc = find_worst_case(net, lo, hi, gl, gu)
    D = lo + qmc.LatinHypercube(d=3, seed=4).random(10_000) * (hi - lo)
    up, low = violation(net, D, gl, gu)
    assert wc.certified
    assert wc.v_g_max_pu >= max(up.max(), low.max()) - 1e-9
    # the witness reproduces the reported value
    up, low = violation(net, wc.D_WC, gl, gu)
    val = (up if wc.side == UPPER else low)[wc.component]
    assert val >= wc.v_g_max_pu - wc.gap - 1e-9


@pytest.mark.parametrize("seed", range(3))
def test_find_worst_case_matches_enumeration(seed):
    rng = np.random.default_rng(200 + seed)
    net = random_net(rng, [2, 5, 4, 2], weight_scale=2.0)
    lo, hi = -np.ones(2), np.ones(2)
    gl, gu = np.array([-0.5, -0.3]), np.array([0.2, 0.4])
    wc = find_worst_case(net, lo, hi, gl, gu, NO_SEED)
    assert wc.v_g_max_pu == pytest.approx(worst_violation_enumeration(net, lo, hi, gl, gu),
                                          abs=1e-6)


# ---- status fixing and hypercube -----------------------------------------

def _one_neuron_bounds(lo, hi):
    return LayerBounds([np.array([lo])], [np.array([hi])], np.zeros(1), np.zeros(1),
                       np.array([-1.0]), np.array([1.0]))


def _identity_neuron():
    return MlpParams([np.array([[1.0]]), np.array([[1.0]])], [np.zeros(1), np.zeros(1)],
                     [0.0], [1.0], [0.0], [1.0])


def test_fix_active_above_threshold():
    fixed = fix_relu_statuses(_identity_neuron(), _one_neuron_bounds(-1.0, 1.0), [0.5])
    assert fixed == {(0, 0): ACTIVE}


def test_fix_leaves_small_preactivation_binary():
    fixed = fix_relu_statuses(_identity_neuron(), _one_neuron_bounds(-1.0, 1.0), [0.05])
    assert fixed == {}


def test_fix_inactive_below_threshold():
    fixed = fix_relu_statuses(_identity_neuron(), _one_neuron_bounds(-1.0, 1.0), [-0.5])
    assert fixed == {(0, 0): INACTIVE}


def test_hypercube_abs_net():
    wc = find_worst_case(abs_net(), [-1.0], [2.0], [0.0], [1.5], NO_SEED)
    hc = fit_hypercube(abs_net(), [-1.0], [2.0], wc, 0.8, [0.0], [1.5], nominal=[2.0])
    # violation >= 0.4 <=> x >= 1.9 on the domain
    assert hc.d_normalized == pytest.approx(0.1, abs=1e-6)
    assert hc.witness[0] == pytest.approx(1.9, abs=1e-6)
    assert hc.witness_violation >= 0.8 * wc.v_g_max_pu - 1e-9
    assert hc.d_fraction_nominal == pytest.approx(0.05, abs=1e-6)


@pytest.mark.parametrize("alpha,d", [(0.9, 0.05), (0.99, 0.005), (0.9999, 5e-5)])
def test_hypercube_shrinks_as_alpha_grows(alpha, d):
    wc = find_worst_case(abs_net(), [-1.0], [2.0], [0.0], [1.5], NO_SEED)
    hc = fit_hypercube(abs_net(), [-1.0], [2.0], wc, alpha, [0.0], [1.5])
    assert hc.d_normalized == pytest.approx(d, abs=1e-6)


def test_hypercube_alpha_validation():
    wc = find_worst_case(abs_net(), [-1.0], [2.0], [0.0], [1.5], NO_SEED)
    for alpha in (0.0, 1.0):
        with pytest.raises(ValueError):
            fit_hypercube(abs_net(), [-1.0], [2.0], wc, alpha, [0.0], [1.5])


@pytest.mark.parametrize("seed", range(4))
def test_hypercube_fixing_close_to_exact(seed):
    rng = np.random.default_rng(300 + seed)
    net = random_net(rng, [2, 5, 4, 1], weight_scale=2.0)
    lo, hi = -np.ones(2), np.ones(2)
    gl, gu = np.array([-0.1]), np.array([0.1])
    wc = find_worst_case(net, lo, hi, gl, gu)
    if wc.v_g_max_pu <= 0:
        pytest.skip("net has no violation")
    approx = fit_hypercube(net, lo, hi, wc, 0.8, gl, gu)
    exact = fit_hypercube(net, lo, hi, wc, 0.8, gl, gu, exact=True)
    assert approx.witness_violation >= 0.8 * wc.v_g_max_pu - 1e-9
    assert exact.witness_violation >= 0.8 * wc.v_g_max_pu - 1e-9
    assert abs(approx.d_normalized - exact.d_normalized) <= 0.1 * exact.d_normalized + 1e-9


def test_report_json_fields():
    wc = find_worst_case(abs_net(), [-1.0], [2.0], [0.0], [1.5], NO_SEED, base_mva=100.0)
    hc = fit_hypercube(abs_net(), [-1.0], [2.0], wc, 0.8, [0.0], [1.5], nominal=[2.0])
    rep = json.loads(report_json(wc, hc))
    for key in ("component", "side", "v_g_max_pu", "v_g_max_mva", "D_WC", "gap", "nodes",
                "wall_ms"):
        assert key in rep
    assert set(rep["hypercube"]) >= {"alpha", "d_normalized", "d_fraction_nominal", "witness"}
    assert report_dict(wc, None)["hypercube"] is None
