import numpy as np
import pytest
from scipy.optimize import brentq

from wcpfnn.grid import build_quadratic_forms, evaluate_residuals
from wcpfnn.opf import OPFError, PenaltyConfig, PowerFlowError, solve_opf_penalty, solve_power_flow

from conftest import three_bus_case, two_bus_case


def test_power_flow_no_load_flat():
    case = two_bus_case(pd=0.0)
    qf = build_quadratic_forms(case)
    v = solve_power_flow(qf, case, np.zeros(2), np.zeros(0))
    np.testing.assert_allclose(v, [1.0, 1.0, 0.0, 0.0], atol=1e-12)


def test_power_flow_matches_power_angle_curve():
    case = two_bus_case(pd=0.5, x=0.1)
    qf = build_quadratic_forms(case)
    v = solve_power_flow(qf, case, np.zeros(2), np.array([0.5, 0.0]))
    # lossless line, Q2 = 0 forces |V2| = cos(delta); P = |V2| sin(delta) / x
    delta = brentq(lambda d: np.cos(d) * np.sin(d) / 0.1 - 0.5, 0.0, np.pi / 4)
    assert np.hypot(v[1], v[3]) == pytest.approx(np.cos(delta), abs=1e-8)
    assert np.arctan2(v[3], v[1]) == pytest.approx(-delta, abs=1e-8)


def test_power_flow_overload_raises():
    case = two_bus_case(pd=20.0, x=0.1)
    qf = build_quadratic_forms(case)
    with pytest.raises(PowerFlowError) as info:
        solve_power_flow(qf, case, np.zeros(2), np.array([20.0, 0.0]))
    assert info.value.mismatch > 1e-8


def test_power_flow_equations_hold():
    case = three_bus_case(pd=1.0)
    qf = build_quadratic_forms(case)
    G = np.array([0.0, 0.4, 0.0, 0.0])
    v = solve_power_flow(qf, case, G, np.array([1.0, 0.0]))
    vals = qf.eq.values(v)
    target = qf.eq_gen @ G + qf.eq_demand @ np.array([1.0, 0.0])
    # bus 2 real injection and bus 3 both injections are enforced
    np.testing.assert_allclose(vals[[1, 2, 5]], target[[1, 2, 5]], atol=1e-8)
    assert np.hypot(v[1], v[4]) == pytest.approx(case.buses[1].v_set, abs=1e-10)


def _check_feasible(qf, sol, D, tol=1e-6):
    eq, ineq = evaluate_residuals(qf, sol.v, sol.G, D)
    assert np.abs(eq).max() <= tol
    assert ineq.max() <= tol


def test_single_generator_covers_demand_and_losses():
    case = two_bus_case(pd=0.5, qd=0.1, r=0.02, x=0.1)
    qf = build_quadratic_forms(case)
    D = np.array([0.5, 0.1])
    sol = solve_opf_penalty(qf, D)
    _check_feasible(qf, sol, D)
    V = sol.v[:2] + 1j * sol.v[2:]
    I = (V[0] - V[1]) / (0.02 + 0.1j)
    losses = 0.02 * abs(I) ** 2
    assert sol.G[0] == pytest.approx(0.5 + losses, abs=1e-5)
    assert sol.objective == pytest.approx(qf.cost @ sol.G)


def test_economic_dispatch_prefers_cheap_unit():
    case = three_bus_case(pd=1.0, costs=(10.0, 20.0))
    qf = build_quadratic_forms(case)
    D = np.array([1.0, 0.0])
    sol = solve_opf_penalty(qf, D)
    _check_feasible(qf, sol, D)
    assert sol.G[0] == pytest.approx(1.0, rel=0.02)
    assert sol.G[1] == pytest.approx(0.0, abs=0.02)


def test_zero_demand_zero_dispatch():
    case = two_bus_case(pd=0.5)
    qf = build_quadratic_forms(case)
    sol = solve_opf_penalty(qf, np.zeros(2))
    assert sol.objective == pytest.approx(0.0, abs=1e-5)
    np.testing.assert_allclose(sol.G, 0.0, atol=1e-5)


def test_opf_deterministic():
    case = three_bus_case()
    qf = build_quadratic_forms(case)
    D = np.array([0.8, 0.1])
    a = solve_opf_penalty(qf, D, PenaltyConfig(random_seed=3))
    b = solve_opf_penalty(qf, D, PenaltyConfig(random_seed=3))
    np.testing.assert_array_equal(a.G, b.G)
    np.testing.assert_array_equal(a.v, b.v)


def test_opf_infeasible_demand():
    case = two_bus_case(pd=0.5, p_max=0.2)
    qf = build_quadratic_forms(case)
    with pytest.raises(OPFError):
        solve_opf_penalty(qf, np.array([0.5, 0.0]),
                          PenaltyConfig(multistart_count=2, max_outer_iterations=6))


def test_demand_length_checked():
    qf = build_quadratic_forms(two_bus_case())
    with pytest.raises(ValueError):
        solve_opf_penalty(qf, np.zeros(3))


def test_penalty_config_validation():
    with pytest.raises(ValueError):
        PenaltyConfig(penalty_growth=1.0)
    with pytest.raises(ValueError):
        PenaltyConfig(multistart_count=0)
