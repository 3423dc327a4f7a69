import math

import numpy as np
import pytest
from src.memlqr.solver import openloop, propagator
from src.memlqr.utils.exceptions import DimensionMismatchError, GridError


@pytest.fixture
def scalar_lqr_solution(scalar_lqr):
    prop = propagator.build_propagator(scalar_lqr)
    return prop, openloop.solve_open_loop(scalar_lqr, prop)


def test_scalar_lqr_cost(scalar_lqr_solution):
    _, solution = scalar_lqr_solution
    assert abs(solution.J - math.tanh(1.0)) <= 1e-3
    assert solution.J_free == pytest.approx(1.0)
    assert solution.residual <= 1e-10
    assert solution.coercivity_margin >= 1.0 - 1e-8


def test_scalar_lqr_control_is_tanh_feedback(scalar_lqr, scalar_lqr_solution):
    _, solution = scalar_lqr_solution
    t = scalar_lqr.grid.nodes
    # u = -tanh(T - t) w for w' = u, Q = 1
    w = np.concatenate([scalar_lqr.init.xi0, solution.w_hat[1:, 0]])
    expected = -np.tanh(1.0 - t) * w
    # the terminal sample only sees a half-weight step
    assert np.max(np.abs(solution.u_hat[:-1, 0] - expected[:-1])) <= 1e-3
    terminal = 0.5 * scalar_lqr.h * solution.w_hat[-1, 0]
    assert solution.u_hat[-1, 0] == pytest.approx(-terminal)


@pytest.mark.parametrize("N", [100, 200])
def test_start_node_control_is_second_order(problem_manager, scalar_lqr_data, N):
    scalar_lqr_data["N"] = N
    instance = problem_manager.parse(scalar_lqr_data)
    solution = openloop.solve_open_loop(instance, propagator.build_propagator(instance))
    # u(0) = -tanh(1) xi0
    assert abs(solution.u_hat[0, 0] + math.tanh(1.0)) <= 10.0 * instance.h**2


def test_zero_weight_gives_zero_control(problem_manager, scalar_memory_data):
    scalar_memory_data["Q"] = [[0.0]]
    instance = problem_manager.parse(scalar_memory_data)
    solution = openloop.solve_open_loop(instance, propagator.build_propagator(instance))
    assert solution.J == 0.0
    assert np.max(np.abs(solution.u_hat)) == 0.0


def test_cost_dominated_by_free_response(history_instance, random_instance):
    for instance in (history_instance, random_instance):
        solution = openloop.solve_open_loop(instance, propagator.build_propagator(instance))
        assert solution.J <= solution.J_free
        assert solution.u_hat.shape == (instance.grid.N - instance.tau_index + 1, instance.m)
        assert solution.w_hat.shape == (instance.grid.N - instance.tau_index + 1, instance.n)


def test_free_response_starts_at_xi0(history_instance):
    prop = propagator.build_propagator(history_instance)
    free = openloop.assemble_E(prop, history_instance.init)
    assert np.allclose(free[0], history_instance.init.xi0, rtol=0.0, atol=1e-14)


def test_lu_and_cholesky_agree(random_instance):
    prop = propagator.build_propagator(random_instance)
    chol = openloop.solve_open_loop(random_instance, prop)
    lu = openloop.solve_open_loop(random_instance, prop, method="lu")
    assert lu.method == "lu"
    assert np.max(np.abs(chol.u_hat - lu.u_hat)) <= 1e-8 * (1.0 + np.max(np.abs(chol.u_hat)))


def test_input_to_state_is_causal(scalar_memory):
    prop = propagator.build_propagator(scalar_memory)
    operator = openloop.assemble_L(prop, scalar_memory.B, 0)
    assert operator.L.shape == (201, 201)
    assert np.array_equal(np.triu(operator.L, k=1), np.zeros_like(operator.L))
    assert operator.L[0, 0] == pytest.approx(0.5 * scalar_memory.h, rel=1e-12)
    assert np.all(operator.L[0, 1:] == 0.0)
    assert np.allclose(np.diag(operator.L), 0.5 * scalar_memory.h, rtol=1e-12, atol=0.0)


def test_optimality_probe(random_instance):
    prop = propagator.build_propagator(random_instance)
    solution = openloop.solve_open_loop(random_instance, prop)
    direction = np.random.default_rng(0).standard_normal(solution.u_hat.shape)
    probe = openloop.optimality_probe(random_instance, solution, direction, 1e-4, prop=prop)
    assert abs(probe) <= 1e-7 * (1.0 + solution.J)


def test_optimality_probe_arguments(random_instance):
    prop = propagator.build_propagator(random_instance)
    solution = openloop.solve_open_loop(random_instance, prop)
    with pytest.raises(ValueError):
        openloop.optimality_probe(random_instance, solution, solution.u_hat, 0.0, prop=prop)
    with pytest.raises(ValueError):
        openloop.optimality_probe(random_instance, solution, solution.u_hat, 1e-4)


def test_representation_matches_stepping(scalar_memory):
    prop = propagator.build_propagator(scalar_memory)
    solution = openloop.solve_open_loop(scalar_memory, prop)
    gap, constant = openloop.representation_gap(scalar_memory, prop, solution)
    assert gap <= 1e-3
    assert constant == pytest.approx(gap / scalar_memory.h**2)


def test_transition_property(scalar_memory):
    prop = propagator.build_propagator(scalar_memory)
    solution = openloop.solve_open_loop(scalar_memory, prop)
    residual = openloop.transition_residual(scalar_memory, prop, solution, 100)
    assert residual <= 10.0 * scalar_memory.h**2


def test_transition_restart_outside_horizon(scalar_memory):
    prop = propagator.build_propagator(scalar_memory)
    solution = openloop.solve_open_loop(scalar_memory, prop)
    with pytest.raises(GridError):
        openloop.transition_residual(scalar_memory, prop, solution, 200)


def test_restart_state_keeps_jump(jump_instance):
    prop = propagator.build_propagator(jump_instance)
    solution = openloop.solve_open_loop(jump_instance, prop)
    start = openloop.restart_state(jump_instance, solution, 10)
    assert start.jumps == {}
    assert start.discontinuities()[10][0] == 1.0
    later = openloop.restart_state(jump_instance, solution, 20)
    assert list(later.jumps) == [10]
    assert later.path[10, 0] == 0.0
    assert later.memory_path()[10, 0] == 0.5
    assert later.w[0] == solution.w_hat[10, 0]


def test_transition_property_with_jump(problem_manager, jump_data):
    jump_data["N"] = 80
    instance = problem_manager.parse(jump_data)
    prop = propagator.build_propagator(instance)
    solution = openloop.solve_open_loop(instance, prop)
    for restart in (40, 60):
        residual = openloop.transition_residual(instance, prop, solution, restart)
        assert residual <= 10.0 * instance.h**2


def test_evaluate_cost_shapes(scalar_lqr):
    with pytest.raises(DimensionMismatchError):
        openloop.evaluate_cost(np.ones((3, 1)), np.ones((2, 1)), scalar_lqr.Q, scalar_lqr.grid)


def test_evaluate_cost_constant_state(scalar_lqr):
    count = scalar_lqr.grid.N + 1
    cost = openloop.evaluate_cost(
        np.ones((count, 1)), np.zeros((count, 1)), scalar_lqr.Q, scalar_lqr.grid
    )
    assert cost == pytest.approx(1.0)


def test_evaluate_cost_is_not_clamped(scalar_lqr):
    count = scalar_lqr.grid.N + 1
    cost = openloop.evaluate_cost(
        np.ones((count, 1)), np.zeros((count, 1)), -np.eye(1), scalar_lqr.grid
    )
    assert cost == pytest.approx(-1.0)
