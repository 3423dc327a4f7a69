import math

import numpy as np
import pytest
from src.memlqr.solver import openloop, propagator, synthesis


@pytest.fixture
def history_setup(history_instance):
    prop = propagator.build_propagator(history_instance)
    solution = openloop.solve_open_loop(history_instance, prop)
    tables, ops = synthesis.synthesize(prop, history_instance, history_instance.tau_index)
    return prop, solution, tables, ops


def test_scalar_lqr_cost_operator(scalar_lqr):
    prop = propagator.build_propagator(scalar_lqr)
    ops = synthesis.cost_operators_at(prop, scalar_lqr, 0)
    assert abs(ops.P0[0, 0] - math.tanh(1.0)) <= 1e-3
    assert ops.P1.shape == (1, 1, 1)
    assert ops.P2.shape == (1, 1, 1, 1)
    assert np.max(np.abs(ops.P1)) == 0.0


def test_key_lemma(scalar_memory, history_setup, history_instance):
    prop = propagator.build_propagator(scalar_memory)
    tables, ops = synthesis.synthesize(prop, scalar_memory, 0)
    for value in synthesis.key_lemma_residuals(prop, tables, scalar_memory.Q):
        assert value <= 1e-8 * (1.0 + ops.norm())

    prop, _, tables, ops = history_setup
    for value in synthesis.key_lemma_residuals(prop, tables, history_instance.Q):
        assert value <= 1e-8 * (1.0 + ops.norm())


def test_key_lemma_heat(heat_instance):
    prop = propagator.build_propagator(heat_instance)
    tables, ops = synthesis.synthesize(prop, heat_instance, 0)
    for value in synthesis.key_lemma_residuals(prop, tables, heat_instance.Q):
        assert value <= 1e-7 * (1.0 + ops.norm())


def test_kernels_reproduce_open_loop(history_setup, history_instance):
    _, solution, tables, _ = history_setup
    init = history_instance.init
    weighted = history_instance.grid.weights(0, init.tau_index)[:, None] * init.path
    u = tables.psi1 @ init.xi0 + np.einsum("asmy,sy->am", tables.psi2, weighted)
    w = tables.z1 @ init.xi0 + np.einsum("asxy,sy->ax", tables.z2, weighted)
    assert np.max(np.abs(u - solution.u_hat)) <= 1e-10 * (1.0 + np.max(np.abs(solution.u_hat)))
    assert np.max(np.abs(w - solution.w_hat)) <= 1e-9 * (1.0 + np.max(np.abs(solution.w_hat)))


def test_optimal_cost_form(history_setup, history_instance):
    _, solution, _, ops = history_setup
    value = synthesis.optimal_cost_via_P(ops, history_instance.init, history_instance.grid)
    assert abs(value - solution.J) <= 1e-8 * (1.0 + solution.J)


def test_z_routes_agree(history_setup, history_instance):
    prop, _, tables, _ = history_setup
    projected = synthesis.compute_Z(prop, history_instance, tables, route="projection")
    assert np.allclose(projected.z1, tables.z1, rtol=0.0, atol=1e-8)
    assert np.allclose(projected.z2, tables.z2, rtol=0.0, atol=1e-8)


def test_cost_operators_symmetric(history_setup, history_instance):
    _, _, _, ops = history_setup
    for value in ops.symmetry_defect().values():
        assert value <= history_instance.tolerances.drift_tol * (1.0 + ops.norm())
    assert np.min(np.linalg.eigvalsh(ops.P0)) >= 0.0


def test_terminal_node_is_zero(history_instance):
    prop = propagator.build_propagator(history_instance)
    ops = synthesis.cost_operators_at(prop, history_instance, history_instance.grid.N)
    assert np.max(np.abs(ops.P0)) == 0.0
    assert np.max(np.abs(ops.P2)) == 0.0


def test_adjoint_formulas(history_setup, history_instance):
    prop, _, tables, _ = history_setup
    residuals = synthesis.adjoint_residuals(prop, history_instance, tables)
    assert set(residuals) == {"Psi1*", "Psi2*", "Z1*", "Z2*"}
    for value in residuals.values():
        assert value <= 1e-9


def test_adjoint_zero_test_functions(history_setup, history_instance):
    prop, _, tables, _ = history_setup
    residuals = synthesis.adjoint_residuals(prop, history_instance, tables, g_scale=0.0)
    assert max(residuals.values()) == 0.0


@pytest.mark.asyncio
async def test_sweep_matches_sequential(history_instance):
    prop = propagator.build_propagator(history_instance)
    nodes = [30, 10, 20]
    swept = await synthesis.cost_ops_sweep(prop, history_instance, nodes, max_concurrency=3)
    assert [ops.t_index for ops in swept] == nodes
    for node, ops in zip(nodes, swept):
        expected = synthesis.cost_operators_at(prop, history_instance, node)
        assert np.allclose(ops.P0, expected.P0, rtol=1e-13, atol=0.0)
        assert np.allclose(ops.P2, expected.P2, rtol=1e-13, atol=1e-16)


@pytest.mark.asyncio
async def test_sweep_rejects_zero_concurrency(history_instance):
    prop = propagator.build_propagator(history_instance)
    with pytest.raises(ValueError):
        await synthesis.cost_ops_sweep(prop, history_instance, [10], max_concurrency=0)


@pytest.mark.asyncio
async def test_feedback_consistency(scalar_memory):
    prop = propagator.build_propagator(scalar_memory)
    solution = openloop.solve_open_loop(scalar_memory, prop)
    at_start = await synthesis.feedback_consistency(prop, scalar_memory, solution, [0])
    assert at_start <= 1e-10
    later = await synthesis.feedback_consistency(
        prop, scalar_memory, solution, [100, 150], max_concurrency=2
    )
    assert later <= 10.0 * scalar_memory.h**2 * 9.0


@pytest.mark.asyncio
async def test_horizon_monotonicity(history_instance):
    prop = propagator.build_propagator(history_instance)
    ops_list = await synthesis.cost_ops_sweep(prop, history_instance, [10, 25, 40])
    assert synthesis.horizon_monotonicity(ops_list) <= 1e-8
