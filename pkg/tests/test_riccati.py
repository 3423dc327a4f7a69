import numpy as np
import pytest
from src.memlqr.models.solution import AugmentedState
from src.memlqr.solver import openloop, propagator, riccati, synthesis
from src.memlqr.utils.exceptions import GridError, RiccatiBlowUpError


@pytest.fixture
def scalar_lqr_riccati(scalar_lqr):
    return riccati.integrate_backward(scalar_lqr)


def test_memoryless_reduction(scalar_lqr, scalar_lqr_riccati):
    ric = scalar_lqr_riccati
    t = scalar_lqr.grid.nodes
    assert np.max(np.abs(ric.P0[:, 0, 0] - np.tanh(1.0 - t))) <= 5e-4
    assert max(np.max(np.abs(P1)) for P1 in ric.P1) <= 1e-12
    assert max(np.max(np.abs(P2)) for P2 in ric.P2.values()) <= 1e-12


def test_matches_standard_riccati(scalar_lqr, scalar_lqr_riccati):
    reference = riccati.integrate_standard_riccati(
        scalar_lqr.A, scalar_lqr.B, scalar_lqr.Q, scalar_lqr.grid
    )
    assert np.max(np.abs(scalar_lqr_riccati.P0 - reference)) <= 1e-12


def test_terminal_conditions(scalar_memory):
    ric = riccati.integrate_backward(scalar_memory)
    N = scalar_memory.grid.N
    assert np.max(np.abs(ric.P0[N])) == 0.0
    assert np.max(np.abs(ric.P1[N])) == 0.0
    assert np.max(np.abs(ric.P2[N])) == 0.0


def test_heun_beats_euler(scalar_lqr):
    exact = np.tanh(1.0)
    heun = riccati.integrate_backward(scalar_lqr, scheme="heun").P0[0, 0, 0]
    euler = riccati.integrate_backward(scalar_lqr, scheme="euler").P0[0, 0, 0]
    assert abs(heun - exact) < abs(euler - exact)
    assert abs(euler - exact) <= 1e-2


def test_checkpoints(scalar_memory):
    ric = riccati.integrate_backward(scalar_memory, checkpoints=[50, 100])
    assert ric.checkpoints == [0, 50, 100, 200]
    assert ric.P2[50].shape == (51, 51, 1, 1)
    assert ric.P1[50].shape == (51, 1, 1)
    assert ric.P2_edge[50].shape == (51, 1, 1)


def test_checkpoint_outside_grid(scalar_memory):
    with pytest.raises(GridError):
        riccati.integrate_backward(scalar_memory, checkpoints=[201])


def test_cross_route_agreement(scalar_memory):
    prop = propagator.build_propagator(scalar_memory)
    ric = riccati.integrate_backward(scalar_memory, prop)
    ops = synthesis.cost_operators_at(prop, scalar_memory, 0)
    bound = 1e-3 * (1.0 + np.max(np.abs(ric.P0[0])))
    for gap in riccati.cross_route_gaps(ric, {0: ops})[0]:
        assert gap <= bound


def test_structural_drift(scalar_memory, random_instance):
    for instance in (scalar_memory, random_instance):
        ric = riccati.integrate_backward(instance)
        scale = 1.0 + np.max(np.abs(ric.P0))
        for value in ric.drift.values():
            assert value <= 1e-8 * scale


def test_dre_residuals(scalar_memory):
    mid = 100
    ric = riccati.integrate_backward(scalar_memory, checkpoints=[mid - 1, mid, mid + 1])
    residuals = riccati.dre_residual(ric, scalar_memory)
    assert set(residuals) == {"P0", "P1", "P2"}
    tolerance = riccati.dre_tolerance(ric, scalar_memory)
    for value in residuals.values():
        assert value <= tolerance


def test_dre_residual_without_p2_neighbours(scalar_memory):
    ric = riccati.integrate_backward(scalar_memory)
    assert "P2" not in riccati.dre_residual(ric, scalar_memory)


def test_optimal_cost_form_with_history(history_instance):
    prop = propagator.build_propagator(history_instance)
    solution = openloop.solve_open_loop(history_instance, prop)
    ric = riccati.integrate_backward(history_instance, prop)
    init = history_instance.init
    state = AugmentedState(node=history_instance.tau_index, w=init.xi0, path=init.path)
    bigP = riccati.assemble_bigP(ric, history_instance.tau_index)
    assert bigP.symmetry_defect() <= 1e-8 * (1.0 + np.max(np.abs(bigP.matrix)))
    tolerance = 10.0 * history_instance.h**2 * 3.0**3
    assert abs(bigP.quadratic_form(state) - solution.J) <= tolerance * (1.0 + solution.J)


def test_bigP_requires_checkpoint(scalar_memory):
    ric = riccati.integrate_backward(scalar_memory)
    with pytest.raises(GridError):
        riccati.assemble_bigP(ric, 37)
    assert riccati.assemble_bigP(ric, 0).matrix.shape == (1, 1)


def test_uniqueness_probe(scalar_memory):
    ric = riccati.integrate_backward(scalar_memory)
    constants = riccati.uniqueness_probe(scalar_memory, ric)
    low, high = constants[1e-6], constants[1e-4]
    assert 0.0 < low
    assert abs(high - low) / low <= 1e-2


def test_feedback_gains(random_instance):
    ric = riccati.integrate_backward(random_instance)
    law = riccati.feedback_gains(ric, random_instance.B)
    N = random_instance.grid.N
    assert law.G0.shape == (N + 1, 1, 2)
    assert law.G1[10].shape == (11, 1, 2)
    assert np.allclose(law.G0[5], random_instance.B.T @ ric.P0[5])


def test_zero_weight_gives_zero_gains(problem_manager, scalar_memory_data):
    scalar_memory_data["Q"] = [[0.0]]
    instance = problem_manager.parse(scalar_memory_data)
    law = riccati.feedback_gains(riccati.integrate_backward(instance), instance.B)
    assert np.max(np.abs(law.G0)) == 0.0
    assert max(np.max(np.abs(G1)) for G1 in law.G1) == 0.0


def test_stability_warning():
    stiff = np.array([[-500.0]])
    assert "stability bound" in riccati.stability_warning(stiff, 0.01, "euler")
    assert riccati.stability_warning(stiff, 1e-4, "heun") is None


def test_blow_up(problem_manager, scalar_lqr_data):
    scalar_lqr_data["A"] = [[-5000.0]]
    scalar_lqr_data["Q"] = [[1e6]]
    scalar_lqr_data["N"] = 100
    instance = problem_manager.parse(scalar_lqr_data)
    with pytest.raises(RiccatiBlowUpError):
        riccati.integrate_backward(instance, scheme="euler")
