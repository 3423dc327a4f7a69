import numpy as np
import pytest
from src.memlqr.models.solution import AugmentedState
from src.memlqr.solver import closedloop, openloop, propagator, riccati
from src.memlqr.utils.exceptions import DimensionMismatchError, GridError


@pytest.fixture
def memory_loop(scalar_memory):
    prop = propagator.build_propagator(scalar_memory)
    solution = riccati.integrate_backward(scalar_memory, prop, checkpoints=[100])
    law = riccati.feedback_gains(solution, scalar_memory.B)
    trajectory = closedloop.simulate_feedback(scalar_memory, law)
    return prop, solution, law, trajectory


def test_closed_loop_matches_open_loop(scalar_memory, memory_loop):
    prop, _, _, trajectory = memory_loop
    optimal = openloop.solve_open_loop(scalar_memory, prop)
    scale = 1.0 + np.max(np.abs(optimal.u_hat))
    assert np.max(np.abs(trajectory.u - optimal.u_hat)) <= 5e-3 * scale
    assert abs(trajectory.J_cl - optimal.J) <= 1e-3 * (1.0 + optimal.J)
    assert trajectory.J_cl >= optimal.J - 1e-3


def test_memoryless_loop_reaches_tanh_cost(scalar_lqr):
    law = riccati.feedback_gains(riccati.integrate_backward(scalar_lqr), scalar_lqr.B)
    trajectory = closedloop.simulate_feedback(scalar_lqr, law)
    assert abs(trajectory.J_cl - np.tanh(1.0)) <= 1e-3


def test_euler_stepper(scalar_memory, memory_loop):
    _, _, law, trajectory = memory_loop
    coarse = closedloop.simulate_feedback(scalar_memory, law, scheme="euler")
    assert coarse.scheme == "euler"
    assert abs(coarse.J_cl - trajectory.J_cl) <= 5e-2


def test_gains_on_other_grid(problem_manager, scalar_memory, memory_loop):
    _, _, law, _ = memory_loop
    coarse = problem_manager.regrid(scalar_memory, 100)
    with pytest.raises(GridError):
        closedloop.simulate_feedback(coarse, law)


def test_evolution_identity(scalar_memory, memory_loop):
    _, _, law, trajectory = memory_loop
    state = closedloop.augmented_at(trajectory, 50)
    assert closedloop.evolution_apply(scalar_memory, law, 50, 50, state) is state


def test_evolution_rejects_backward_and_bad_state(scalar_memory, memory_loop):
    _, _, law, trajectory = memory_loop
    state = closedloop.augmented_at(trajectory, 50)
    with pytest.raises(GridError):
        closedloop.evolution_apply(scalar_memory, law, 50, 40, state)
    with pytest.raises(GridError):
        closedloop.evolution_apply(scalar_memory, law, 50, 201, state)
    with pytest.raises(DimensionMismatchError):
        closedloop.evolution_apply(scalar_memory, law, 60, 100, state)


def test_evolution_composes(scalar_memory, memory_loop):
    _, _, law, trajectory = memory_loop
    start = closedloop.augmented_at(trajectory, 0)
    middle = closedloop.evolution_apply(scalar_memory, law, 0, 100, start)
    end = closedloop.evolution_apply(scalar_memory, law, 100, 200, middle)
    scale = 1.0 + np.max(np.abs(trajectory.w))
    assert np.max(np.abs(middle.w - trajectory.w[100])) <= 1e-12 * scale
    assert np.max(np.abs(end.w - trajectory.w[-1])) <= 1e-12 * scale
    assert np.max(np.abs(end.path - trajectory.path)) <= 1e-12 * scale


@pytest.mark.asyncio
async def test_evolution_is_linear(scalar_memory, memory_loop):
    _, _, law, trajectory = memory_loop
    first = closedloop.augmented_at(trajectory, 50)
    rng = np.random.default_rng(1)
    second = AugmentedState(node=50, w=rng.standard_normal(1), path=rng.standard_normal((51, 1)))
    defect = await closedloop.linearity_defect(scalar_memory, law, 50, 150, first, second)
    assert defect <= 1e-10


def test_value_consistency(scalar_memory, memory_loop):
    _, solution, law, trajectory = memory_loop
    for node in (0, 100):
        gap = closedloop.value_consistency(scalar_memory, law, solution, node, trajectory)
        assert gap <= 1e-3 * (1.0 + trajectory.J_cl)
    with pytest.raises(GridError):
        closedloop.value_consistency(scalar_memory, law, solution, 250, trajectory)


def test_value_profile(scalar_memory, memory_loop):
    _, solution, _, trajectory = memory_loop
    profile = closedloop.value_profile(scalar_memory, solution, trajectory)
    assert list(profile) == [0, 100, 200]
    measured, predicted = profile[200]
    assert measured == 0.0 and predicted == 0.0
    values = [value for value, _ in profile.values()]
    assert values == sorted(values, reverse=True)


@pytest.fixture
def jump_loop(jump_instance):
    prop = propagator.build_propagator(jump_instance)
    solution = riccati.integrate_backward(jump_instance, prop, checkpoints=[25])
    law = riccati.feedback_gains(solution, jump_instance.B)
    trajectory = closedloop.simulate_feedback(jump_instance, law)
    return prop, solution, law, trajectory


def test_augmented_state_keeps_jump(jump_loop):
    _, _, _, trajectory = jump_loop
    assert closedloop.augmented_at(trajectory, 10).jumps == {}
    later = closedloop.augmented_at(trajectory, 25)
    assert list(later.jumps) == [10]
    assert later.jumps[10][0] == pytest.approx(1.0)


def test_evolution_composes_across_jump(jump_instance, jump_loop):
    _, _, law, trajectory = jump_loop
    start = closedloop.augmented_at(trajectory, 10)
    direct = closedloop.evolution_apply(jump_instance, law, 10, 40, start)
    middle = closedloop.evolution_apply(jump_instance, law, 10, 25, start)
    assert list(middle.jumps) == [10]
    composed = closedloop.evolution_apply(jump_instance, law, 25, 40, middle)
    scale = 1.0 + np.max(np.abs(direct.path))
    assert np.max(np.abs(composed.path - direct.path)) <= 1e-12 * scale
    assert np.max(np.abs(direct.path - trajectory.path)) <= 1e-12 * scale

    resumed = closedloop.augmented_at(trajectory, 25)
    tail = closedloop.evolution_apply(jump_instance, law, 25, 40, resumed)
    assert np.max(np.abs(tail.w - trajectory.w[-1])) <= 1e-12 * scale

    # the same samples without the jump describe a different memory
    forgotten = AugmentedState(node=25, w=middle.w, path=middle.path)
    drifted = closedloop.evolution_apply(jump_instance, law, 25, 40, forgotten)
    assert np.max(np.abs(drifted.path - direct.path)) > 1e-4


@pytest.mark.asyncio
async def test_evolution_is_linear_with_jumps(jump_instance, jump_loop):
    _, _, law, trajectory = jump_loop
    first = closedloop.augmented_at(trajectory, 15)
    rng = np.random.default_rng(2)
    second = AugmentedState(node=15, w=rng.standard_normal(1), path=rng.standard_normal((16, 1)))
    defect = await closedloop.linearity_defect(jump_instance, law, 15, 40, first, second)
    assert defect <= 1e-10


def test_closed_loop_after_jump(problem_manager, jump_data):
    jump_data["N"] = 80
    instance = problem_manager.parse(jump_data)
    prop = propagator.build_propagator(instance)
    solution = riccati.integrate_backward(instance, prop, checkpoints=[40])
    law = riccati.feedback_gains(solution, instance.B)
    trajectory = closedloop.simulate_feedback(instance, law)
    optimal = openloop.solve_open_loop(instance, prop)
    assert abs(trajectory.J_cl - optimal.J) <= 1e-2 * (1.0 + optimal.J)
    for node in (20, 40):
        gap = closedloop.value_consistency(instance, law, solution, node, trajectory)
        assert gap <= 1e-2 * (1.0 + trajectory.J_cl)
