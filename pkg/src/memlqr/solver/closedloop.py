"""
Closed-loop simulation under the Riccati feedback law and the evolution map it realizes.
"""

import asyncio
from typing import Dict, Literal, Optional, Tuple

import numpy as np

from ..models.problem import ProblemInstance
from ..models.solution import (
    AugmentedState,
    ClosedLoopTrajectory,
    FeedbackLaw,
    RiccatiSolution,
)
from ..utils import exceptions, logger
from .openloop import evaluate_cost
from .riccati import assemble_bigP
from .stepping import FeedbackFn, Jump, MemoryStepper, history_integral

log = logger.LogMe("closedloop")

Stepper = Literal["trapezoid", "euler"]


def _check_grid(instance: ProblemInstance, law: FeedbackLaw):
    if law.grid.N != instance.grid.N or law.grid.T != instance.grid.T:
        raise exceptions.GridError(
            reason=f"gains sampled with N={law.grid.N}, T={law.grid.T}; "
            f"instance has N={instance.grid.N}, T={instance.grid.T}"
        )


def feedback(law: FeedbackLaw, h: float) -> FeedbackFn:
    """
    ``u_i = -G0[i] w_i - sum_j w_j G1[i][j] y_j`` as a stepper callback.

    :param law: Gain tables.
    :type law: FeedbackLaw
    :param h: Step.
    :type h: float
    :return: Callback ``(i, w_i, path, jump) -> u_i``.
    :rtype: FeedbackFn
    """

    def control(i: int, w: np.ndarray, path: np.ndarray, jump: Jump) -> np.ndarray:
        return -law.G0[i] @ w - history_integral(law.G1[i], path, h, jump)

    return control


def simulate_feedback(
    instance: ProblemInstance, law: FeedbackLaw, scheme: Stepper = "trapezoid"
) -> ClosedLoopTrajectory:
    """
    Simulate the state equation on ``[tau, T]`` with the control given by the feedback law.

    The trapezoid stepper lags the control to a predictor state inside each implicit step
    and then corrects it once.

    :param instance: The problem.
    :type instance: ProblemInstance
    :param law: Gains on the instance grid.
    :type law: FeedbackLaw
    :param scheme: Inner stepper.
    :type scheme: Stepper
    :raises GridError: If the gains live on another grid.
    :raises SimulationError: If the state blows up.
    :return: Closed-loop trajectory with its cost ``J_cl``.
    :rtype: ClosedLoopTrajectory
    """
    _check_grid(instance, law)
    grid, p = instance.grid, instance.tau_index
    stepper = MemoryStepper(instance, scheme=scheme)
    w, u, path = stepper.run(
        p, instance.init.xi0, instance.init.path, grid.N, feedback(law, grid.h)
    )
    cost = evaluate_cost(w, u, instance.Q, grid)
    log.info(f"Closed-loop simulation ({scheme}): J_cl={cost:.10g}")
    return ClosedLoopTrajectory(
        tau_index=p, t=grid.nodes[p:], w=w, u=u, path=path, cost=cost, scheme=scheme
    )


def evolution_apply(
    instance: ProblemInstance,
    law: FeedbackLaw,
    j: int,
    i: int,
    state: AugmentedState,
    scheme: Stepper = "trapezoid",
) -> AugmentedState:
    """
    Carry an augmented state from node ``j`` to node ``i`` along the closed loop.

    :param instance: The problem.
    :type instance: ProblemInstance
    :param law: Gains on the instance grid.
    :type law: FeedbackLaw
    :param j: Start node.
    :type j: int
    :param i: Target node, ``i >= j``.
    :type i: int
    :param state: Augmented state at node ``j``.
    :type state: AugmentedState
    :param scheme: Inner stepper.
    :type scheme: Stepper
    :raises DimensionMismatchError: If ``state`` does not sit at node ``j`` or has the wrong size.
    :raises GridError: If ``i < j`` or ``i > N``.
    :return: Augmented state at node ``i``.
    :rtype: AugmentedState
    """
    _check_grid(instance, law)
    if state.node != j:
        raise exceptions.DimensionMismatchError(
            field="state.node", expected=j, received=state.node
        )
    if state.w.shape != (instance.n,):
        raise exceptions.DimensionMismatchError(
            field="state.w", expected=(instance.n,), received=state.w.shape
        )
    if not j <= i <= instance.grid.N:
        raise exceptions.GridError(reason=f"cannot evolve from node {j} to node {i}")
    if i == j:
        return state
    jumps = state.discontinuities()
    stepper = MemoryStepper(instance, scheme=scheme)
    w, _, path = stepper.run(
        j, state.w, state.path, i, feedback(law, instance.h), jump=Jump.from_dict(jumps)
    )
    return AugmentedState(node=i, w=w[-1], path=path, jumps=jumps)


async def linearity_defect(
    instance: ProblemInstance,
    law: FeedbackLaw,
    j: int,
    i: int,
    first: AugmentedState,
    second: AugmentedState,
    alpha: float = 2.0,
    beta: float = -0.5,
    scheme: Stepper = "trapezoid",
) -> float:
    """
    ``|Phi(alpha X + beta Y) - alpha Phi(X) - beta Phi(Y)|`` in max norm.

    The three trajectories run concurrently on the shared gains.

    :return: Max-norm defect over the state and the path.
    :rtype: float
    """
    combined = first.combine(second, alpha, beta)
    results = await asyncio.gather(
        *(
            asyncio.to_thread(evolution_apply, instance, law, j, i, state, scheme)
            for state in (combined, first, second)
        )
    )
    image, image_x, image_y = results
    expected = image_x.combine(image_y, alpha, beta)
    return float(
        max(
            np.max(np.abs(image.w - expected.w)),
            np.max(np.abs(image.path - expected.path)),
        )
    )


def augmented_at(trajectory: ClosedLoopTrajectory, node: int) -> AugmentedState:
    """The augmented state of a trajectory at ``node >= tau``, keeping the jump at ``tau``."""
    p = trajectory.tau_index
    offset = node - p
    jumps = {}
    if node > p and np.any(trajectory.w[0] != trajectory.path[p]):
        jumps[p] = trajectory.w[0] - trajectory.path[p]
    return AugmentedState(
        node=node, w=trajectory.w[offset], path=trajectory.path[: node + 1], jumps=jumps
    )


def cost_to_go(
    instance: ProblemInstance, trajectory: ClosedLoopTrajectory, node: int
) -> float:
    """Trapezoid cost of the trajectory on ``[t_node, T]``."""
    offset = node - trajectory.tau_index
    return evaluate_cost(trajectory.w[offset:], trajectory.u[offset:], instance.Q, instance.grid)


def value_consistency(
    instance: ProblemInstance,
    law: FeedbackLaw,
    solution: RiccatiSolution,
    node: int,
    trajectory: Optional[ClosedLoopTrajectory] = None,
) -> float:
    """
    ``|cost-to-go on [t_node, T] - <P(t_node) X, X>|`` along the closed loop.

    :param instance: The problem.
    :type instance: ProblemInstance
    :param law: Gains derived from ``solution``.
    :type law: FeedbackLaw
    :param solution: Riccati solution with ``node`` among its checkpoints.
    :type solution: RiccatiSolution
    :param node: Node in ``[tau, N]``.
    :type node: int
    :param trajectory: Closed-loop trajectory, simulated when omitted.
    :type trajectory: Optional[ClosedLoopTrajectory]
    :return: The absolute gap.
    :rtype: float
    """
    if not instance.tau_index <= node <= instance.grid.N:
        raise exceptions.GridError(reason=f"node {node} outside [tau, N]")
    trajectory = trajectory or simulate_feedback(instance, law)
    measured = cost_to_go(instance, trajectory, node)
    predicted = assemble_bigP(solution, node).quadratic_form(augmented_at(trajectory, node))
    return abs(measured - predicted)


def value_profile(
    instance: ProblemInstance,
    solution: RiccatiSolution,
    trajectory: ClosedLoopTrajectory,
) -> Dict[int, Tuple[float, float]]:
    """
    Measured cost-to-go and ``<P X, X>`` at every checkpoint node on ``[tau, T]``.

    :return: ``{node: (measured, quadratic form)}`` in node order.
    :rtype: Dict[int, Tuple[float, float]]
    """
    profile = {}
    for node in solution.checkpoints:
        if node < trajectory.tau_index:
            continue
        state = augmented_at(trajectory, node)
        profile[node] = (
            cost_to_go(instance, trajectory, node),
            assemble_bigP(solution, node).quadratic_form(state),
        )
    return profile
