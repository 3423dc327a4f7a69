"""
Open-loop optimal control by discretize-then-optimize.

The discrete cost is the trapezoid rule applied to ``<Qw, w> + |u|^2`` on ``[t_p, T]`` and
the state is ``w = E + L u`` with ``E`` the free response. The normal equations
``(W_u + L^T W_x Qbar L) u = -L^T W_x Qbar E`` are the exact gradient of that cost.
"""

from typing import Literal, Optional, Tuple

import numpy as np
from scipy import linalg

from ..models.problem import InitialData, ProblemInstance, TimeGrid
from ..models.solution import (
    AugmentedState,
    DiscreteInputToState,
    OpenLoopSolution,
    Trajectory,
)
from ..models.tables import PropagatorTables
from ..utils import exceptions, logger
from .propagator import rebase
from .stepping import MemoryStepper

log = logger.LogMe("openloop")


def assemble_L(prop: PropagatorTables, B: np.ndarray, tau_index: int) -> DiscreteInputToState:
    """
    Block lower-triangular input-to-state matrix on ``[t_p, T]``.

    Every diagonal block is ``(h/2) F(t_i, t_i) B``, the start node included, so the row of
    ``u(t_p)`` in the normal equations sees ``Q w(t_p)`` with its trapezoid weight.

    :param prop: Propagator tables.
    :type prop: PropagatorTables
    :param B: Control operator.
    :type B: numpy.ndarray
    :param tau_index: Initial node ``p``.
    :type tau_index: int
    :return: The operator with its quadrature weights.
    :rtype: DiscreteInputToState
    """
    grid = prop.grid
    n, m = B.shape
    count = grid.N - tau_index + 1
    FB = prop.F.blocks[:count] @ B
    blocks = np.zeros((count, count, n, m))
    # the start node carries the half-weight self term like every other diagonal block
    blocks[0, 0] = 0.5 * grid.h * FB[0]
    for a in range(1, count):
        weights = grid.weights(0, a)
        blocks[a, : a + 1] = FB[a::-1] * weights[:, None, None]
    L = blocks.transpose(0, 2, 1, 3).reshape(count * n, count * m)
    return DiscreteInputToState(
        tau_index=tau_index, n=n, m=m, L=L, weights=grid.weights(tau_index, grid.N)
    )


def assemble_E(prop: PropagatorTables, init: InitialData) -> np.ndarray:
    """
    Free response ``E_i = F(t_i, tau) xi0 + int_0^tau M(t_i, s, tau) xi(s) ds`` on ``[tau, T]``.

    :param prop: Tables whose ``G``/``M`` are based at ``init.tau_index``.
    :type prop: PropagatorTables
    :param init: Initial data.
    :type init: InitialData
    :return: Samples of shape ``(N-p+1, n)``.
    :rtype: numpy.ndarray
    """
    p = init.tau_index
    prop = rebase(prop, p)
    count = prop.grid.N - p + 1
    free = prop.F.blocks[:count] @ init.xi0
    if p > 0:
        weights = prop.grid.weights(0, p)
        free = free + np.einsum("j,ajxy,jy->ax", weights, prop.gm.M_history(), init.history)
    return free


def weighted_Q(operator: DiscreteInputToState, Q: np.ndarray, x: np.ndarray) -> np.ndarray:
    """
    Apply ``W_x Qbar`` to stacked state columns.

    :param operator: Supplies the weights.
    :type operator: DiscreteInputToState
    :param Q: Observation weight.
    :type Q: numpy.ndarray
    :param x: Array of shape ``(count * n, k)``.
    :type x: numpy.ndarray
    :return: Array of the same shape.
    :rtype: numpy.ndarray
    """
    n, count = operator.n, operator.count
    blocks = x.reshape(count, n, -1)
    return (operator.weights[:, None, None] * (Q @ blocks)).reshape(count * n, -1)


class NormalEquations:
    """
    The symmetric positive definite system ``W_u + L^T W_x Qbar L``, factorized once.

    :param operator: Discrete input-to-state operator.
    :type operator: DiscreteInputToState
    :param Q: Observation weight.
    :type Q: numpy.ndarray
    :param method: ``cholesky`` (default) or ``lu``.
    :type method: Literal["cholesky", "lu"]
    """

    def __init__(
        self,
        operator: DiscreteInputToState,
        Q: np.ndarray,
        method: Literal["cholesky", "lu"] = "cholesky",
    ):
        self.log = logger.LogMe(self.__class__.__name__)
        self.operator = operator
        self.Q = Q
        self.method = method
        L = operator.L
        control_weights = np.repeat(operator.weights, operator.m)
        self.matrix = np.diag(control_weights) + L.T @ weighted_Q(operator, Q, L)
        self.matrix = 0.5 * (self.matrix + self.matrix.T)
        self.condition = float(np.linalg.cond(self.matrix))
        try:
            if method == "cholesky":
                self.factor = linalg.cho_factor(self.matrix, lower=True)
            else:
                self.factor = linalg.lu_factor(self.matrix)
        except (linalg.LinAlgError, ValueError) as e:
            self.log.error(f"Factorization failed: {e}")
            raise exceptions.FactorizationError(reason=str(e), condition=self.condition)
        if self.condition > 1e12:
            self.log.warning(f"Normal equations are ill-conditioned ({self.condition:.3e})")

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        if self.method == "cholesky":
            return linalg.cho_solve(self.factor, rhs)
        return linalg.lu_solve(self.factor, rhs)

    def gradient_rhs(self, x: np.ndarray) -> np.ndarray:
        """``-L^T W_x Qbar x`` for stacked state columns ``x``."""
        return -self.operator.L.T @ weighted_Q(self.operator, self.Q, x)

    def coercivity_margin(self) -> float:
        """``lambda_min / min(weights)``; at least one for a valid system."""
        smallest = float(np.linalg.eigvalsh(self.matrix)[0])
        return smallest / float(np.min(self.operator.weights))


def evaluate_cost(w: np.ndarray, u: np.ndarray, Q: np.ndarray, grid: TimeGrid) -> float:
    """
    Trapezoid rule for ``int_tau^T <Q w, w> + |u|^2 dt``.

    The initial node is inferred from the number of samples (``N + 1 - len(w)``).

    :param w: State samples, shape ``(N-p+1, n)``.
    :type w: numpy.ndarray
    :param u: Control samples, shape ``(N-p+1, m)``.
    :type u: numpy.ndarray
    :param Q: Observation weight.
    :type Q: numpy.ndarray
    :param grid: The time grid.
    :type grid: TimeGrid
    :return: The cost; a negative value is logged, not clamped.
    :rtype: float
    """
    w = np.atleast_2d(np.asarray(w, dtype=float))
    u = np.atleast_2d(np.asarray(u, dtype=float))
    if w.shape[0] != u.shape[0]:
        raise exceptions.DimensionMismatchError(
            field="u", expected=w.shape[0], received=u.shape[0]
        )
    p = grid.N + 1 - w.shape[0]
    weights = grid.weights(p, grid.N)
    integrand = np.einsum("ij,jk,ik->i", w, Q, w) + np.sum(u * u, axis=1)
    cost = float(weights @ integrand)
    if cost < 0.0:
        log.warning(f"Negative trapezoid cost {cost:.3e}")
    return cost


def solve_open_loop(
    instance: ProblemInstance,
    prop: PropagatorTables,
    method: Literal["cholesky", "lu"] = "cholesky",
) -> OpenLoopSolution:
    """
    Solve the discrete normal equations for the optimal control on ``[tau, T]``.

    :param instance: The problem.
    :type instance: ProblemInstance
    :param prop: Propagator tables.
    :type prop: PropagatorTables
    :param method: Factorization of the normal equations.
    :type method: Literal["cholesky", "lu"]
    :raises FactorizationError: If the system cannot be factorized.
    :return: Optimal pair and diagnostics.
    :rtype: OpenLoopSolution
    """
    grid, p = instance.grid, instance.tau_index
    free = assemble_E(prop, instance.init)
    t = grid.nodes[p:]
    if p == grid.N:
        zero_u = np.zeros((1, instance.m))
        return OpenLoopSolution(
            tau_index=p,
            t=t,
            u_hat=zero_u,
            w_hat=free,
            free_response=free,
            J=0.0,
            J_free=0.0,
            gram_condition=1.0,
            residual=0.0,
            coercivity_margin=1.0,
            method=method,
        )

    operator = assemble_L(prop, instance.B, p)
    system = NormalEquations(operator, instance.Q, method=method)
    rhs = system.gradient_rhs(free.reshape(-1, 1))[:, 0]
    u_flat = system.solve(rhs)
    residual = float(
        np.linalg.norm(system.matrix @ u_flat - rhs) / (1.0 + np.linalg.norm(rhs))
    )
    w_hat = free + (operator.L @ u_flat).reshape(-1, instance.n)
    u_hat = u_flat.reshape(-1, instance.m)
    J = evaluate_cost(w_hat, u_hat, instance.Q, grid)
    J_free = evaluate_cost(free, np.zeros_like(u_hat), instance.Q, grid)
    log.info(f"Open-loop solve: J={J:.10g}, cond={system.condition:.3e}, residual={residual:.2e}")
    return OpenLoopSolution(
        tau_index=p,
        t=t,
        u_hat=u_hat,
        w_hat=w_hat,
        free_response=free,
        J=J,
        J_free=J_free,
        gram_condition=system.condition,
        residual=residual,
        coercivity_margin=system.coercivity_margin(),
        method=method,
    )


def represent_state(
    prop: PropagatorTables, instance: ProblemInstance, u: np.ndarray
) -> np.ndarray:
    """State ``E + L u`` from the representation formula."""
    free = assemble_E(prop, instance.init)
    if instance.tau_index == instance.grid.N:
        return free
    operator = assemble_L(prop, instance.B, instance.tau_index)
    return free + (operator.L @ np.asarray(u).reshape(-1)).reshape(-1, instance.n)


def simulate_direct(
    instance: ProblemInstance,
    u: np.ndarray,
    scheme: Literal["trapezoid", "euler"] = "trapezoid",
) -> Trajectory:
    """
    Integrate the state equation directly for given control samples.

    :param instance: The problem.
    :type instance: ProblemInstance
    :param u: Control samples on ``[tau, T]``, shape ``(N-p+1, m)``.
    :type u: numpy.ndarray
    :param scheme: Inner stepper; ``trapezoid`` is second order.
    :type scheme: Literal["trapezoid", "euler"]
    :raises SimulationError: If the implicit step is singular or the state blows up.
    :return: The trajectory and its cost.
    :rtype: Trajectory
    """
    grid, p = instance.grid, instance.tau_index
    u = np.asarray(u, dtype=float).reshape(grid.N - p + 1, instance.m)
    stepper = MemoryStepper(instance, scheme=scheme)
    w, u, path = stepper.run(p, instance.init.xi0, instance.init.path, grid.N, u)
    return Trajectory(
        tau_index=p,
        t=grid.nodes[p:],
        w=w,
        u=u,
        path=path,
        cost=evaluate_cost(w, u, instance.Q, grid),
    )


def optimality_probe(
    instance: ProblemInstance,
    solution: OpenLoopSolution,
    v: np.ndarray,
    eps: float,
    prop: Optional[PropagatorTables] = None,
    oracle: Literal["representation", "direct"] = "representation",
) -> float:
    """
    Central difference ``(J(u + eps v) - J(u - eps v)) / (2 eps)``.

    With ``representation`` the states come from ``E + L u`` and the estimate vanishes to
    solver tolerance at the discrete minimizer. With ``direct`` they come from
    :func:`simulate_direct` and agree only up to the discretization gap.

    :param instance: The problem.
    :type instance: ProblemInstance
    :param solution: Open-loop solution to probe around.
    :type solution: OpenLoopSolution
    :param v: Direction, shape of ``solution.u_hat``.
    :type v: numpy.ndarray
    :param eps: Step, ``> 0``.
    :type eps: float
    :param prop: Propagator tables, required for ``representation``.
    :type prop: Optional[PropagatorTables]
    :param oracle: State map used to evaluate the cost.
    :type oracle: Literal["representation", "direct"]
    :return: Directional derivative estimate.
    :rtype: float
    """
    if eps <= 0.0:
        raise ValueError("eps must be positive")
    v = np.asarray(v, dtype=float).reshape(solution.u_hat.shape)

    def cost(u: np.ndarray) -> float:
        if oracle == "direct":
            return simulate_direct(instance, u).cost
        return evaluate_cost(represent_state(prop, instance, u), u, instance.Q, instance.grid)

    if oracle == "representation" and prop is None:
        raise ValueError("the representation oracle needs propagator tables")
    plus = cost(solution.u_hat + eps * v)
    minus = cost(solution.u_hat - eps * v)
    return (plus - minus) / (2.0 * eps)


def representation_gap(
    instance: ProblemInstance, prop: PropagatorTables, solution: OpenLoopSolution
) -> Tuple[float, float]:
    """
    Gap between the representation state and direct stepping for the optimal control.

    The start-node sample of ``E + L u`` carries the half-weight self term of the diagonal
    block while stepping starts from ``xi0``, so the comparison runs over the later nodes.

    :return: ``(max-norm gap, gap / h^2)``.
    :rtype: Tuple[float, float]
    """
    stepped = simulate_direct(instance, solution.u_hat)
    gap = float(np.max(np.abs(stepped.w[1:] - solution.w_hat[1:]), initial=0.0))
    return gap, gap / instance.h**2


def restart_state(
    instance: ProblemInstance, solution: OpenLoopSolution, node: int
) -> AugmentedState:
    """
    The optimal process at ``node`` as an augmented state.

    The path is the history up to ``tau`` followed by the optimal state. When ``xi0``
    differs from the last history sample the difference is kept as a jump at ``tau``.
    """
    p, init = instance.tau_index, instance.init
    path = np.concatenate([init.path[: p + 1], solution.w_hat[1 : node - p + 1]])
    jumps = {}
    if node > p and np.any(init.xi0 != init.path[p]):
        jumps[p] = init.xi0 - init.path[p]
    w = init.xi0 if node == p else solution.w_hat[node - p]
    return AugmentedState(node=node, w=w, path=path, jumps=jumps)


def transition_residual(
    instance: ProblemInstance,
    prop: PropagatorTables,
    solution: OpenLoopSolution,
    tau1_index: int,
) -> float:
    """
    Restart the optimal process at ``tau1_index`` and compare the tails.

    The new initial data is ``y0 = w_hat(tau1)`` and the history is the memory path of
    :func:`restart_state` with its jump folded into the samples. Controls are compared from
    ``tau1`` on and states after it, where neither sample carries a start-node self term.

    :return: Max-norm difference of control and state tails.
    :rtype: float
    """
    p = instance.tau_index
    if not p <= tau1_index < instance.grid.N:
        raise exceptions.GridError(reason=f"restart node {tau1_index} outside [{p}, N)")
    state = restart_state(instance, solution, tau1_index)
    restarted = instance.with_initial_data(tau1_index, state.w, state.memory_path())
    tail = solve_open_loop(restarted, rebase(prop, tau1_index))
    offset = tau1_index - p
    du = np.max(np.abs(tail.u_hat - solution.u_hat[offset:]))
    dw = np.max(np.abs(tail.w_hat[1:] - solution.w_hat[offset + 1 :]))
    return float(max(du, dw))
