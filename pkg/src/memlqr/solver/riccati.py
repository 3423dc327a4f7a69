"""
Backward integration of the coupled Riccati system.

At node ``i`` the unknowns are ``P0(t_i)``, ``P1(t_i, s_j)`` and ``P2(t_i, s_j, s_k)`` for
``j, k <= i``. The system is marched from ``P(T) = 0`` towards ``t = 0``; every step drops
the history entries with ``j > i``. :func:`rhs` returns the time derivative, so a backward
step reads ``P(i) = P(i+1) - h * rhs(i+1)``.
"""

from typing import Dict, Iterable, List, Literal, Optional, Sequence, Tuple

import numpy as np

from ..models.problem import ProblemInstance, TimeGrid
from ..models.solution import BigP, CostOperators, FeedbackLaw, RiccatiSolution
from ..models.tables import PropagatorTables
from ..utils import exceptions, logger

log = logger.LogMe("riccati")

Scheme = Literal["euler", "heun"]

SCHEME_ORDER = {"euler": 1, "heun": 2}


class RiccatiState:
    """
    Working slice of the Riccati unknowns at a single node.

    :param node: Grid index ``i``.
    :type node: int
    :param P0: Shape ``(n, n)``.
    :type P0: numpy.ndarray
    :param P1: Shape ``(i+1, n, n)``, indexed by history node ``j``.
    :type P1: numpy.ndarray
    :param P2: Shape ``(i+1, i+1, n, n)``, indexed ``[j, k]``.
    :type P2: numpy.ndarray
    """

    def __init__(self, node: int, P0: np.ndarray, P1: np.ndarray, P2: np.ndarray):
        self.node = node
        self.P0 = P0
        self.P1 = P1
        self.P2 = P2

    @classmethod
    def terminal(cls, N: int, n: int, P0: Optional[np.ndarray] = None) -> "RiccatiState":
        return cls(
            N,
            np.zeros((n, n)) if P0 is None else np.array(P0, dtype=float),
            np.zeros((N + 1, n, n)),
            np.zeros((N + 1, N + 1, n, n)),
        )

    def restrict(self, node: int) -> "RiccatiState":
        """Drop history entries beyond ``node``."""
        size = node + 1
        return RiccatiState(node, self.P0, self.P1[:size], self.P2[:size, :size])

    def step(self, h: float, *slopes: "RiccatiState") -> "RiccatiState":
        """``self - h * mean(slopes)`` on the index set of ``self``."""
        size = self.node + 1
        weight = h / len(slopes)
        P0, P1, P2 = self.P0.copy(), self.P1.copy(), self.P2.copy()
        for slope in slopes:
            P0 -= weight * slope.P0
            P1 -= weight * slope.P1[:size]
            P2 -= weight * slope.P2[:size, :size]
        return RiccatiState(self.node, P0, P1, P2)

    def is_finite(self) -> bool:
        return bool(
            np.all(np.isfinite(self.P0))
            and np.all(np.isfinite(self.P1))
            and np.all(np.isfinite(self.P2))
        )


def lagged_kernel(K: np.ndarray, i: int) -> np.ndarray:
    """``K(t_i - s_j)`` for ``j = 0..i``."""
    return K[i - np.arange(i + 1)]


def rhs_P0(
    P0: np.ndarray, P1_diagonal: np.ndarray, A: np.ndarray, BBT: np.ndarray, Q: np.ndarray
) -> np.ndarray:
    return -(A.T @ P0 + P0 @ A + Q - P0 @ BBT @ P0 + P1_diagonal + P1_diagonal.T)


def rhs_P1(
    P0: np.ndarray,
    P1: np.ndarray,
    P2_edge: np.ndarray,
    A: np.ndarray,
    BBT: np.ndarray,
    K_lag: np.ndarray,
) -> np.ndarray:
    return -(A.T @ P1 + P0 @ K_lag + P2_edge - (P0 @ BBT) @ P1)


def rhs_P2(P1: np.ndarray, BBT: np.ndarray, K_lag: np.ndarray) -> np.ndarray:
    """
    ``-(K(t_i - s_k)^T P1[j] + P1[k]^T K(t_i - s_j) - P1[k]^T B B^T P1[j])`` at ``[j, k]``.

    The transpose on the first kernel factor keeps ``P2[j, k] = P2[k, j]^T``; it is
    invisible for scalar kernels.
    """
    K_lag_T = np.swapaxes(K_lag, 1, 2)
    P1_T = np.swapaxes(P1, 1, 2)
    coupling = K_lag_T[None, :] @ P1[:, None] + P1_T[None, :] @ K_lag[:, None]
    quadratic = P1_T[None, :] @ (BBT @ P1)[:, None]
    return -(coupling - quadratic)


def rhs(
    state: RiccatiState, A: np.ndarray, B: np.ndarray, Q: np.ndarray, K: np.ndarray
) -> RiccatiState:
    """
    Time derivatives of the three Riccati unknowns at ``state.node``.

    :param state: Unknowns at node ``i``.
    :type state: RiccatiState
    :param A: Generator.
    :type A: numpy.ndarray
    :param B: Control operator.
    :type B: numpy.ndarray
    :param Q: Observation weight.
    :type Q: numpy.ndarray
    :param K: Kernel blocks ``(N+1, n, n)``.
    :type K: numpy.ndarray
    :return: ``(dP0, dP1, dP2)`` on the index set of ``state``.
    :rtype: RiccatiState
    """
    i = state.node
    BBT = B @ B.T
    K_lag = lagged_kernel(K, i)
    return RiccatiState(
        i,
        rhs_P0(state.P0, state.P1[i], A, BBT, Q),
        rhs_P1(state.P0, state.P1, state.P2[:, i], A, BBT, K_lag),
        rhs_P2(state.P1, BBT, K_lag),
    )


def _drift(state: RiccatiState) -> Dict[str, float]:
    P0 = state.P0
    scale = 1.0 + float(np.max(np.abs(P0)))
    P2 = state.P2
    P2_T = np.swapaxes(np.swapaxes(P2, 0, 1), 2, 3)
    return {
        "P0_symmetry": float(np.max(np.abs(P0 - P0.T))) / scale,
        "P0_psd": max(0.0, -float(np.linalg.eigvalsh(0.5 * (P0 + P0.T))[0])) / scale,
        "P2_symmetry": float(np.max(np.abs(P2 - P2_T), initial=0.0))
        / (1.0 + float(np.max(np.abs(P2), initial=0.0))),
    }


def stability_warning(A: np.ndarray, h: float, scheme: Scheme) -> Optional[str]:
    """Message when ``h`` lies outside the explicit stability interval of the linear part."""
    radius = float(np.max(np.abs(np.linalg.eigvals(A)), initial=0.0))
    if h * 2.0 * radius > 2.0:
        return (
            f"{scheme} step h={h:.3e} exceeds the stability bound 1/rho(A)={1.0 / radius:.3e}"
        )
    return None


def integrate_backward(
    instance: ProblemInstance,
    prop: Optional[PropagatorTables] = None,
    scheme: Scheme = "heun",
    checkpoints: Optional[Iterable[int]] = None,
    terminal: Optional[np.ndarray] = None,
) -> RiccatiSolution:
    """
    March the coupled Riccati system from ``T`` down to ``0``.

    ``P0`` and ``P1`` are kept at every node, as is the column ``P2(t_i, s_j, t_i)``. Full
    ``P2`` slices are kept at the checkpoint nodes, which always include ``0``, the initial
    node of the instance and ``N``.

    :param instance: The problem.
    :type instance: ProblemInstance
    :param prop: Propagator tables; only their kernel blocks are used.
    :type prop: Optional[PropagatorTables]
    :param scheme: ``euler`` (first order) or ``heun`` (second order).
    :type scheme: Scheme
    :param checkpoints: Extra nodes at which to keep the full ``P2`` slice.
    :type checkpoints: Optional[Iterable[int]]
    :param terminal: Terminal value of ``P0`` (zero by default).
    :type terminal: Optional[numpy.ndarray]
    :raises RiccatiBlowUpError: If a step produces nonfinite values.
    :raises GridError: If a checkpoint is not a grid node.
    :return: The solution with drift diagnostics and warnings.
    :rtype: RiccatiSolution
    """
    grid = instance.grid
    N, h, n = grid.N, grid.h, instance.n
    A, B, Q = instance.A, instance.B, instance.Q
    K = prop.kernel if prop is not None else instance.kernel_blocks()
    keep = {0, instance.tau_index, N} | set(checkpoints or ())
    if any(not 0 <= node <= N for node in keep):
        raise exceptions.GridError(reason=f"checkpoints must lie in [0, {N}]")

    warnings: List[str] = []
    message = stability_warning(A, h, scheme)
    if message:
        log.warning(message)
        warnings.append(message)

    state = RiccatiState.terminal(N, n, terminal)
    P0_all = np.zeros((N + 1, n, n))
    P1_all: List[Optional[np.ndarray]] = [None] * (N + 1)
    edge_all: List[Optional[np.ndarray]] = [None] * (N + 1)
    P2_kept: Dict[int, np.ndarray] = {}
    drift = {"P0_symmetry": 0.0, "P0_psd": 0.0, "P2_symmetry": 0.0}

    def record(current: RiccatiState):
        i = current.node
        P0_all[i] = current.P0
        P1_all[i] = current.P1.copy()
        edge_all[i] = current.P2[:, i].copy()
        if i in keep:
            P2_kept[i] = current.P2.copy()
        for key, value in _drift(current).items():
            drift[key] = max(drift[key], value)

    record(state)
    for i in range(N - 1, -1, -1):
        slope = rhs(state, A, B, Q, K)
        base = state.restrict(i)
        predicted = base.step(h, slope)
        if scheme == "euler":
            state = predicted
        else:
            corrector = rhs(predicted, A, B, Q, K)
            state = base.step(h, slope, corrector)
        if not state.is_finite():
            log.error(f"Riccati march produced nonfinite values at node {i}")
            raise exceptions.RiccatiBlowUpError(reason="nonfinite Riccati values", node=i)
        record(state)

    tol = instance.tolerances.drift_tol
    for key, value in drift.items():
        if value > tol:
            message = f"{key} drift {value:.3e} exceeds {tol:.1e}"
            log.warning(message)
            warnings.append(message)

    log.info(f"Riccati march ({scheme}, N={N}) finished: P0(0) max={np.max(np.abs(P0_all[0])):.6g}")
    return RiccatiSolution(
        grid=grid,
        scheme=scheme,
        P0=P0_all,
        P1=P1_all,
        P2_edge=edge_all,
        P2=P2_kept,
        drift=drift,
        warnings=warnings,
    )


def integrate_standard_riccati(
    A: np.ndarray,
    B: np.ndarray,
    Q: np.ndarray,
    grid: TimeGrid,
    scheme: Scheme = "heun",
    terminal: Optional[np.ndarray] = None,
) -> np.ndarray:
    """
    Memoryless reference: ``P' = -(A^T P + P A + Q - P B B^T P)`` backward from ``P(T)``.

    :return: ``P(t_i)`` for all nodes, shape ``(N+1, n, n)``.
    :rtype: numpy.ndarray
    """
    n = A.shape[0]
    BBT = B @ B.T
    zero = np.zeros((n, n))
    P = np.zeros((grid.N + 1, n, n))
    if terminal is not None:
        P[-1] = terminal
    h = grid.h
    for i in range(grid.N - 1, -1, -1):
        slope = rhs_P0(P[i + 1], zero, A, BBT, Q)
        predicted = P[i + 1] - h * slope
        if scheme == "euler":
            P[i] = predicted
        else:
            P[i] = P[i + 1] - 0.5 * h * (slope + rhs_P0(predicted, zero, A, BBT, Q))
    return P


def uniqueness_probe(
    instance: ProblemInstance,
    solution: RiccatiSolution,
    epsilons: Sequence[float] = (1e-6, 1e-4),
) -> Dict[float, float]:
    """
    Lipschitz constants ``C(eps) = |P0_eps(0) - P0(0)| / eps`` for terminal data ``eps * I``.

    :param instance: The problem.
    :type instance: ProblemInstance
    :param solution: Unperturbed solution.
    :type solution: RiccatiSolution
    :param epsilons: Perturbation sizes.
    :type epsilons: Sequence[float]
    :return: ``C`` per ``eps``.
    :rtype: Dict[float, float]
    """
    constants = {}
    for eps in epsilons:
        perturbed = integrate_backward(
            instance, scheme=solution.scheme, terminal=eps * np.eye(instance.n)
        )
        change = float(np.max(np.abs(perturbed.P0[0] - solution.P0[0])))
        constants[eps] = change / eps
        log.debug(f"Terminal perturbation {eps:.0e}: C={constants[eps]:.6g}")
    return constants


def assemble_bigP(solution: RiccatiSolution, node: int) -> BigP:
    """
    Block matrix of the augmented cost operator at a checkpoint node.

    With history weights ``w_j`` the blocks are ``P0``, ``w_j P1[j]`` against ``y_j`` and
    ``w_j w_k P2[j, k]`` between ``y_j`` and ``y_k``.

    :param solution: Riccati solution.
    :type solution: RiccatiSolution
    :param node: Checkpoint node.
    :type node: int
    :raises GridError: If ``node`` is not a checkpoint.
    :return: The operator.
    :rtype: BigP
    """
    if node not in solution.P2:
        raise exceptions.GridError(reason=f"node {node} is not a Riccati checkpoint")
    P0 = solution.P0[node]
    if node == 0:
        return BigP(node=0, matrix=P0, weights=np.zeros(1))
    n = P0.shape[0]
    size = node + 1
    weights = solution.grid.weights(0, node)
    P1 = solution.P1[node] * weights[:, None, None]
    P2 = solution.P2[node] * (weights[:, None] * weights[None, :])[:, :, None, None]
    history = np.swapaxes(P2, 0, 1).transpose(0, 2, 1, 3).reshape(size * n, size * n)
    cross = P1.transpose(1, 0, 2).reshape(n, size * n)
    matrix = np.block([[P0, cross], [cross.T, history]])
    return BigP(node=node, matrix=matrix, weights=weights)


def dre_tolerance(solution: RiccatiSolution, instance: ProblemInstance) -> float:
    """Scheme-order bound for :func:`dre_residual`."""
    order = SCHEME_ORDER[solution.scheme]
    P_norm = float(np.max(np.abs(solution.P0)))
    scale = (
        1.0
        + float(np.max(np.abs(instance.A)))
        + float(np.max(np.abs(instance.B))) ** 2 * (1.0 + P_norm)
        + float(np.max(np.abs(instance.kernel_blocks())))
    )
    return 10.0 * solution.grid.h**order * scale ** (order + 1) * (1.0 + P_norm)


def dre_residual(solution: RiccatiSolution, instance: ProblemInstance) -> Dict[str, float]:
    """
    Residuals of the three component equations with centered time differences.

    The ``P0`` and ``P1`` equations are checked at every interior node; the ``P2`` equation
    wherever both neighbours of a node are checkpoints. Missing equations are absent from
    the result.

    :param solution: Riccati solution.
    :type solution: RiccatiSolution
    :param instance: The problem it was computed for.
    :type instance: ProblemInstance
    :return: Max-norm residual per equation.
    :rtype: Dict[str, float]
    """
    grid = solution.grid
    h = grid.h
    A, Q = instance.A, instance.Q
    BBT = instance.B @ instance.B.T
    K = instance.kernel_blocks()
    residuals: Dict[str, float] = {}
    P0_res, P1_res, P2_res = 0.0, 0.0, None

    for i in range(1, grid.N):
        P0, P1 = solution.P0[i], solution.P1[i]
        K_lag = lagged_kernel(K, i)
        dP0 = (solution.P0[i + 1] - solution.P0[i - 1]) / (2.0 * h)
        P0_res = max(P0_res, float(np.max(np.abs(dP0 - rhs_P0(P0, P1[i], A, BBT, Q)))))

        dP1 = (solution.P1[i + 1][:i] - solution.P1[i - 1]) / (2.0 * h)
        slope = rhs_P1(P0, P1, solution.P2_edge[i], A, BBT, K_lag)[:i]
        P1_res = max(P1_res, float(np.max(np.abs(dP1 - slope))))

        if i - 1 in solution.P2 and i + 1 in solution.P2:
            dP2 = (solution.P2[i + 1][:i, :i] - solution.P2[i - 1]) / (2.0 * h)
            value = float(np.max(np.abs(dP2 - rhs_P2(P1, BBT, K_lag)[:i, :i])))
            P2_res = value if P2_res is None else max(P2_res, value)

    if grid.N > 1:
        residuals["P0"] = P0_res
        residuals["P1"] = P1_res
    if P2_res is not None:
        residuals["P2"] = P2_res
    return residuals


def feedback_gains(solution: RiccatiSolution, B: np.ndarray) -> FeedbackLaw:
    """
    ``G0[i] = B^T P0(t_i)`` and ``G1[i][j] = B^T P1(t_i, s_j)``.

    :param solution: Riccati solution.
    :type solution: RiccatiSolution
    :param B: Control operator.
    :type B: numpy.ndarray
    :return: Gains on the solution grid.
    :rtype: FeedbackLaw
    """
    BT = np.asarray(B).T
    return FeedbackLaw(
        grid=solution.grid,
        G0=BT @ solution.P0,
        G1=[BT @ P1 for P1 in solution.P1],
    )


def cross_route_gaps(
    solution: RiccatiSolution, ops_by_node: Dict[int, CostOperators]
) -> Dict[int, Tuple[float, float, float]]:
    """
    ``P0``, ``P1`` and ``P2`` differences against independently computed cost operators.

    :param solution: Riccati solution.
    :type solution: RiccatiSolution
    :param ops_by_node: Cost operators keyed by checkpoint node.
    :type ops_by_node: Dict[int, CostOperators]
    :return: Max-norm gaps per node.
    :rtype: Dict[int, Tuple[float, float, float]]
    """
    gaps = {}
    for node, ops in ops_by_node.items():
        mine = solution.cost_operators(node)
        gaps[node] = (
            float(np.max(np.abs(mine.P0 - ops.P0))),
            float(np.max(np.abs(mine.P1 - ops.P1))),
            float(np.max(np.abs(mine.P2 - ops.P2))),
        )
    return gaps
