"""
Feedback synthesis from the integral definitions of the cost operators.

For an initial node ``t`` the optimal control and state kernels ``Psi_1, Psi_2, Z_1, Z_2``
are obtained from the same normal equations as the open-loop solve, with the free-response
kernels ``F(., t)`` and ``M(., s, t)`` as right-hand sides. No Riccati integration is involved.
"""

import asyncio
from typing import Dict, List, Literal, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg

from ..models.problem import InitialData, ProblemInstance, TimeGrid
from ..models.solution import CostOperators, OpenLoopSolution, PsiTables, PsiZTables
from ..models.tables import PropagatorTables
from ..utils import logger
from .openloop import NormalEquations, assemble_L, weighted_Q
from .propagator import rebase
from .stepping import Jump, history_integral

log = logger.LogMe("synthesis")


class NodeContext:
    """
    Tables and the factorized normal equations re-based at node ``t_index``.

    :param prop: Propagator tables of the instance.
    :type prop: PropagatorTables
    :param instance: The problem.
    :type instance: ProblemInstance
    :param t_index: The node playing the initial time.
    :type t_index: int
    """

    def __init__(self, prop: PropagatorTables, instance: ProblemInstance, t_index: int):
        self.t_index = t_index
        self.prop = rebase(prop, t_index)
        self.n, self.m = instance.n, instance.m
        self.Q = instance.Q
        self.count = prop.grid.N - t_index + 1
        self.F_stack = self.prop.F.blocks[: self.count]
        self.M_stack = self.prop.gm.M_history()
        self.operator = assemble_L(self.prop, instance.B, t_index)
        self.system = NormalEquations(self.operator, instance.Q) if self.count > 1 else None

    @property
    def terminal(self) -> bool:
        return self.system is None

    @property
    def weights(self) -> np.ndarray:
        return self.operator.weights

    def stacked_F(self) -> np.ndarray:
        """``F(., t)`` as columns, shape ``(count n, n)``."""
        return self.F_stack.reshape(self.count * self.n, self.n)

    def stacked_M(self) -> np.ndarray:
        """``M(., s, t)`` for all ``s`` as columns, shape ``(count n, (t+1) n)``."""
        history = self.M_stack.shape[1]
        return self.M_stack.transpose(0, 2, 1, 3).reshape(self.count * self.n, history * self.n)

    def unstack_state(self, columns: np.ndarray) -> np.ndarray:
        """Inverse of :meth:`stacked_M` for state-valued kernels."""
        history = columns.shape[1] // self.n
        return columns.reshape(self.count, self.n, history, self.n).transpose(0, 2, 1, 3)


def compute_psi(
    prop: PropagatorTables,
    instance: ProblemInstance,
    t_index: int,
    context: Optional[NodeContext] = None,
) -> PsiTables:
    """
    ``Psi_1(., t) = -Lambda^{-1} L^* Q F(., t)`` and ``Psi_2(., s, t)`` likewise with ``M``.

    One factorization serves all ``n + n (t+1)`` right-hand sides.

    :param prop: Propagator tables.
    :type prop: PropagatorTables
    :param instance: The problem (supplies ``B`` and ``Q``).
    :type instance: ProblemInstance
    :param t_index: Node playing the initial time.
    :type t_index: int
    :param context: Pre-built node context.
    :type context: Optional[NodeContext]
    :return: ``psi1`` of shape ``(count, m, n)`` and ``psi2`` of shape ``(count, t+1, m, n)``.
    :rtype: PsiTables
    """
    ctx = context or NodeContext(prop, instance, t_index)
    n, m, count = ctx.n, ctx.m, ctx.count
    history = t_index + 1
    if ctx.terminal:
        return PsiTables(
            t_index=t_index,
            psi1=np.zeros((count, m, n)),
            psi2=np.zeros((count, history, m, n)),
        )
    system = ctx.system
    psi1 = system.solve(system.gradient_rhs(ctx.stacked_F())).reshape(count, m, n)
    psi2 = system.solve(system.gradient_rhs(ctx.stacked_M()))
    psi2 = psi2.reshape(count, m, history, n).transpose(0, 2, 1, 3)
    return PsiTables(t_index=t_index, psi1=psi1, psi2=psi2)


def compute_Z(
    prop: PropagatorTables,
    instance: ProblemInstance,
    psi: PsiTables,
    route: Literal["definition", "projection"] = "definition",
    context: Optional[NodeContext] = None,
) -> PsiZTables:
    """
    Optimal state kernels ``Z_1`` and ``Z_2``.

    ``definition`` adds ``L Psi`` to the free-response kernels; ``projection`` applies
    ``I - L Lambda^{-1} L^* Q`` to them as an explicit matrix.

    :param prop: Propagator tables.
    :type prop: PropagatorTables
    :param instance: The problem.
    :type instance: ProblemInstance
    :param psi: Control kernels at the same node.
    :type psi: PsiTables
    :param route: Assembly route.
    :type route: Literal["definition", "projection"]
    :param context: Pre-built node context.
    :type context: Optional[NodeContext]
    :return: All four kernels.
    :rtype: PsiZTables
    """
    t_index = psi.t_index
    ctx = context or NodeContext(prop, instance, t_index)
    n, count = ctx.n, ctx.count
    F_cols, M_cols = ctx.stacked_F(), ctx.stacked_M()
    L = ctx.operator.L

    if ctx.terminal:
        z1_cols, z2_cols = F_cols, M_cols
    elif route == "definition":
        psi1_cols = psi.psi1.reshape(count * ctx.m, n)
        psi2_cols = psi.psi2.transpose(0, 2, 1, 3).reshape(count * ctx.m, -1)
        z1_cols = F_cols + L @ psi1_cols
        z2_cols = M_cols + L @ psi2_cols
    else:
        gain = ctx.system.solve(-L.T @ weighted_Q(ctx.operator, ctx.Q, np.eye(count * n)))
        projection = np.eye(count * n) + L @ gain
        z1_cols = projection @ F_cols
        z2_cols = projection @ M_cols

    return PsiZTables(
        t_index=t_index,
        psi1=psi.psi1,
        psi2=psi.psi2,
        z1=z1_cols.reshape(count, n, n),
        z2=ctx.unstack_state(z2_cols),
    )


def _weights_at(tables: PsiZTables, grid: TimeGrid) -> np.ndarray:
    return grid.weights(tables.t_index, grid.N)


def cost_ops_definitional(tables: PsiZTables, Q: np.ndarray, grid: TimeGrid) -> CostOperators:
    """
    ``P0 = int Psi_1^T Psi_1 + Z_1^T Q Z_1``, ``P1(s) = int Psi_1^T Psi_2(s) + Z_1^T Q Z_2(s)``,
    ``P2(s, q) = int Psi_2(q)^T Psi_2(s) + Z_2(q)^T Q Z_2(s)`` over ``[t, T]``.
    """
    w = _weights_at(tables, grid)
    psi1, psi2, z1, z2 = tables.psi1, tables.psi2, tables.z1, tables.z2
    P0 = np.einsum("a,amx,amy->xy", w, psi1, psi1) + np.einsum(
        "a,aix,ij,ajy->xy", w, z1, Q, z1
    )
    P1 = np.einsum("a,amx,asmy->sxy", w, psi1, psi2) + np.einsum(
        "a,aix,ij,asjy->sxy", w, z1, Q, z2
    )
    P2 = np.einsum("a,aqmx,asmy->sqxy", w, psi2, psi2) + np.einsum(
        "a,aqix,ij,asjy->sqxy", w, z2, Q, z2, optimize=True
    )
    return CostOperators(t_index=tables.t_index, P0=P0, P1=P1, P2=P2)


def cost_ops_reduced(
    prop: PropagatorTables, tables: PsiZTables, Q: np.ndarray
) -> CostOperators:
    """
    ``P0 = int F^T Q Z_1``, ``P1(s) = int F^T Q Z_2(s)``, ``P2(s, q) = int M(q)^T Q Z_2(s)``.
    """
    t_index = tables.t_index
    grid = prop.grid
    based = rebase(prop, t_index)
    count = grid.N - t_index + 1
    F = based.F.blocks[:count]
    M = based.gm.M_history()
    w = _weights_at(tables, grid)
    P0 = np.einsum("aix,ij,ajy->xy", w[:, None, None] * F, Q, tables.z1)
    P1 = np.einsum("aix,ij,asjy->sxy", w[:, None, None] * F, Q, tables.z2)
    P2 = np.einsum(
        "aqix,ij,asjy->sqxy", w[:, None, None, None] * M, Q, tables.z2, optimize=True
    )
    return CostOperators(t_index=t_index, P0=P0, P1=P1, P2=P2)


def key_lemma_residuals(
    prop: PropagatorTables, tables: PsiZTables, Q: np.ndarray
) -> Tuple[float, float, float]:
    """
    Max-norm differences between the definitional and reduced cost operators.

    :return: Residuals for ``P0``, ``P1`` and ``P2``.
    :rtype: Tuple[float, float, float]
    """
    full = cost_ops_definitional(tables, Q, prop.grid)
    reduced = cost_ops_reduced(prop, tables, Q)
    return (
        float(np.max(np.abs(full.P0 - reduced.P0))),
        float(np.max(np.abs(full.P1 - reduced.P1))),
        float(np.max(np.abs(full.P2 - reduced.P2))),
    )


def adjoint_residuals(
    prop: PropagatorTables,
    instance: ProblemInstance,
    tables: PsiZTables,
    seed: int = 0,
    g_scale: float = 1.0,
    history_nodes: Optional[Sequence[int]] = None,
) -> Dict[str, float]:
    """
    Compare weighted-transpose actions of the four kernel operators with closed formulas.

    The operators act pointwise-then-solve: ``Psi_1 f = -Lambda^{-1} L^* Q [F(., t) f]`` and
    ``Z_1 f = F(., t) f + L Psi_1 f``, likewise for ``Psi_2``/``Z_2`` with ``M(., s, t)``.
    Their adjoints in the trapezoid inner products are
    ``Psi^* g = -F^T Q [L Lambda^{-1} g]`` and ``Z^* g = F^T g + Psi^*[L^* g]``.

    :param prop: Propagator tables.
    :type prop: PropagatorTables
    :param instance: The problem.
    :type instance: ProblemInstance
    :param tables: Kernels at the node.
    :type tables: PsiZTables
    :param seed: Seed of the random test functions.
    :type seed: int
    :param g_scale: Scale of the test functions (zero gives zero residuals).
    :type g_scale: float
    :param history_nodes: History nodes ``s`` for ``Psi_2``/``Z_2``; ends and middle by default.
    :type history_nodes: Optional[Sequence[int]]
    :return: Relative residual per operator.
    :rtype: Dict[str, float]
    """
    t_index = tables.t_index
    ctx = NodeContext(prop, instance, t_index)
    names = ("Psi1*", "Psi2*", "Z1*", "Z2*")
    if ctx.terminal:
        return {name: 0.0 for name in names}
    n, m, count = ctx.n, ctx.m, ctx.count
    rng = np.random.default_rng(seed)
    g_u = g_scale * rng.standard_normal(count * m)
    g_x = g_scale * rng.standard_normal(count * n)

    w_state = np.repeat(ctx.weights, n)
    w_control = np.repeat(ctx.weights, m)
    L = ctx.operator.L
    Qbar = linalg.block_diag(*([ctx.Q] * count))
    system = ctx.system

    def relative(a: np.ndarray, b: np.ndarray) -> float:
        return float(np.max(np.abs(a - b), initial=0.0) / (1.0 + np.max(np.abs(b), initial=0.0)))

    def check(kernel: np.ndarray) -> Tuple[float, float]:
        diag = linalg.block_diag(*kernel)
        S = system.solve(system.gradient_rhs(diag))
        Z = diag + L @ S
        psi_action = (S.T @ (w_control * g_u)) / w_state
        psi_formula = -diag.T @ (Qbar @ (L @ system.solve(w_control * g_u)))
        z_action = (Z.T @ (w_state * g_x)) / w_state
        l_star = (L.T @ (w_state * g_x)) / w_control
        z_formula = diag.T @ g_x - diag.T @ (Qbar @ (L @ system.solve(w_control * l_star)))
        return relative(psi_action, psi_formula), relative(z_action, z_formula)

    psi1_res, z1_res = check(ctx.F_stack)
    if history_nodes is None:
        history_nodes = sorted({0, t_index // 2, t_index})
    psi2_res, z2_res = 0.0, 0.0
    for s in history_nodes:
        a, b = check(ctx.M_stack[:, s])
        psi2_res, z2_res = max(psi2_res, a), max(z2_res, b)
    return dict(zip(names, (psi1_res, psi2_res, z1_res, z2_res)))


def synthesize(
    prop: PropagatorTables,
    instance: ProblemInstance,
    t_index: int,
    route: Literal["definition", "projection"] = "definition",
) -> Tuple[PsiZTables, CostOperators]:
    """
    Kernels and definitional cost operators at node ``t_index``.

    :return: ``(tables, cost operators)``.
    :rtype: Tuple[PsiZTables, CostOperators]
    """
    ctx = NodeContext(prop, instance, t_index)
    psi = compute_psi(prop, instance, t_index, context=ctx)
    tables = compute_Z(prop, instance, psi, route=route, context=ctx)
    ops = cost_ops_definitional(tables, instance.Q, prop.grid)
    log.debug(f"Cost operators at node {t_index}: |P0|={np.max(np.abs(ops.P0)):.6g}")
    return tables, ops


def cost_operators_at(
    prop: PropagatorTables, instance: ProblemInstance, t_index: int
) -> CostOperators:
    """Definitional cost operators at ``t_index``."""
    return synthesize(prop, instance, t_index)[1]


async def cost_ops_sweep(
    prop: PropagatorTables,
    instance: ProblemInstance,
    nodes: Sequence[int],
    max_concurrency: int = 1,
) -> List[CostOperators]:
    """
    Cost operators at many nodes, computed in worker threads.

    At most ``max_concurrency`` nodes run at once; results come back in the order of
    ``nodes`` whatever the schedule.

    :param prop: Propagator tables.
    :type prop: PropagatorTables
    :param instance: The problem.
    :type instance: ProblemInstance
    :param nodes: Node indices.
    :type nodes: Sequence[int]
    :param max_concurrency: Concurrency bound, at least one.
    :type max_concurrency: int
    :return: One :class:`CostOperators` per node.
    :rtype: List[CostOperators]
    """
    if max_concurrency < 1:
        raise ValueError("Concurrency level must be at least 1.")
    semaphore = asyncio.Semaphore(max_concurrency)

    async def run(node: int) -> CostOperators:
        async with semaphore:
            return await asyncio.to_thread(cost_operators_at, prop, instance, node)

    return list(await asyncio.gather(*(run(node) for node in nodes)))


def optimal_cost_via_P(ops: CostOperators, init: InitialData, grid: TimeGrid) -> float:
    """
    ``<P0 xi0, xi0> + 2 sum_s w_s <P1(s) xi(s), xi0> + sum_{s,q} w_s w_q <P2(s,q) xi(s), xi(q)>``.

    :param ops: Cost operators at the initial node.
    :type ops: CostOperators
    :param init: Initial data.
    :type init: InitialData
    :param grid: The time grid.
    :type grid: TimeGrid
    :return: The optimal cost.
    :rtype: float
    """
    xi0 = init.xi0
    value = float(xi0 @ ops.P0 @ xi0)
    if init.tau_index == 0:
        return value
    weights = grid.weights(0, init.tau_index)
    weighted = weights[:, None] * init.history
    value += 2.0 * float(np.einsum("x,sxy,sy->", xi0, ops.P1, weighted))
    value += float(np.einsum("qx,sqxy,sy->", weighted, ops.P2, weighted))
    return value


def feedback_residual(
    instance: ProblemInstance,
    solution: OpenLoopSolution,
    ops: CostOperators,
    path: np.ndarray,
) -> float:
    """
    ``|u(t) + B^T P0(t) w(t) + int_0^t B^T P1(t, s) y(s) ds|`` at the node of ``ops``.

    :param instance: The problem.
    :type instance: ProblemInstance
    :param solution: Open-loop optimum.
    :type solution: OpenLoopSolution
    :param ops: Cost operators at a node ``k >= tau``.
    :type ops: CostOperators
    :param path: Optimal memory path on ``[0, T]``.
    :type path: numpy.ndarray
    :return: Max-norm residual.
    :rtype: float
    """
    p, k = instance.tau_index, ops.t_index
    B = instance.B
    jump = Jump(p, instance.init.xi0 - instance.init.path[p])
    u = solution.u_hat[k - p]
    w = instance.init.xi0 if k == p else solution.w_hat[k - p]
    gains = B.T @ ops.P1
    value = u + B.T @ ops.P0 @ w + history_integral(gains, path, instance.h, jump)
    return float(np.max(np.abs(value)))


def optimal_path(instance: ProblemInstance, solution: OpenLoopSolution) -> np.ndarray:
    """History on ``[0, tau]`` followed by the optimal state."""
    p = instance.tau_index
    return np.concatenate([instance.init.path[: p + 1], solution.w_hat[1:]])


async def feedback_consistency(
    prop: PropagatorTables,
    instance: ProblemInstance,
    solution: OpenLoopSolution,
    nodes: Sequence[int],
    max_concurrency: int = 1,
) -> float:
    """
    Worst feedback residual over ``nodes``, scaled by ``1 + max|u|``.

    :return: ``max_k residual_k / (1 + ||u_hat||_inf)``.
    :rtype: float
    """
    ops_list = await cost_ops_sweep(prop, instance, nodes, max_concurrency)
    path = optimal_path(instance, solution)
    worst = max(feedback_residual(instance, solution, ops, path) for ops in ops_list)
    return worst / (1.0 + float(np.max(np.abs(solution.u_hat))))


def horizon_monotonicity(
    ops_list: Sequence[CostOperators], samples: int = 8, seed: int = 0
) -> float:
    """
    Largest increase of ``<P0(t) x, x>`` between consecutive nodes for sampled ``x``.

    ``ops_list`` must be sorted by node. A nonpositive result means monotone.
    """
    n = ops_list[0].P0.shape[0]
    xs = np.random.default_rng(seed).standard_normal((samples, n))
    values = np.array([np.einsum("kx,xy,ky->k", xs, ops.P0, xs) for ops in ops_list])
    return float(np.max(np.diff(values, axis=0), initial=-np.inf))
