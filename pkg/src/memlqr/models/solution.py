from typing import Dict, List, Literal

import numpy as np
from pydantic import Field, model_validator

from . import Array, Model
from .problem import TimeGrid


class DiscreteInputToState(Model):
    """
    The discrete input-to-state operator on ``[t_p, T]``.

    ``L`` maps stacked controls ``(u_p, ..., u_N)`` to the controlled part of the stacked
    states. Block ``(i, j)`` equals ``w_j F(t_i, t_j) B`` for ``j <= i`` with trapezoid
    weights on ``[t_p, t_i]``.

    :ivar tau_index: Initial node ``p``.
    :ivar n: State dimension.
    :ivar m: Control dimension.
    :ivar L: Dense matrix of shape ``((N-p+1) n, (N-p+1) m)``.
    :ivar weights: Trapezoid weights of the state and control inner products on ``[t_p, T]``.
    """

    tau_index: int
    n: int
    m: int
    L: Array
    weights: Array

    @property
    def count(self) -> int:
        return self.weights.shape[0]


class OpenLoopSolution(Model):
    """
    Optimal open-loop pair on ``[t_p, T]`` and solver diagnostics.

    :ivar tau_index: Initial node.
    :ivar t: Node times.
    :ivar u_hat: Optimal control samples, shape ``(N-p+1, m)``.
    :ivar w_hat: Optimal state samples, shape ``(N-p+1, n)``.
    :ivar free_response: Uncontrolled state samples.
    :ivar J: Optimal discrete cost.
    :ivar J_free: Cost of the zero control.
    :ivar gram_condition: 2-norm condition number of the normal equations.
    :ivar residual: Relative residual of the normal equations.
    :ivar coercivity_margin: ``lambda_min(system) / min(weights)``, at least one.
    :ivar method: Factorization used.
    """

    tau_index: int
    t: Array
    u_hat: Array
    w_hat: Array
    free_response: Array
    J: float
    J_free: float
    gram_condition: float
    residual: float
    coercivity_margin: float
    method: Literal["cholesky", "lu"] = "cholesky"


class Trajectory(Model):
    """
    Time-indexed state/control samples on ``[t_p, T]`` with their running cost.

    :ivar path: Memory path on ``[0, T]``: history up to ``t_p``, then the state.
    """

    tau_index: int
    t: Array
    w: Array
    u: Array
    path: Array
    cost: float


class ClosedLoopTrajectory(Trajectory):
    """A trajectory produced by the feedback law; ``cost`` is the realized ``J_cl``."""

    scheme: Literal["trapezoid", "euler"] = "trapezoid"

    @property
    def J_cl(self) -> float:
        return self.cost


class AugmentedState(Model):
    """
    State at node ``node`` together with its memory path on ``[0, t_node]``.

    A state that was carried forward from a start node where ``w`` differed from the path
    keeps that discontinuity in ``jumps`` so later memory integrals can split the trapezoid
    weight at that node between the one-sided values.

    :ivar node: Grid index.
    :ivar w: Current state.
    :ivar path: Samples on nodes ``0..node``.
    :ivar jumps: ``w(t_k+) - path[k]`` keyed by earlier node ``k < node``.
    """

    node: int = Field(ge=0)
    w: Array
    path: Array
    jumps: Dict[int, Array] = Field(default_factory=dict)

    @model_validator(mode="after")
    def check_shapes(self):
        if self.path.ndim != 2 or self.path.shape != (self.node + 1, self.w.shape[0]):
            raise ValueError(
                f"path expected shape {(self.node + 1, self.w.shape[0])}, got {self.path.shape}"
            )
        for k, value in self.jumps.items():
            if not 0 <= k < self.node or value.shape != self.w.shape:
                raise ValueError(f"jump at node {k} does not fit a state at node {self.node}")
        return self

    def discontinuities(self) -> Dict[int, np.ndarray]:
        """Stored jumps plus the jump at ``node`` itself when ``w`` leaves the path."""
        jumps = dict(self.jumps)
        own = self.w - self.path[self.node]
        if np.any(own):
            jumps[self.node] = own
        return jumps

    def memory_path(self) -> np.ndarray:
        """
        Path samples with the stored jumps folded in for trapezoid pairings on ``[0, t_node]``.

        An interior node carries weight ``h`` and takes half the jump; node 0 carries
        ``h/2`` and takes all of it.
        """
        if not self.jumps:
            return self.path
        path = np.array(self.path)
        for k, value in self.jumps.items():
            path[k] += (1.0 if k == 0 else 0.5) * value
        return path

    def combine(self, other: "AugmentedState", alpha: float, beta: float) -> "AugmentedState":
        """``alpha * self + beta * other`` at the same node."""
        zero = np.zeros_like(self.w)
        jumps = {
            k: alpha * self.jumps.get(k, zero) + beta * other.jumps.get(k, zero)
            for k in sorted(set(self.jumps) | set(other.jumps))
        }
        return AugmentedState(
            node=self.node,
            w=alpha * self.w + beta * other.w,
            path=alpha * self.path + beta * other.path,
            jumps=jumps,
        )


class PsiZTables(Model):
    """
    Optimal control and state kernels for the initial node ``t_index = p``.

    Indexed ``[a, ...]`` with ``a = i - p`` over nodes ``p..N`` and history nodes ``s = 0..p``.

    :ivar psi1: ``Psi_1(t_i, t_p)``, shape ``(N-p+1, m, n)``.
    :ivar psi2: ``Psi_2(t_i, s, t_p)``, shape ``(N-p+1, p+1, m, n)``.
    :ivar z1: ``Z_1(t_i, t_p)``, shape ``(N-p+1, n, n)``.
    :ivar z2: ``Z_2(t_i, s, t_p)``, shape ``(N-p+1, p+1, n, n)``.
    """

    t_index: int
    psi1: Array
    psi2: Array
    z1: Array
    z2: Array


class CostOperators(Model):
    """
    Kernels of the optimal cost quadratic form at node ``t_index``.

    :ivar P0: State-state block.
    :ivar P1: State-history blocks ``P1[s]``, shape ``(p+1, n, n)``.
    :ivar P2: History-history blocks ``P2[s, q]``, shape ``(p+1, p+1, n, n)``.
    """

    t_index: int
    P0: Array
    P1: Array
    P2: Array

    def norm(self) -> float:
        return float(max(np.max(np.abs(self.P0)), np.max(np.abs(self.P1), initial=0.0)))

    def symmetry_defect(self) -> Dict[str, float]:
        p2t = np.swapaxes(np.swapaxes(self.P2, 0, 1), 2, 3)
        return {
            "P0": float(np.max(np.abs(self.P0 - self.P0.T))),
            "P0_psd": float(max(0.0, -np.min(np.linalg.eigvalsh(0.5 * (self.P0 + self.P0.T))))),
            "P2": float(np.max(np.abs(self.P2 - p2t), initial=0.0)),
        }


class RiccatiSolution(Model):
    """
    Solution of the coupled backward Riccati system.

    :ivar grid: The time grid.
    :ivar scheme: ``euler`` or ``heun``.
    :ivar P0: ``P0(t_i)`` for every node, shape ``(N+1, n, n)``.
    :ivar P1: ``P1[i]`` of shape ``(i+1, n, n)`` holding ``P1(t_i, s_j)``.
    :ivar P2_edge: ``P2[i]`` column ``P2(t_i, s_j, t_i)``, shape ``(i+1, n, n)``.
    :ivar P2: Full slices ``P2(t_i, s_j, s_k)`` at checkpoint nodes.
    :ivar drift: Worst symmetry/PSD drift found during the march.
    :ivar warnings: Drift and stability warnings raised during the march.
    """

    grid: TimeGrid
    scheme: Literal["euler", "heun"]
    P0: Array
    P1: List[Array]
    P2_edge: List[Array]
    P2: Dict[int, Array]
    drift: Dict[str, float] = Field(default_factory=dict)
    warnings: List[str] = Field(default_factory=list)

    @property
    def checkpoints(self) -> List[int]:
        return sorted(self.P2)

    def cost_operators(self, i: int) -> CostOperators:
        """
        Cost operators at checkpoint node ``i``.

        :raises KeyError: If ``i`` is not a checkpoint.
        """
        return CostOperators(t_index=i, P0=self.P0[i], P1=self.P1[i], P2=self.P2[i])


class BigP(Model):
    """
    Block operator on the augmented space at node ``node``.

    Acts on ``(xi0, y_0, ..., y_node)``; the history blocks carry the trapezoid weights.
    At ``node = 0`` the history has zero measure and the operator reduces to ``P0``.
    """

    node: int
    matrix: Array
    weights: Array

    def quadratic_form(self, state: AugmentedState) -> float:
        vector = augmented_vector(state)
        return float(vector @ self.matrix @ vector)

    def symmetry_defect(self) -> float:
        return float(np.max(np.abs(self.matrix - self.matrix.T)))


def augmented_vector(state: AugmentedState) -> np.ndarray:
    """Stack ``(w, path)`` as acted on by :class:`BigP` (``w`` alone at node 0)."""
    if state.node == 0:
        return np.array(state.w)
    return np.concatenate([state.w, state.memory_path().reshape(-1)])


class FeedbackLaw(Model):
    """
    Gains ``G0[i] = B^T P0(t_i)`` and ``G1[i][j] = B^T P1(t_i, s_j)``.

    :ivar grid: Grid the gains are sampled on.
    :ivar G0: Shape ``(N+1, m, n)``.
    :ivar G1: ``G1[i]`` of shape ``(i+1, m, n)``.
    """

    grid: TimeGrid
    G0: Array
    G1: List[Array]

    @property
    def m(self) -> int:
        return self.G0.shape[1]


class PsiTables(Model):
    """
    ``Psi_1`` and ``Psi_2`` for the initial node ``t_index``; see :class:`PsiZTables`.
    """

    t_index: int
    psi1: Array
    psi2: Array
