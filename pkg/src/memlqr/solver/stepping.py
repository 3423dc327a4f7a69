"""
Time stepping of ``w' = Aw + int_0^t K(t - s) y(s) ds + Bu`` where ``y`` is the memory path.

The memory path holds the history on ``[0, t_p]`` and the state afterwards. When the initial
state differs from the last history sample, the trapezoid weight at ``t_p`` is split between
the two one-sided values.
"""

from typing import Callable, Dict, Literal, Optional, Union

import numpy as np
from scipy import linalg

from ..models.problem import ProblemInstance, trapezoid_weights
from ..utils import exceptions, logger

FeedbackFn = Callable[[int, np.ndarray, np.ndarray, "Jump"], np.ndarray]


class Jump:
    """
    Discontinuities of the memory path, ``w(t_k+) - y(t_k)`` keyed by node ``k``.

    :param node: Start node of the march.
    :type node: Optional[int]
    :param value: Jump at ``node``, or ``None`` when the path is continuous there.
    :type value: Optional[numpy.ndarray]
    """

    def __init__(self, node: Optional[int] = None, value: Optional[np.ndarray] = None):
        self.values: Dict[int, np.ndarray] = {}
        if node is not None:
            self.add(node, value)

    @classmethod
    def from_dict(cls, jumps: Dict[int, np.ndarray]) -> "Jump":
        jump = cls()
        for node, value in jumps.items():
            jump.add(node, value)
        return jump

    def add(self, node: int, value: Optional[np.ndarray]) -> "Jump":
        if value is not None and np.any(value):
            self.values[node] = np.asarray(value, dtype=float)
        return self

    def correction(self, block: Callable[[int], np.ndarray], i: int, h: float) -> np.ndarray:
        """``(h/2) X_k jump_k`` summed over the jumps strictly before node ``i``."""
        total = 0.0
        for node, value in self.values.items():
            if i > node:
                total = total + 0.5 * h * (block(node) @ value)
        return total


def history_integral(blocks: np.ndarray, path: np.ndarray, h: float, jump: Jump) -> np.ndarray:
    """
    Trapezoid approximation of ``int_0^{t_i} X(s) y(s) ds``.

    :param blocks: ``X(s_j)`` for ``j = 0..i``, shape ``(i+1, r, n)``.
    :type blocks: numpy.ndarray
    :param path: Memory path with at least ``i+1`` samples.
    :type path: numpy.ndarray
    :param h: Step.
    :type h: float
    :param jump: Path discontinuities.
    :type jump: Jump
    :return: An ``r``-vector.
    :rtype: numpy.ndarray
    """
    i = blocks.shape[0] - 1
    weights = trapezoid_weights(i + 1, h)
    value = np.einsum("j,jab,jb->a", weights, blocks, path[: i + 1])
    return value + jump.correction(lambda node: blocks[node], i, h)


class MemoryStepper:
    """
    Second-order marching engine shared by direct and closed-loop simulation.

    ``trapezoid`` is the Crank-Nicolson rule with the new-node memory term treated
    implicitly; ``euler`` is the explicit Euler rule with the same memory quadrature.

    :param instance: The problem.
    :type instance: ProblemInstance
    :param scheme: Inner stepper.
    :type scheme: Literal["trapezoid", "euler"]
    """

    def __init__(
        self, instance: ProblemInstance, scheme: Literal["trapezoid", "euler"] = "trapezoid"
    ):
        self.log = logger.LogMe(self.__class__.__name__)
        self.A = instance.A
        self.B = instance.B
        self.K = instance.kernel_blocks()
        self.h = instance.h
        self.n = instance.n
        self.scheme = scheme
        self.factor = None
        if scheme == "trapezoid":
            h = self.h
            lhs = np.eye(self.n) - 0.5 * h * self.A - 0.25 * h * h * self.K[0]
            self.factor = linalg.lu_factor(lhs, check_finite=True)
            pivots = np.abs(np.diag(self.factor[0]))
            if np.min(pivots) <= np.finfo(float).eps * np.max(pivots) * self.n:
                self.log.error("Implicit step matrix is singular")
                raise exceptions.SimulationError(
                    reason="implicit step matrix is singular; reduce h", node=0
                )

    def memory(self, i: int, path: np.ndarray, jump: Jump) -> np.ndarray:
        """Memory term at node ``i``."""
        return history_integral(self.K[i::-1], path, self.h, jump)

    def _partial_memory(self, i: int, path: np.ndarray, jump: Jump) -> np.ndarray:
        # memory at node i without the contribution of y_i
        weights = trapezoid_weights(i + 1, self.h)[:i]
        value = np.einsum("j,jab,jb->a", weights, self.K[i:0:-1], path[:i])
        return value + jump.correction(lambda node: self.K[i - node], i, self.h)

    def run(
        self,
        start: int,
        w_start: np.ndarray,
        path0: np.ndarray,
        stop: int,
        controls: Union[np.ndarray, FeedbackFn],
        jump: Optional[Jump] = None,
    ):
        """
        March from node ``start`` to node ``stop``.

        :param start: Start node.
        :type start: int
        :param w_start: State at the start node.
        :type w_start: numpy.ndarray
        :param path0: Memory path on nodes ``0..start``.
        :type path0: numpy.ndarray
        :param stop: Final node.
        :type stop: int
        :param controls: Control samples on ``start..stop`` or a feedback
            ``(i, w_i, path, jump) -> u_i``.
        :type controls: Union[numpy.ndarray, Callable]
        :param jump: Path discontinuities, including the one at ``start``; derived from
            ``w_start - path0[start]`` when omitted.
        :type jump: Optional[Jump]
        :raises SimulationError: If the state leaves the finite range.
        :return: ``(w, u, path)`` with ``w``, ``u`` on ``start..stop`` and the path on ``0..stop``.
        :rtype: Tuple[numpy.ndarray, numpy.ndarray, numpy.ndarray]
        """
        h = self.h
        feedback = controls if callable(controls) else None
        m = self.B.shape[1]

        path = np.zeros((stop + 1, self.n))
        path[: start + 1] = path0
        if jump is None:
            jump = Jump(start, np.asarray(w_start, dtype=float) - path0[start])
        count = stop - start + 1
        w = np.zeros((count, self.n))
        u = np.zeros((count, m))
        w[0] = w_start

        def control_at(i: int, state: np.ndarray) -> np.ndarray:
            if feedback is None:
                return np.asarray(controls[i - start], dtype=float)
            return feedback(i, state, path, jump)

        u[0] = control_at(start, w[0])
        f = self.A @ w[0] + self.memory(start, path, jump) + self.B @ u[0]

        for i in range(start, stop):
            a = i - start
            if self.scheme == "euler":
                w_next = w[a] + h * f
                path[i + 1] = w_next
                u_next = control_at(i + 1, w_next)
            else:
                base = w[a] + 0.5 * h * f + 0.5 * h * self._partial_memory(i + 1, path, jump)
                if feedback is None:
                    u_next = control_at(i + 1, None)
                    w_next = linalg.lu_solve(self.factor, base + 0.5 * h * (self.B @ u_next))
                    path[i + 1] = w_next
                else:
                    w_pred = linalg.lu_solve(self.factor, base + 0.5 * h * (self.B @ u[a]))
                    path[i + 1] = w_pred
                    u_pred = control_at(i + 1, w_pred)
                    w_next = linalg.lu_solve(self.factor, base + 0.5 * h * (self.B @ u_pred))
                    path[i + 1] = w_next
                    u_next = control_at(i + 1, w_next)
            if not np.all(np.isfinite(w_next)):
                self.log.error(f"Nonfinite state at node {i + 1}")
                raise exceptions.SimulationError(reason="nonfinite state", node=i + 1)
            w[a + 1] = w_next
            u[a + 1] = u_next
            f = self.A @ w_next + self.memory(i + 1, path, jump) + self.B @ u_next

        return w, u, path
