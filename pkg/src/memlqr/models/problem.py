from typing import List, Literal, Optional, Union

import numpy as np
from pydantic import Field, field_validator, model_validator

from . import Array, Model


class InvariantViolation(ValueError):
    """A value error naming the problem invariant that failed."""

    def __init__(self, invariant: str, reason: str):
        self.invariant = invariant
        self.reason = reason
        super().__init__(f"{invariant}: {reason}")


class ShapeViolation(ValueError):
    """A value error describing a dimension mismatch."""

    def __init__(self, field: str, expected, received):
        self.field = field
        self.expected = expected
        self.received = received
        super().__init__(f"{field} expected shape {expected}, received {received}")


def trapezoid_weights(count: int, h: float) -> np.ndarray:
    """
    Composite trapezoid weights for ``count`` equispaced nodes.

    A single node spans an empty interval and gets weight zero.

    :param count: Number of nodes (>= 1).
    :type count: int
    :param h: Node spacing.
    :type h: float
    :return: Weights ``h/2, h, ..., h, h/2``.
    :rtype: numpy.ndarray
    """
    if count <= 1:
        return np.zeros(max(count, 0))
    weights = np.full(count, h)
    weights[0] = weights[-1] = 0.5 * h
    return weights


class Tolerances(Model):
    """
    Numerical tolerances, overridable from the ``tolerances`` object of a problem file.

    :ivar sym_tol: Max-norm bound on ``Q - Q^T``.
    :ivar psd_tol: Lower bound (negated) on the smallest eigenvalue of ``Q``.
    :ivar commute_tol: Max-norm bound on ``K(t_i)A - AK(t_i)`` for matrix kernels.
    :ivar res_tol: Bound on the discrete Volterra residual of the resolvent.
    :ivar exp_tol: Relative bound on the semigroup property defect.
    :ivar drift_tol: Relative bound on symmetry drift of the Riccati unknowns.
    :ivar key_lemma_tol: Relative bound on the cost-operator identities.
    :ivar resolvent_flag: Growth of ``max ||R_i||`` that is flagged (never failed).
    """

    sym_tol: float = 1e-10
    psd_tol: float = 1e-10
    commute_tol: float = 1e-10
    res_tol: float = 1e-12
    exp_tol: float = 1e-10
    drift_tol: float = 1e-8
    key_lemma_tol: float = 1e-8
    resolvent_flag: float = 1e6


class TimeGrid(Model):
    """
    Uniform grid ``t_i = i*h`` on ``[0, T]`` with ``h = T/N``.

    :ivar N: Number of steps.
    :type N: int
    :ivar T: Horizon.
    :type T: float
    """

    N: int = Field(ge=1)
    T: float = Field(gt=0.0)

    @property
    def h(self) -> float:
        return self.T / self.N

    @property
    def nodes(self) -> np.ndarray:
        return np.arange(self.N + 1) * self.h

    def index_of(self, t: float) -> int:
        """
        Node index of time ``t``.

        :param t: A time in ``[0, T]``.
        :type t: float
        :raises ValueError: If ``t`` does not sit on a grid node.
        :return: The index ``i`` with ``t_i == t`` up to rounding.
        :rtype: int
        """
        index = int(round(t / self.h))
        if index < 0 or index > self.N or abs(index * self.h - t) > 1e-9 * max(1.0, self.T):
            raise ValueError(f"time {t} is not a node of a grid with N={self.N}, T={self.T}")
        return index

    def weights(self, start: int, stop: int) -> np.ndarray:
        """Trapezoid weights on the nodes ``start..stop`` inclusive."""
        return trapezoid_weights(stop - start + 1, self.h)


class KernelSpec(Model):
    """
    Closed-form or sampled description of the memory kernel.

    Scalar profiles become commuting matrix kernels ``f(t)*C`` when ``matrix`` is given.
    """

    type: Literal["exponential", "constant", "polynomial", "zero", "samples"]
    c: float = 0.0
    gamma: float = 0.0
    coefficients: List[float] = Field(default_factory=list)
    values: Optional[list] = None
    matrix: Optional[List[List[float]]] = None

    @model_validator(mode="after")
    def check_params(self):
        if self.type == "samples" and self.values is None:
            raise InvariantViolation("kernel", "samples kernel requires 'values'")
        if self.type == "polynomial" and not self.coefficients:
            raise InvariantViolation("kernel", "polynomial kernel requires 'coefficients'")
        return self

    @property
    def regriddable(self) -> bool:
        return self.type != "samples"

    @property
    def tag(self) -> str:
        if self.type == "exponential":
            label = f"exponential(c={self.c!r}, gamma={self.gamma!r})"
        elif self.type == "constant":
            label = f"constant(c={self.c!r})"
        elif self.type == "polynomial":
            label = f"polynomial({', '.join(repr(a) for a in self.coefficients)})"
        else:
            label = self.type
        return f"{label}*C" if self.matrix is not None else label

    def profile(self, t: np.ndarray) -> np.ndarray:
        """Evaluate the scalar profile of a closed-form kernel at times ``t``."""
        if self.type == "exponential":
            return self.c * np.exp(-self.gamma * t)
        if self.type == "constant":
            return np.full_like(t, self.c, dtype=float)
        if self.type == "polynomial":
            return np.polynomial.polynomial.polyval(t, self.coefficients)
        if self.type == "zero":
            return np.zeros_like(t, dtype=float)
        raise ValueError("sampled kernels have no closed-form profile")

    def sample(self, grid: TimeGrid, n: int) -> "MemoryKernel":
        """
        Sample the kernel on the nodes of ``grid``.

        :param grid: Target grid.
        :type grid: TimeGrid
        :param n: State dimension.
        :type n: int
        :return: The sampled kernel.
        :rtype: MemoryKernel
        """
        if self.type == "samples":
            values = np.array(self.values, dtype=float)
            if values.shape[0] != grid.N + 1:
                raise ShapeViolation("kernel.values", (grid.N + 1,), values.shape)
        else:
            values = self.profile(grid.nodes)

        if values.ndim == 1 and self.matrix is not None:
            matrix = np.array(self.matrix, dtype=float)
            if matrix.shape != (n, n):
                raise ShapeViolation("kernel.matrix", (n, n), matrix.shape)
            values = values[:, None, None] * matrix[None, :, :]

        if values.ndim == 1:
            return MemoryKernel(kind="scalar", values=values, tag=self.tag)
        if values.shape[1:] != (n, n):
            raise ShapeViolation("kernel.values", (grid.N + 1, n, n), values.shape)
        return MemoryKernel(kind="commuting_matrix", values=values, tag=self.tag)


class MemoryKernel(Model):
    """
    Memory kernel sampled at the grid nodes.

    :ivar kind: ``scalar`` (values of shape ``(N+1,)``) or ``commuting_matrix`` (``(N+1, n, n)``).
    :ivar values: Samples ``K(t_i)``.
    :ivar tag: Human-readable description of the source profile.
    """

    kind: Literal["scalar", "commuting_matrix"]
    values: Array
    tag: str = "samples"

    @property
    def is_zero(self) -> bool:
        return not np.any(self.values)

    def blocks(self, n: int) -> np.ndarray:
        """
        Kernel samples as ``n x n`` blocks.

        :param n: State dimension.
        :type n: int
        :return: Array of shape ``(N+1, n, n)``.
        :rtype: numpy.ndarray
        """
        if self.kind == "scalar":
            return self.values[:, None, None] * np.eye(n)[None, :, :]
        return np.array(self.values)


class ConstantHistory(Model):
    type: Literal["constant"]
    value: List[float]


class InitialData(Model):
    """
    Initial data at node ``tau_index``: the state ``xi0`` and the history samples on ``[0, tau]``.

    For ``tau = 0`` the history is empty (shape ``(0, n)``).
    """

    tau: float
    tau_index: int = Field(ge=0)
    xi0: Array
    history: Array

    @model_validator(mode="after")
    def check_history(self):
        n = self.xi0.shape[0]
        expected = (self.tau_index + 1, n) if self.tau_index > 0 else (0, n)
        if self.history.shape != expected:
            raise ShapeViolation("history", expected, self.history.shape)
        return self

    @property
    def path(self) -> np.ndarray:
        """History samples on ``[0, tau]``, or ``[xi0]`` when ``tau = 0``."""
        if self.tau_index == 0:
            return self.xi0[None, :]
        return self.history


class ProblemSpec(Model):
    """
    The file-level description of a problem, with builders already expanded.

    Matrices are kept as nested lists so that saving reproduces the source bit-for-bit.
    """

    n: int = Field(ge=1)
    m: int = Field(ge=1)
    A: List[List[float]]
    B: List[List[float]]
    Q: List[List[float]]
    kernel: KernelSpec
    T: float = Field(gt=0.0)
    N: int = Field(ge=1)
    tau: float = 0.0
    xi0: List[float]
    history: Optional[Union[ConstantHistory, List[List[float]]]] = None
    tolerances: Tolerances = Field(default_factory=Tolerances)

    @field_validator("tau")
    @classmethod
    def check_tau(cls, value: float) -> float:
        if value < 0.0:
            raise InvariantViolation("tau", "initial time must be nonnegative")
        return value

    def regrid(self, N: int) -> "ProblemSpec":
        """
        The same problem on a grid with ``N`` steps.

        :param N: New number of steps.
        :type N: int
        :raises ValueError: If the kernel or history is given by samples.
        :return: A spec that differs only in ``N``.
        :rtype: ProblemSpec
        """
        if not self.kernel.regriddable:
            raise ValueError("sampled kernels cannot be regridded")
        if isinstance(self.history, list) and self.tau > 0.0:
            raise ValueError("sampled histories cannot be regridded")
        return self.model_copy(update={"N": N})

    def _history_samples(self, tau_index: int) -> np.ndarray:
        if tau_index == 0:
            return np.zeros((0, self.n))
        if self.history is None:
            raise InvariantViolation("history", "a history is required when tau > 0")
        if isinstance(self.history, ConstantHistory):
            value = np.array(self.history.value, dtype=float)
            if value.shape != (self.n,):
                raise ShapeViolation("history.value", (self.n,), value.shape)
            return np.tile(value, (tau_index + 1, 1))
        return np.array(self.history, dtype=float).reshape(len(self.history), -1)

    def build(self) -> "ProblemInstance":
        """
        Sample the kernel and history and validate the resulting instance.

        :return: The validated instance.
        :rtype: ProblemInstance
        """
        grid = TimeGrid(N=self.N, T=self.T)
        try:
            tau_index = grid.index_of(self.tau)
        except ValueError as e:
            raise InvariantViolation("tau", str(e))
        if tau_index >= self.N:
            raise InvariantViolation("tau", "initial time must lie in [0, T)")
        xi0 = np.array(self.xi0, dtype=float)
        if xi0.shape != (self.n,):
            raise ShapeViolation("xi0", (self.n,), xi0.shape)
        init = InitialData(
            tau=self.tau,
            tau_index=tau_index,
            xi0=xi0,
            history=self._history_samples(tau_index),
        )
        return ProblemInstance(
            n=self.n,
            m=self.m,
            A=self.A,
            B=self.B,
            Q=self.Q,
            K=self.kernel.sample(grid, self.n),
            T=self.T,
            init=init,
            grid=grid,
            tolerances=self.tolerances,
            spec=self,
        )


class ProblemInstance(Model):
    """
    A validated linear-quadratic problem with finite memory.

    Immutable after construction and safe to share between threads.

    :ivar n: State dimension.
    :ivar m: Control dimension.
    :ivar A: Generator, ``n x n``.
    :ivar B: Control operator, ``n x m``.
    :ivar Q: Observation weight, ``n x n`` symmetric positive semidefinite.
    :ivar K: Sampled memory kernel.
    :ivar T: Horizon.
    :ivar init: Initial time, state and history.
    :ivar grid: The time grid.
    :ivar tolerances: Validation and verification tolerances.
    :ivar spec: The description the instance was built from.
    """

    n: int
    m: int
    A: Array
    B: Array
    Q: Array
    K: MemoryKernel
    T: float
    init: InitialData
    grid: TimeGrid
    tolerances: Tolerances
    spec: ProblemSpec

    @model_validator(mode="after")
    def check_invariants(self):
        n, m = self.n, self.m
        for name, expected in (("A", (n, n)), ("B", (n, m)), ("Q", (n, n))):
            received = getattr(self, name).shape
            if received != expected:
                raise ShapeViolation(name, expected, received)
        if self.init.xi0.shape != (n,):
            raise ShapeViolation("xi0", (n,), self.init.xi0.shape)

        for name in ("A", "B", "Q"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise InvariantViolation(name, f"{name} has nonfinite entries")
        if not np.all(np.isfinite(self.K.values)):
            raise InvariantViolation("K", "kernel has nonfinite samples")

        tol = self.tolerances
        if np.max(np.abs(self.Q - self.Q.T)) > tol.sym_tol:
            raise InvariantViolation("Q", "Q not symmetric")
        if np.min(np.linalg.eigvalsh(0.5 * (self.Q + self.Q.T))) < -tol.psd_tol:
            raise InvariantViolation("Q", "Q not positive semidefinite")

        if self.K.kind == "commuting_matrix":
            blocks = self.K.values
            defect = np.max(np.abs(blocks @ self.A - self.A @ blocks))
            if defect > tol.commute_tol:
                raise InvariantViolation("K", f"K does not commute with A (defect {defect:.3e})")
        return self

    @property
    def h(self) -> float:
        return self.grid.h

    @property
    def tau_index(self) -> int:
        return self.init.tau_index

    def kernel_blocks(self) -> np.ndarray:
        return self.K.blocks(self.n)

    def regrid(self, N: int) -> "ProblemInstance":
        """Rebuild the instance on a grid with ``N`` steps."""
        return self.spec.regrid(N).build()

    def with_initial_data(
        self, tau_index: int, xi0: np.ndarray, history: np.ndarray
    ) -> "ProblemInstance":
        """
        The same instance restarted at node ``tau_index`` from explicit data.

        :param tau_index: New initial node.
        :type tau_index: int
        :param xi0: State at the new initial node.
        :type xi0: numpy.ndarray
        :param history: Samples on ``[0, t_{tau_index}]`` (ignored when ``tau_index = 0``).
        :type history: numpy.ndarray
        :return: A new instance sharing all other data.
        :rtype: ProblemInstance
        """
        history = np.asarray(history, dtype=float)
        spec = self.spec.model_copy(
            update={
                "tau": tau_index * self.grid.h,
                "xi0": [float(x) for x in xi0],
                "history": history.tolist() if tau_index > 0 else None,
            }
        )
        init = InitialData(
            tau=spec.tau,
            tau_index=tau_index,
            xi0=xi0,
            history=history if tau_index > 0 else np.zeros((0, self.n)),
        )
        return self.model_copy(update={"init": init, "spec": spec})
