"""
Canonical problem families. Each builder validates its parameters as a pydantic model and
expands into an explicit :class:`~memlqr.models.problem.ProblemSpec`.
"""

from typing import List, Literal, Optional, Union

import numpy as np
from pydantic import Field

from ..models import Model
from ..models.problem import (
    ConstantHistory,
    KernelSpec,
    ProblemInstance,
    ProblemSpec,
    Tolerances,
)


def _matrix(value: np.ndarray) -> List[List[float]]:
    return [[float(x) for x in row] for row in value]


class HeatBuilder(Model):
    """
    Finite-difference heat equation on ``(0, 1)`` with Dirichlet ends and distributed control.

    The ``n_space - 1`` interior nodes carry the state. ``A = nu / dx^2 tridiag(1, -2, 1)``,
    ``B = I``, ``Q = dx I`` (the discrete L2 mass) and ``K(t) = c exp(-gamma t)``. The
    default initial state is ``sin(pi x)`` at the interior nodes.
    """

    builder: Literal["heat"] = "heat"
    n_space: int = Field(ge=2)
    nu: float = Field(gt=0.0)
    gamma: float = 1.0
    c: float = 0.0
    T: float = Field(default=1.0, gt=0.0)
    N: int = Field(default=100, ge=1)
    tau: float = 0.0
    xi0: Optional[List[float]] = None
    history: Optional[Union[ConstantHistory, List[List[float]]]] = None
    tolerances: Tolerances = Field(default_factory=Tolerances)

    def spec(self) -> ProblemSpec:
        n = self.n_space - 1
        dx = 1.0 / self.n_space
        A = (self.nu / dx**2) * (
            -2.0 * np.eye(n) + np.eye(n, k=1) + np.eye(n, k=-1)
        )
        x = dx * np.arange(1, self.n_space)
        xi0 = self.xi0 if self.xi0 is not None else [float(v) for v in np.sin(np.pi * x)]
        return ProblemSpec(
            n=n,
            m=n,
            A=_matrix(A),
            B=_matrix(np.eye(n)),
            Q=_matrix(dx * np.eye(n)),
            kernel=KernelSpec(type="exponential", c=self.c, gamma=self.gamma),
            T=self.T,
            N=self.N,
            tau=self.tau,
            xi0=xi0,
            history=self.history,
            tolerances=self.tolerances,
        )


class RandomBuilder(Model):
    """
    Seeded random system with a stable generator.

    ``A = -n I + S`` with ``S`` skew-symmetric, so every eigenvalue has real part ``-n``.
    ``Q = C^T C / n`` is a Gram matrix and the kernel is ``c exp(-gamma t)`` with
    ``c`` in ``[-1, 1]`` and ``gamma`` in ``[0.5, 2]``.
    """

    builder: Literal["random"] = "random"
    n: int = Field(ge=1)
    m: int = Field(ge=1)
    seed: int = 0
    T: float = Field(default=1.0, gt=0.0)
    N: int = Field(default=100, ge=1)
    tau: float = 0.0
    history: Optional[Union[ConstantHistory, List[List[float]]]] = None
    tolerances: Tolerances = Field(default_factory=Tolerances)

    def spec(self) -> ProblemSpec:
        n, m = self.n, self.m
        rng = np.random.default_rng(self.seed)
        G = rng.standard_normal((n, n))
        A = -n * np.eye(n) + 0.5 * (G - G.T)
        B = rng.standard_normal((n, m))
        C = rng.standard_normal((n, n))
        Q = C.T @ C / n
        Q = 0.5 * (Q + Q.T)
        c = float(rng.uniform(-1.0, 1.0))
        gamma = float(rng.uniform(0.5, 2.0))
        xi0 = rng.standard_normal(n)
        return ProblemSpec(
            n=n,
            m=m,
            A=_matrix(A),
            B=_matrix(B),
            Q=_matrix(Q),
            kernel=KernelSpec(type="exponential", c=c, gamma=gamma),
            T=self.T,
            N=self.N,
            tau=self.tau,
            xi0=[float(v) for v in xi0],
            history=self.history,
            tolerances=self.tolerances,
        )


BUILDERS = {"heat": HeatBuilder, "random": RandomBuilder}


def build_heat_system(
    n_space: int,
    nu: float,
    gamma: float,
    c: float,
    T: float,
    N: int,
    **options,
) -> ProblemInstance:
    """
    Semi-discretized heat equation with exponential memory.

    :param n_space: Number of spatial intervals (``n = n_space - 1`` states).
    :type n_space: int
    :param nu: Diffusivity.
    :type nu: float
    :param gamma: Kernel decay rate.
    :type gamma: float
    :param c: Kernel amplitude.
    :type c: float
    :param T: Horizon.
    :type T: float
    :param N: Number of time steps.
    :type N: int
    :param options: ``tau``, ``xi0``, ``history`` or ``tolerances``.
    :return: The validated instance.
    :rtype: ProblemInstance
    """
    builder = HeatBuilder(n_space=n_space, nu=nu, gamma=gamma, c=c, T=T, N=N, **options)
    return builder.spec().build()


def build_random_stable(n: int, m: int, seed: int, **options) -> ProblemInstance:
    """
    Deterministic random instance with a stable generator and PSD weight.

    :param n: State dimension.
    :type n: int
    :param m: Control dimension.
    :type m: int
    :param seed: Seed of ``numpy.random.default_rng``.
    :type seed: int
    :param options: ``T``, ``N``, ``tau``, ``history`` or ``tolerances``.
    :return: The validated instance.
    :rtype: ProblemInstance
    """
    return RandomBuilder(n=n, m=m, seed=seed, **options).spec().build()
