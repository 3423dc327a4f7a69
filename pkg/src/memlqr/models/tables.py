import numpy as np

from . import Array, Model
from .problem import TimeGrid


class KernelTable(Model):
    """
    A one-parameter family of ``n x n`` blocks sampled at the grid nodes.

    :ivar name: Short table name, used as section tag in binary dumps.
    :type name: str
    :ivar blocks: Array of shape ``(N+1, n, n)``.
    :type blocks: numpy.ndarray
    """

    name: str
    blocks: Array

    @property
    def N(self) -> int:
        return self.blocks.shape[0] - 1

    @property
    def n(self) -> int:
        return self.blocks.shape[1]

    def __getitem__(self, index) -> np.ndarray:
        return self.blocks[index]

    def max_norm(self) -> np.ndarray:
        """Entrywise max-norm of every block."""
        return np.max(np.abs(self.blocks), axis=(1, 2))


class SemigroupTable(KernelTable):
    """``E_i = exp(t_i A)``."""

    name: str = "E"


class MuTable(KernelTable):
    """``mu_i`` approximating ``int_0^t_i exp((t_i - s)A) K(s) ds``."""

    name: str = "MU"


class ResolventTable(KernelTable):
    """``R_i`` solving the discrete second-kind Volterra equation ``R - mu*R = -mu``."""

    name: str = "R"


class FTable(KernelTable):
    """
    The propagator ``F(t_i, t_j)``.

    On a uniform grid ``F(t_i, t_j)`` depends on ``i - j`` only, so the lower triangle is
    stored by lag: ``blocks[d] = F(t_{j+d}, t_j)``.
    """

    name: str = "F"

    def at(self, i: int, j: int) -> np.ndarray:
        """
        Block ``F(t_i, t_j)``.

        :raises IndexError: If ``j > i``.
        """
        if j > i:
            raise IndexError(f"F is defined for j <= i only (i={i}, j={j})")
        return self.blocks[i - j]


class GMTables(Model):
    """
    ``G(t_i, s_j, tau)`` and ``M(t_i, s_j, tau)`` for a fixed initial node ``tau_index = p``.

    Stored as ``G[i - p, p - j]`` for ``p <= i <= N`` and ``0 <= j <= p``.
    """

    tau_index: int
    G: Array
    M: Array

    def G_at(self, i: int, j: int) -> np.ndarray:
        return self.G[i - self.tau_index, self.tau_index - j]

    def M_at(self, i: int, j: int) -> np.ndarray:
        return self.M[i - self.tau_index, self.tau_index - j]

    def M_history(self) -> np.ndarray:
        """``M(t_i, s_j, tau)`` ordered ``[i - p, j]`` with ``j`` ascending."""
        return self.M[:, ::-1]


class PropagatorTables(Model):
    """
    Everything the downstream solvers consume from the propagator stage.

    :ivar grid: The time grid.
    :ivar kernel: Kernel samples as ``(N+1, n, n)`` blocks.
    :ivar semigroup: ``E_i``.
    :ivar mu: ``mu_i``.
    :ivar resolvent: ``R_i``.
    :ivar F: Lag table of the propagator.
    :ivar gm: ``G`` and ``M`` for the instance's initial node.
    """

    grid: TimeGrid
    kernel: Array
    semigroup: SemigroupTable
    mu: MuTable
    resolvent: ResolventTable
    F: FTable
    gm: GMTables

    @property
    def n(self) -> int:
        return self.kernel.shape[1]

    @property
    def tau_index(self) -> int:
        return self.gm.tau_index
