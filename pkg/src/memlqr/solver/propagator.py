"""
Discretized semigroup and the memory kernel family ``mu, R, F, G, M``.

All quadratures are composite trapezoid rules on the uniform grid, so every table is
second order in ``h``. Evaluations at time differences ``t_i - s_j`` use the sample at
lag ``i - j``.
"""

from typing import Dict, Iterable, Optional, Tuple

import numpy as np
from scipy import linalg

from ..models.problem import ProblemInstance, TimeGrid, trapezoid_weights
from ..models.tables import (
    FTable,
    GMTables,
    MuTable,
    PropagatorTables,
    ResolventTable,
    SemigroupTable,
)
from ..utils import exceptions, logger

log = logger.LogMe("propagator")


def trapezoid_convolution(left: np.ndarray, right: np.ndarray, i: int, h: float) -> np.ndarray:
    """
    Trapezoid approximation of ``int_0^{t_i} left(t_i - s) right(s) ds``.

    :param left: Blocks sampled at lags, shape ``(>= i+1, n, n)``.
    :type left: numpy.ndarray
    :param right: Blocks sampled at nodes, shape ``(>= i+1, n, k)``.
    :type right: numpy.ndarray
    :param i: Upper node index.
    :type i: int
    :param h: Step.
    :type h: float
    :return: An ``n x k`` block.
    :rtype: numpy.ndarray
    """
    weights = trapezoid_weights(i + 1, h)
    return np.tensordot(weights, left[i::-1] @ right[: i + 1], axes=1)


def compute_semigroup(A: np.ndarray, grid: TimeGrid) -> SemigroupTable:
    """
    Sample ``exp(t A)`` at the grid nodes.

    ``E_1 = expm(h A)`` by scaling and squaring, then ``E_i = E_{i-1} E_1``.

    :param A: The generator.
    :type A: numpy.ndarray
    :param grid: The time grid.
    :type grid: TimeGrid
    :raises SemigroupOverflowError: If a power leaves the finite range.
    :return: The semigroup table.
    :rtype: SemigroupTable
    """
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    blocks = np.empty((grid.N + 1, n, n))
    blocks[0] = np.eye(n)
    step = linalg.expm(grid.h * A)
    if not np.all(np.isfinite(step)):
        raise exceptions.SemigroupOverflowError(reason="exp(hA) is not finite", node=1)
    for i in range(1, grid.N + 1):
        blocks[i] = blocks[i - 1] @ step
        if not np.all(np.isfinite(blocks[i])):
            log.error(f"Semigroup overflow at node {i}")
            raise exceptions.SemigroupOverflowError(
                reason="spectral abscissa times T too large", node=i
            )
    return SemigroupTable(blocks=blocks)


def compute_mu(semigroup: SemigroupTable, K: np.ndarray, grid: TimeGrid) -> MuTable:
    """
    ``mu_i = sum_j w_j E_{i-j} K(t_j)`` with trapezoid weights on ``[0, t_i]``.

    :param semigroup: Semigroup on the grid.
    :type semigroup: SemigroupTable
    :param K: Kernel blocks, shape ``(N+1, n, n)``.
    :type K: numpy.ndarray
    :param grid: The time grid.
    :type grid: TimeGrid
    :return: The table of ``mu``; ``mu_0 = 0`` exactly.
    :rtype: MuTable
    """
    E = semigroup.blocks
    blocks = np.zeros_like(E)
    for i in range(1, grid.N + 1):
        blocks[i] = trapezoid_convolution(E, K, i, grid.h)
    return MuTable(blocks=blocks)


def compute_resolvent(mu: MuTable, grid: TimeGrid) -> ResolventTable:
    """
    Solve ``R_i - sum_j w_j mu_{i-j} R_j = -mu_i`` node by node.

    The diagonal term carries ``mu_0 = 0`` so the recurrence is explicit.

    :param mu: Table of ``mu``.
    :type mu: MuTable
    :param grid: The time grid.
    :type grid: TimeGrid
    :return: The resolvent table.
    :rtype: ResolventTable
    """
    h = grid.h
    mu_blocks = mu.blocks
    blocks = np.zeros_like(mu_blocks)
    blocks[0] = -mu_blocks[0]
    for i in range(1, grid.N + 1):
        weights = np.full(i, h)
        weights[0] = 0.5 * h
        history = np.tensordot(weights, mu_blocks[i:0:-1] @ blocks[:i], axes=1)
        blocks[i] = -mu_blocks[i] + history
    return ResolventTable(blocks=blocks)


def compute_F(semigroup: SemigroupTable, resolvent: ResolventTable, grid: TimeGrid) -> FTable:
    """
    ``F(t_i, t_j) = E_{i-j} - int_{t_j}^{t_i} R(t_i - s) E(s - t_j) ds`` stored by lag.

    :param semigroup: Semigroup table.
    :type semigroup: SemigroupTable
    :param resolvent: Resolvent table.
    :type resolvent: ResolventTable
    :param grid: The time grid.
    :type grid: TimeGrid
    :return: Lag table with ``F_0 = I`` exactly.
    :rtype: FTable
    """
    E = semigroup.blocks
    R = resolvent.blocks
    blocks = np.empty_like(E)
    blocks[0] = E[0]
    for d in range(1, grid.N + 1):
        blocks[d] = E[d] - trapezoid_convolution(R, E, d, grid.h)
    return FTable(blocks=blocks)


def compute_GM(
    semigroup: SemigroupTable,
    mu: MuTable,
    resolvent: ResolventTable,
    tau_index: int,
    grid: TimeGrid,
) -> GMTables:
    """
    History kernels ``G`` and ``M`` for the initial node ``p = tau_index``.

    ``G_{i,j} = mu_{i-j} - E_{i-p} mu_{p-j}`` and
    ``M_{i,j} = G_{i,j} - trapezoid_{k=p..i} R_{i-k} G_{k,j}`` for ``j <= p <= i``.

    :param semigroup: Semigroup table.
    :type semigroup: SemigroupTable
    :param mu: Table of ``mu``.
    :type mu: MuTable
    :param resolvent: Resolvent table.
    :type resolvent: ResolventTable
    :param tau_index: Initial node ``p``.
    :type tau_index: int
    :param grid: The time grid.
    :type grid: TimeGrid
    :raises GridError: If ``tau_index`` is outside ``[0, N]``.
    :return: Both tables, indexed ``[i - p, p - j]``.
    :rtype: GMTables
    """
    if not 0 <= tau_index <= grid.N:
        raise exceptions.GridError(reason=f"tau_index {tau_index} outside [0, {grid.N}]")
    E, mu_blocks, R = semigroup.blocks, mu.blocks, resolvent.blocks
    forward = grid.N - tau_index + 1
    backward = tau_index + 1

    lags = np.arange(forward)[:, None] + np.arange(backward)[None, :]
    G = mu_blocks[lags] - E[:forward, None] @ mu_blocks[None, :backward]

    M = np.empty_like(G)
    M[0] = G[0]
    for a in range(1, forward):
        weights = trapezoid_weights(a + 1, grid.h)
        M[a] = G[a] - np.einsum(
            "k,kxy,kbyz->bxz", weights, R[a::-1], G[: a + 1], optimize=True
        )
    return GMTables(tau_index=tau_index, G=G, M=M)


def build_propagator(
    instance: ProblemInstance, tau_index: Optional[int] = None
) -> PropagatorTables:
    """
    Build all propagator tables for ``instance``, re-based at ``tau_index`` when given.

    :param instance: The problem.
    :type instance: ProblemInstance
    :param tau_index: Initial node for ``G``/``M``; defaults to the instance's.
    :type tau_index: Optional[int]
    :return: The tables.
    :rtype: PropagatorTables
    """
    grid = instance.grid
    tau_index = instance.tau_index if tau_index is None else tau_index
    kernel = instance.kernel_blocks()
    semigroup = compute_semigroup(instance.A, grid)
    mu = compute_mu(semigroup, kernel, grid)
    resolvent = compute_resolvent(mu, grid)
    growth = resolvent_growth(resolvent)
    if growth > instance.tolerances.resolvent_flag:
        log.warning(f"Resolvent growth {growth:.3e} exceeds flag level")
    log.debug(f"Propagator tables built (N={grid.N}, n={instance.n}, max|R|={growth:.3e})")
    return PropagatorTables(
        grid=grid,
        kernel=kernel,
        semigroup=semigroup,
        mu=mu,
        resolvent=resolvent,
        F=compute_F(semigroup, resolvent, grid),
        gm=compute_GM(semigroup, mu, resolvent, tau_index, grid),
    )


def rebase(prop: PropagatorTables, tau_index: int) -> PropagatorTables:
    """The same tables with ``G``/``M`` recomputed for another initial node."""
    if tau_index == prop.tau_index:
        return prop
    gm = compute_GM(prop.semigroup, prop.mu, prop.resolvent, tau_index, prop.grid)
    return prop.model_copy(update={"gm": gm})


def resolvent_growth(resolvent: ResolventTable) -> float:
    """``max_i ||R_i||_max``."""
    return float(np.max(resolvent.max_norm()))


def volterra_residual(mu: MuTable, resolvent: ResolventTable, grid: TimeGrid) -> float:
    """Max-norm residual of the discrete resolvent equation over all nodes."""
    R = resolvent.blocks
    residual = 0.0
    for i in range(grid.N + 1):
        defect = R[i] - trapezoid_convolution(mu.blocks, R, i, grid.h) + mu.blocks[i]
        residual = max(residual, float(np.max(np.abs(defect))))
    return residual


def iterated_resolvent(mu: MuTable, grid: TimeGrid, terms: int = 3) -> np.ndarray:
    """
    Truncated series ``R = -(mu + mu*mu + mu*mu*mu + ...)`` with discrete convolutions.

    Only meaningful when ``||mu||`` is small; used as an oracle for the stepped resolvent.

    :param mu: Table of ``mu``.
    :type mu: MuTable
    :param grid: The time grid.
    :type grid: TimeGrid
    :param terms: Number of series terms.
    :type terms: int
    :return: Blocks of shape ``(N+1, n, n)``.
    :rtype: numpy.ndarray
    """
    term = np.array(mu.blocks)
    total = np.array(term)
    for _ in range(terms - 1):
        nxt = np.zeros_like(term)
        for i in range(1, grid.N + 1):
            nxt[i] = trapezoid_convolution(mu.blocks, term, i, grid.h)
        term = nxt
        total += term
    return -total


def semigroup_defect(
    semigroup: SemigroupTable, pairs: Optional[Iterable[Tuple[int, int]]] = None
) -> float:
    """
    Relative defect of ``E_{i+j} = E_i E_j`` over sampled pairs.

    :param semigroup: Semigroup table.
    :type semigroup: SemigroupTable
    :param pairs: Index pairs with ``i + j <= N``; a spread of pairs by default.
    :type pairs: Optional[Iterable[Tuple[int, int]]]
    :return: ``max ||E_{i+j} - E_i E_j|| / (1 + ||E_{i+j}||)``.
    :rtype: float
    """
    E = semigroup.blocks
    N = semigroup.N
    if pairs is None:
        samples = sorted({0, 1, N // 4, N // 3, N // 2})
        pairs = [(i, j) for i in samples for j in samples if i + j <= N]
    worst = 0.0
    for i, j in pairs:
        scale = 1.0 + float(np.max(np.abs(E[i + j])))
        worst = max(worst, float(np.max(np.abs(E[i + j] - E[i] @ E[j]))) / scale)
    return worst


def banali_residuals(prop: PropagatorTables) -> Dict[str, float]:
    """
    Elementary identities at the instance's initial node ``p``.

    ``mu(0) = 0``, ``E(0) = I``, ``F(t, t) = I``, ``G(tau, s, tau) = 0``,
    ``M(tau, s, tau) = 0`` and ``M(t, tau, tau) = -R(t - tau)``.

    :return: Max-norm residual per identity.
    :rtype: Dict[str, float]
    """
    n = prop.n
    gm = prop.gm
    forward = gm.M.shape[0]
    identity = np.eye(n)
    return {
        "mu(0)=0": float(np.max(np.abs(prop.mu.blocks[0]))),
        "E(0)=I": float(np.max(np.abs(prop.semigroup.blocks[0] - identity))),
        "F(t,t)=I": float(np.max(np.abs(prop.F.blocks[0] - identity))),
        "G(tau,s,tau)=0": float(np.max(np.abs(gm.G[0]))),
        "M(tau,s,tau)=0": float(np.max(np.abs(gm.M[0]))),
        "M(t,tau,tau)=-R(t-tau)": float(
            np.max(np.abs(gm.M[:, 0] + prop.resolvent.blocks[:forward]))
        ),
    }


def derivative_tolerance(A: np.ndarray, kernel: np.ndarray, h: float) -> float:
    """
    Scaled ``O(h^2)`` tolerance for the centered-difference derivative identities.

    :return: ``h^2 (1 + ||A||_max + max |K|)^3``.
    :rtype: float
    """
    scale = 1.0 + float(np.max(np.abs(A))) + float(np.max(np.abs(kernel)))
    return h * h * scale**3


def derivative_residuals(prop: PropagatorTables, A: np.ndarray) -> Dict[str, float]:
    """
    Derivative identities checked by centered differences at interior nodes.

    - ``mu'(t) = K(t) + mu(t) A``
    - ``R'(t) = -K(t) + R(t) A + int_0^t K(t - s) R(s) ds``
    - ``d/dtau F(t, tau) = -F(t, tau) A + R(t - tau)``
    - ``d/dtau M(t, s, tau) = -F(t, tau) K(tau - s)``

    :param prop: Propagator tables (``G``/``M`` are recomputed at the mid node).
    :type prop: PropagatorTables
    :param A: The generator.
    :type A: numpy.ndarray
    :return: Max-norm residual per identity.
    :rtype: Dict[str, float]
    """
    grid = prop.grid
    h, N = grid.h, grid.N
    if N < 4:
        raise exceptions.GridError(reason="derivative identities need N >= 4")
    K = prop.kernel
    mu, R, F = prop.mu.blocks, prop.resolvent.blocks, prop.F.blocks

    inner = slice(1, N)
    dmu = (mu[2:] - mu[:-2]) / (2 * h)
    mu_res = dmu - (K[inner] + mu[inner] @ A)

    dR = (R[2:] - R[:-2]) / (2 * h)
    memory = np.array([trapezoid_convolution(K, R, i, h) for i in range(1, N)])
    R_res = dR - (-K[inner] + R[inner] @ A + memory)

    dF = (F[:-2] - F[2:]) / (2 * h)
    F_res = dF - (-F[inner] @ A + R[inner])

    mid = N // 2
    gm = compute_GM(prop.semigroup, prop.mu, prop.resolvent, mid, grid)
    M = gm.M
    forward, backward = M.shape[0], M.shape[1]
    a = np.arange(1, forward - 1)[:, None]
    b = np.arange(1, backward - 1)[None, :]
    dM = (M[a - 1, b + 1] - M[a + 1, b - 1]) / (2 * h)
    M_res = dM + F[a] @ K[b]

    return {
        "mu'": float(np.max(np.abs(mu_res))),
        "R'": float(np.max(np.abs(R_res))),
        "dF/dtau": float(np.max(np.abs(F_res))),
        "dM/dtau": float(np.max(np.abs(M_res))),
    }
