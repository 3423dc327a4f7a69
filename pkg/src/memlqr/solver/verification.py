"""
The identity suite behind ``memlqr verify``.

Every check becomes one :class:`~memlqr.models.report.ResidualRow` carrying its tolerance.
Exact discrete identities are held to round-off bounds, discretization statements to
scheme-order bounds.
"""

import asyncio
from typing import List, Optional

import numpy as np

from ..models.problem import ProblemInstance
from ..models.report import ResidualRow
from ..models.settings import RunSettings
from ..models.solution import AugmentedState, OpenLoopSolution
from ..models.tables import PropagatorTables
from ..utils import logger
from . import closedloop, openloop, propagator, riccati, synthesis

# derivative identities and adjoint formulas are only run on small systems
DERIVATIVE_MAX_DIMENSION = 3


def instance_scale(instance: ProblemInstance) -> float:
    """``1 + ||A|| + ||B||^2 + max|K|`` in max norms."""
    return (
        1.0
        + float(np.max(np.abs(instance.A)))
        + float(np.max(np.abs(instance.B))) ** 2
        + float(np.max(np.abs(instance.kernel_blocks())))
    )


def scheme_tolerance(instance: ProblemInstance, order: int) -> float:
    """``10 h^order scale^(order+1)`` for statements that hold up to the discretization error."""
    return 10.0 * instance.h**order * instance_scale(instance) ** (order + 1)


class VerificationSuite:
    """
    Runs every identity check on one instance.

    :param instance: The problem.
    :type instance: ProblemInstance
    :param settings: Scheme and concurrency options.
    :type settings: RunSettings
    :param prop: Propagator tables, built when omitted.
    :type prop: Optional[PropagatorTables]
    """

    def __init__(
        self,
        instance: ProblemInstance,
        settings: RunSettings,
        prop: Optional[PropagatorTables] = None,
    ):
        self.log = logger.LogMe(self.__class__.__name__)
        self.instance = instance
        self.settings = settings
        self.prop = prop or propagator.build_propagator(instance)
        self.rows: List[ResidualRow] = []
        self.warnings: List[str] = []
        self.order = settings.order
        self.tol = scheme_tolerance(instance, self.order)

    def add(self, name: str, value: Optional[float], tolerance: Optional[float], note=None):
        row = ResidualRow(name=name, value=value, tolerance=tolerance, note=note)
        if row.failed:
            self.log.warning(f"Check '{name}' failed: {value:.3e} > {tolerance:.3e}")
        self.rows.append(row)

    def skip(self, name: str, note: str):
        self.rows.append(ResidualRow(name=name, note=note))

    @property
    def small(self) -> bool:
        return self.instance.n <= DERIVATIVE_MAX_DIMENSION

    def check_propagator(self):
        prop, tol = self.prop, self.instance.tolerances
        growth = propagator.resolvent_growth(prop.resolvent)
        exact = 1e-10 * (1.0 + growth)
        for name, value in propagator.banali_residuals(prop).items():
            self.add(f"propagator: {name}", value, exact)
        self.add(
            "propagator: semigroup property",
            propagator.semigroup_defect(prop.semigroup),
            tol.exp_tol,
        )
        self.add(
            "propagator: resolvent equation",
            propagator.volterra_residual(prop.mu, prop.resolvent, prop.grid),
            tol.res_tol * (1.0 + growth),
        )
        note = "flagged" if growth > tol.resolvent_flag else None
        if note:
            self.warnings.append(f"resolvent growth {growth:.3e} exceeds {tol.resolvent_flag:.1e}")
        self.add("propagator: resolvent growth", growth, None, note=note)

        names = ("mu'", "R'", "dF/dtau", "dM/dtau")
        if not self.small or self.instance.grid.N < 4:
            for name in names:
                reason = f"requires n <= {DERIVATIVE_MAX_DIMENSION}, N >= 4"
                self.skip(f"derivative: {name}", reason)
            return
        bound = propagator.derivative_tolerance(self.instance.A, prop.kernel, self.instance.h)
        for name, value in propagator.derivative_residuals(prop, self.instance.A).items():
            self.add(f"derivative: {name}", value, bound)

    def check_open_loop(self) -> OpenLoopSolution:
        instance, prop = self.instance, self.prop
        solution = openloop.solve_open_loop(instance, prop)
        scale_u = 1.0 + float(np.max(np.abs(solution.u_hat)))
        scale_J = 1.0 + solution.J
        self.add("openloop: normal equations residual", solution.residual, 1e-10)
        self.add(
            "openloop: coercivity deficit", max(0.0, 1.0 - solution.coercivity_margin), 1e-8
        )
        self.add(
            "openloop: cost below free response",
            max(0.0, solution.J - solution.J_free),
            1e-12 * (1.0 + solution.J_free),
        )
        lu = openloop.solve_open_loop(instance, prop, method="lu")
        self.add(
            "openloop: LU and Cholesky agree",
            float(np.max(np.abs(lu.u_hat - solution.u_hat))),
            1e-8 * scale_u,
        )
        direction = np.random.default_rng(0).standard_normal(solution.u_hat.shape)
        probe = openloop.optimality_probe(instance, solution, direction, 1e-4, prop=prop)
        self.add("openloop: optimality probe", abs(probe), 1e-7 * scale_J)

        gap, constant = openloop.representation_gap(instance, prop, solution)
        self.add("openloop: representation gap", gap, None, note=f"gap/h^2 = {constant:.4g}")

        p, N = instance.tau_index, instance.grid.N
        restart = p + (N - p) // 2
        if restart > p:
            self.add(
                "openloop: transition property",
                openloop.transition_residual(instance, prop, solution, restart),
                10.0 * instance.h**2,
            )
        else:
            self.skip("openloop: transition property", "no interior restart node")
        return solution

    async def check_synthesis(self, solution: OpenLoopSolution):
        instance, prop = self.instance, self.prop
        p, N = instance.tau_index, instance.grid.N
        tables, ops = await asyncio.to_thread(synthesis.synthesize, prop, instance, p)
        P_scale = 1.0 + ops.norm()
        key_tol = instance.tolerances.key_lemma_tol * P_scale
        for name, value in zip(
            ("P0", "P1", "P2"), synthesis.key_lemma_residuals(prop, tables, instance.Q)
        ):
            self.add(f"synthesis: key lemma {name}", value, key_tol)

        projected = synthesis.compute_Z(prop, instance, tables, route="projection")
        route_gap = max(
            np.max(np.abs(projected.z1 - tables.z1)), np.max(np.abs(projected.z2 - tables.z2))
        )
        self.add(
            "synthesis: Z assembly routes agree",
            float(route_gap),
            1e-8 * (1.0 + float(np.max(np.abs(tables.z1)))),
        )

        # zero weights when p = 0
        hist_w = instance.grid.weights(0, p)[:, None] * instance.init.path
        u_psi = tables.psi1 @ instance.init.xi0 + np.einsum("asmy,sy->am", tables.psi2, hist_w)
        w_z = tables.z1 @ instance.init.xi0 + np.einsum("asxy,sy->ax", tables.z2, hist_w)
        scale_u = 1.0 + float(np.max(np.abs(solution.u_hat)))
        self.add(
            "synthesis: control from Psi",
            float(np.max(np.abs(u_psi - solution.u_hat))),
            1e-10 * scale_u,
        )
        self.add(
            "synthesis: state from Z",
            float(np.max(np.abs(w_z - solution.w_hat))),
            1e-9 * (1.0 + float(np.max(np.abs(solution.w_hat)))),
        )
        self.add(
            "synthesis: optimal cost form",
            abs(synthesis.optimal_cost_via_P(ops, instance.init, instance.grid) - solution.J),
            1e-8 * (1.0 + solution.J),
        )
        drift_tol = instance.tolerances.drift_tol * P_scale
        for name, value in ops.symmetry_defect().items():
            self.add(f"synthesis: {name} symmetry", value, drift_tol)

        if self.small:
            for name, value in synthesis.adjoint_residuals(prop, instance, tables).items():
                self.add(f"adjoint: {name}", value, 1e-9)
        else:
            for name in ("Psi1*", "Psi2*", "Z1*", "Z2*"):
                self.skip(f"adjoint: {name}", f"requires n <= {DERIVATIVE_MAX_DIMENSION}")

        if N - p >= 2:
            nodes = sorted({p, (p + N) // 2, N - 1})
            residual = await synthesis.feedback_consistency(
                prop, instance, solution, nodes, max_concurrency=self.settings.threads
            )
            self.add(
                "synthesis: feedback consistency",
                residual,
                10.0 * instance.h**2 * instance_scale(instance) ** 2,
            )
            sweep = await synthesis.cost_ops_sweep(
                prop, instance, sorted({p, (p + N) // 2, N}), self.settings.threads
            )
            self.add(
                "synthesis: horizon monotonicity",
                max(0.0, synthesis.horizon_monotonicity(sweep)),
                drift_tol,
            )
        return ops

    def check_riccati(self, solution: OpenLoopSolution, ops):
        instance = self.instance
        p, N = instance.tau_index, instance.grid.N
        mid = (p + N) // 2
        extra = {mid - 1, mid, mid + 1} & set(range(N + 1))
        ric = riccati.integrate_backward(
            instance,
            self.prop,
            scheme=self.settings.scheme,
            checkpoints=set(self.settings.checkpoints) | extra,
        )
        self.warnings.extend(ric.warnings)
        P_scale = 1.0 + float(np.max(np.abs(ric.P0)))

        terminal = max(
            float(np.max(np.abs(ric.P0[N]))),
            float(np.max(np.abs(ric.P1[N]))),
            float(np.max(np.abs(ric.P2[N]))),
        )
        self.add("riccati: terminal conditions", terminal, 0.0)
        for name, value in ric.drift.items():
            self.add(f"riccati: {name} drift", value, instance.tolerances.drift_tol)

        dre_tol = riccati.dre_tolerance(ric, instance)
        residuals = riccati.dre_residual(ric, instance)
        for name in ("P0", "P1", "P2"):
            if name in residuals:
                self.add(f"riccati: DRE residual {name}", residuals[name], dre_tol)
            else:
                self.skip(f"riccati: DRE residual {name}", "not enough interior nodes")

        gaps = riccati.cross_route_gaps(ric, {p: ops})[p]
        for name, value in zip(("P0", "P1", "P2"), gaps):
            self.add(f"riccati: cross-route {name}", value, self.tol * P_scale)

        if instance.K.is_zero:
            reference = riccati.integrate_standard_riccati(
                instance.A, instance.B, instance.Q, instance.grid, scheme=self.settings.scheme
            )
            memory = max(
                max(float(np.max(np.abs(P1))) for P1 in ric.P1),
                max(float(np.max(np.abs(P2))) for P2 in ric.P2.values()),
            )
            self.add("riccati: memoryless P1, P2", memory, 1e-12)
            self.add(
                "riccati: memoryless P0",
                float(np.max(np.abs(ric.P0 - reference))),
                1e-10 * P_scale,
            )
        else:
            self.skip("riccati: memoryless P1, P2", "kernel is not zero")
            self.skip("riccati: memoryless P0", "kernel is not zero")

        constants = riccati.uniqueness_probe(instance, ric)
        low, high = constants[1e-6], constants[1e-4]
        self.add(
            "riccati: terminal perturbation",
            abs(high - low) / max(low, np.finfo(float).tiny),
            1e-2,
            note=f"C = {high:.6g}",
        )

        init = instance.init
        state = AugmentedState(node=p, w=init.xi0, path=init.path)
        quadratic = riccati.assemble_bigP(ric, p).quadratic_form(state)
        self.add(
            "riccati: optimal cost form",
            abs(quadratic - solution.J),
            self.tol * (1.0 + solution.J),
        )
        return ric

    async def check_closed_loop(self, solution: OpenLoopSolution, ric):
        instance = self.instance
        p, N = instance.tau_index, instance.grid.N
        law = riccati.feedback_gains(ric, instance.B)
        stepper = self.settings.stepper
        trajectory = await asyncio.to_thread(
            closedloop.simulate_feedback, instance, law, stepper
        )
        scale_u = 1.0 + float(np.max(np.abs(solution.u_hat)))
        self.add(
            "closedloop: control gap",
            float(np.max(np.abs(trajectory.u - solution.u_hat))) / scale_u,
            self.tol,
        )
        self.add(
            "closedloop: cost gap",
            abs(trajectory.J_cl - solution.J) / (1.0 + solution.J),
            self.tol,
        )
        mid = (p + N) // 2
        self.add(
            "closedloop: value consistency",
            closedloop.value_consistency(instance, law, ric, mid, trajectory),
            self.tol * (1.0 + solution.J),
        )
        profile = closedloop.value_profile(instance, ric, trajectory)
        forms = [form for _, form in profile.values()]
        self.add(
            "closedloop: value nonincreasing",
            max(0.0, float(np.max(np.diff(forms), initial=0.0))),
            self.tol * (1.0 + solution.J),
        )

        if N - p < 3:
            self.skip("closedloop: evolution composition", "horizon too short")
            self.skip("closedloop: linearity", "horizon too short")
            return trajectory
        j = p + 1
        k = j + (N - j) // 2
        start = closedloop.augmented_at(trajectory, j)
        direct = closedloop.evolution_apply(instance, law, j, N, start, stepper)
        middle = closedloop.evolution_apply(instance, law, j, k, start, stepper)
        composed = closedloop.evolution_apply(instance, law, k, N, middle, stepper)
        size = 1.0 + float(np.max(np.abs(direct.path)))
        self.add(
            "closedloop: evolution composition",
            float(np.max(np.abs(composed.path - direct.path))),
            1e-12 * size,
        )
        rng = np.random.default_rng(1)
        other = AugmentedState(
            node=j,
            w=rng.standard_normal(instance.n),
            path=rng.standard_normal((j + 1, instance.n)),
        )
        defect = await closedloop.linearity_defect(
            instance, law, j, N, start, other, scheme=stepper
        )
        self.add("closedloop: linearity", defect, 1e-11 * size)
        return trajectory

    async def run(self) -> List[ResidualRow]:
        """
        Run all checks in a fixed order.

        :return: One row per check.
        :rtype: List[ResidualRow]
        """
        await asyncio.to_thread(self.check_propagator)
        solution = await asyncio.to_thread(self.check_open_loop)
        ops = await self.check_synthesis(solution)
        ric = await asyncio.to_thread(self.check_riccati, solution, ops)
        await self.check_closed_loop(solution, ric)
        failed = [row.name for row in self.rows if row.failed]
        self.log.info(f"Verification finished: {len(self.rows)} rows, {len(failed)} failed")
        return self.rows
