import asyncio
import math
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import asyncclick as click
import numpy as np

from ..models.problem import ProblemInstance
from ..models.report import ConvergenceRow, InstanceDigest, ResidualRow, RunReport
from ..models.reports import table_dump
from ..models.reports.csv_report import CSVReport
from ..models.reports.json_report import JSONReport
from ..models.settings import RunSettings
from ..models.solution import AugmentedState, OpenLoopSolution, Trajectory
from ..utils import exceptions, logger
from ..utils.animation import Animation
from ..utils.decorators import phase
from . import closedloop, openloop, propagator, riccati
from .problem_manager import ProblemManager
from .verification import VerificationSuite, scheme_tolerance

# differences below this (relative) level count as exact
EXACT_FLOOR = 1e-13
ORDER_SLACK = 0.4


def scalar_oracle(instance: ProblemInstance) -> Optional[float]:
    """
    Closed-form optimal cost of ``w' = b u`` with weight ``q`` started at ``t = 0``.

    :return: ``sqrt(q)/|b| tanh(|b| sqrt(q) T) xi0^2``, or None when the instance is not of
        that form.
    :rtype: Optional[float]
    """
    if instance.n != 1 or instance.m != 1 or instance.tau_index != 0:
        return None
    if not instance.K.is_zero or instance.A[0, 0] != 0.0:
        return None
    b, q = abs(float(instance.B[0, 0])), float(instance.Q[0, 0])
    if b == 0.0:
        return None
    root = math.sqrt(q)
    return root / b * math.tanh(b * root * instance.T) * float(instance.init.xi0[0]) ** 2


def estimate_orders(
    Ns: Sequence[int], values: Sequence[float], reference: Optional[float] = None
) -> Tuple[List[Optional[float]], List[Optional[Union[float, str]]]]:
    """
    Errors and observed orders of a quantity on a sequence of refined grids.

    With a reference the errors are measured against it and orders come from ratios of
    consecutive errors. Without one the finest grid is the reference for the errors and the
    orders come from ratios of consecutive differences, which do not depend on it.

    :param Ns: Increasing grid sizes.
    :type Ns: Sequence[int]
    :param values: The quantity on each grid.
    :type values: Sequence[float]
    :param reference: Exact value when known.
    :type reference: Optional[float]
    :return: Errors and orders per grid; every order is ``"exact"`` when nothing moves.
    :rtype: Tuple[List[Optional[float]], List[Optional[Union[float, str]]]]
    """
    values = [float(v) for v in values]
    target = values[-1] if reference is None else reference
    errors = [abs(v - target) for v in values]
    floor = EXACT_FLOOR * (1.0 + max(abs(v) for v in values))

    if reference is None:
        sizes = [0.0] + [abs(values[k] - values[k - 1]) for k in range(1, len(values))]
        first = 2
    else:
        sizes = errors
        first = 1
    if max(errors + sizes) <= floor:
        return errors, ["exact"] * len(values)

    orders: List[Optional[Union[float, str]]] = [None] * len(values)
    for k in range(first, len(values)):
        previous, current = sizes[k - 1], sizes[k]
        if previous > floor and current > floor:
            orders[k] = math.log(previous / current) / math.log(Ns[k] / Ns[k - 1])
    return errors, orders


class ReportManager:
    """
    Runs the ``solve``, ``verify``, ``convergence`` and ``tables`` commands.

    Each command loads and validates the problem before anything is written, runs its
    phases in worker threads behind the spinner and writes its outputs into
    ``settings.out_dir``.
    """

    def __init__(
        self,
        problem_manager: ProblemManager,
        csv_report: CSVReport,
        json_report: JSONReport,
        settings: RunSettings,
        animation: Optional[Animation] = None,
    ):
        """
        :param problem_manager: Loads and validates problem files.
        :type problem_manager: :class:`~memlqr.solver.problem_manager.ProblemManager`
        :param csv_report: Writes trajectories and convergence tables.
        :type csv_report: :class:`~memlqr.models.reports.csv_report.CSVReport`
        :param json_report: Writes run reports.
        :type json_report: :class:`~memlqr.models.reports.json_report.JSONReport`
        :param settings: Global command-line options.
        :type settings: :class:`~memlqr.models.settings.RunSettings`
        :param animation: Spinner; disabled when omitted.
        :type animation: Optional[Animation]
        """
        self.problem_manager = problem_manager
        self.csv_report = csv_report
        self.json_report = json_report
        self.settings = settings
        self.animation = animation or Animation(enable_animation=False)
        self.log = logger.LogMe(self.__class__.__name__, debug=settings.debug)
        self.timings: Dict[str, float] = {}

    @property
    def out_dir(self) -> Path:
        return Path(self.settings.out_dir).expanduser()

    def _report(self, command: str, instance: ProblemInstance, **fields) -> RunReport:
        timing = dict(sorted(self.timings.items())) if self.settings.timing else None
        return RunReport(
            command=command,
            instance=InstanceDigest.from_instance(instance),
            timing=timing,
            **fields,
        )

    def _finish(self, report: RunReport) -> RunReport:
        self.json_report.export(report, self.out_dir / "report.json")
        if report.failed:
            raise exceptions.VerificationError(failed=report.failed)
        self._success(report)
        return report

    def _success(self, report: RunReport):
        self.log.debug(f"Command '{report.command}' finished, outputs in {self.out_dir}")
        rows = [row for row in report.residuals if row.status == "pass"]
        click.echo(
            click.style(
                f"\rSuccess! {report.command}: {len(rows)} checks passed, "
                f"outputs saved to {self.out_dir}",
                bold=True,
                fg="green",
            )
        )

    @phase("load")
    async def _load(self, path: Union[str, Path]) -> ProblemInstance:
        return await asyncio.to_thread(self.problem_manager.load_problem, path)

    @phase("propagate")
    async def _propagate(self, instance: ProblemInstance):
        return await asyncio.to_thread(propagator.build_propagator, instance)

    @phase("open loop")
    async def _open_loop(self, instance: ProblemInstance, prop) -> OpenLoopSolution:
        return await asyncio.to_thread(openloop.solve_open_loop, instance, prop)

    @phase("riccati")
    async def _riccati(self, instance: ProblemInstance, prop):
        return await asyncio.to_thread(
            riccati.integrate_backward,
            instance,
            prop,
            self.settings.scheme,
            set(self.settings.checkpoints),
        )

    @phase("closed loop")
    async def _closed_loop(self, instance: ProblemInstance, law):
        return await asyncio.to_thread(
            closedloop.simulate_feedback, instance, law, self.settings.stepper
        )

    @phase("verify")
    async def _verify(self, instance: ProblemInstance, prop) -> VerificationSuite:
        suite = VerificationSuite(instance, self.settings, prop=prop)
        await suite.run()
        return suite

    @phase("export")
    async def _export_tables(self, instance: ProblemInstance, name: str, sections) -> Path:
        return await asyncio.to_thread(
            table_dump.write_tables, self.out_dir / name, instance.n, instance.grid, sections
        )

    @staticmethod
    def open_loop_trajectory(instance: ProblemInstance, solution: OpenLoopSolution) -> Trajectory:
        """The open-loop optimum as a trajectory from ``xi0``, history first in the path."""
        end = openloop.restart_state(instance, solution, instance.grid.N)
        return Trajectory(
            tau_index=solution.tau_index,
            t=solution.t,
            w=np.vstack([instance.init.xi0, solution.w_hat[1:]]),
            u=solution.u_hat,
            path=end.path,
            cost=solution.J,
        )

    async def solve(self, path: Union[str, Path]) -> RunReport:
        """
        Solve a problem by both routes and write trajectories and the report.

        Writes ``openloop.csv``, ``closedloop.csv`` and ``report.json`` (plus ``tables.bin``
        and ``riccati.bin`` with ``--dump-tables``) into the output directory.

        :param path: Problem file.
        :type path: Union[str, Path]
        :raises ProblemParseError: If the file cannot be read.
        :raises ProblemValidationError: If the problem is invalid.
        :raises NumericalError: If a numerical phase fails.
        :raises VerificationError: If a consistency row of the report fails.
        :return: The report.
        :rtype: RunReport
        """
        self.timings = {}
        async with self.animation.error_handling(self.log):
            instance = await self._load(path)
            prop = await self._propagate(instance)
            solution = await self._open_loop(instance, prop)
            ric = await self._riccati(instance, prop)
            law = riccati.feedback_gains(ric, instance.B)
            trajectory = await self._closed_loop(instance, law)

            tol = scheme_tolerance(instance, self.settings.order)
            scale_u = 1.0 + float(np.max(np.abs(solution.u_hat)))
            residuals = [
                ResidualRow(
                    name="openloop: normal equations residual",
                    value=solution.residual,
                    tolerance=1e-10,
                ),
                ResidualRow(
                    name="closedloop: control gap",
                    value=float(np.max(np.abs(trajectory.u - solution.u_hat))) / scale_u,
                    tolerance=tol,
                ),
                ResidualRow(
                    name="closedloop: cost gap",
                    value=abs(trajectory.J_cl - solution.J) / (1.0 + solution.J),
                    tolerance=tol,
                ),
            ]
            residuals += [
                ResidualRow(
                    name=f"riccati: {name} drift",
                    value=value,
                    tolerance=instance.tolerances.drift_tol,
                )
                for name, value in ric.drift.items()
            ]

            spectrum = np.linalg.eigvalsh(ric.P0[0])
            results = {
                "J_ol": solution.J,
                "J_free": solution.J_free,
                "J_cl": trajectory.J_cl,
                "P0_min_eig": float(spectrum[0]),
                "P0_max_eig": float(spectrum[-1]),
                "gain_max": float(np.max(np.abs(law.G0))),
                "gram_condition": solution.gram_condition,
            }

            self.csv_report.export_trajectory(
                self.open_loop_trajectory(instance, solution), self.out_dir / "openloop.csv"
            )
            self.csv_report.export_trajectory(trajectory, self.out_dir / "closedloop.csv")
            if self.settings.dump_tables:
                await self._export_tables(
                    instance, "tables.bin", table_dump.propagator_sections(prop)
                )
                await self._export_tables(
                    instance, "riccati.bin", table_dump.riccati_sections(ric)
                )

            self.animation.stop_event.set()
            report = self._report(
                "solve",
                instance,
                results=results,
                residuals=residuals,
                warnings=list(ric.warnings),
            )
            return self._finish(report)

    async def verify(self, path: Union[str, Path]) -> RunReport:
        """
        Run the identity suite and write ``report.json``.

        :param path: Problem file.
        :type path: Union[str, Path]
        :raises VerificationError: If any row fails.
        :return: The report.
        :rtype: RunReport
        """
        self.timings = {}
        async with self.animation.error_handling(self.log):
            instance = await self._load(path)
            prop = await self._propagate(instance)
            suite = await self._verify(instance, prop)
            self.animation.stop_event.set()
            report = self._report(
                "verify", instance, residuals=suite.rows, warnings=suite.warnings
            )
            return self._finish(report)

    def _grid_quantities(self, instance: ProblemInstance) -> Dict[str, float]:
        prop = propagator.build_propagator(instance)
        solution = openloop.solve_open_loop(instance, prop)
        ric = riccati.integrate_backward(instance, prop, scheme=self.settings.scheme)
        init = instance.init
        state = AugmentedState(node=instance.tau_index, w=init.xi0, path=init.path)
        J_ric = riccati.assemble_bigP(ric, instance.tau_index).quadratic_form(state)
        law = riccati.feedback_gains(ric, instance.B)
        trajectory = closedloop.simulate_feedback(instance, law, self.settings.stepper)
        self.log.debug(f"N={instance.grid.N}: J_ol={solution.J:.12g}, J_ric={J_ric:.12g}")
        return {
            "J_ol": solution.J,
            "J_ric": J_ric,
            "J_cl": trajectory.J_cl,
            "gap": abs(trajectory.J_cl - solution.J),
            # the terminal open-loop sample is -(h/2) B^T Q w(T), an O(h) endpoint value
            "u_gap": float(
                np.max(np.abs(trajectory.u[:-1] - solution.u_hat[:-1]), initial=0.0)
            ),
        }

    @phase("convergence")
    async def _sweep(self, instances: List[ProblemInstance]) -> List[Dict[str, float]]:
        semaphore = asyncio.Semaphore(self.settings.threads)

        async def run(instance: ProblemInstance) -> Dict[str, float]:
            async with semaphore:
                return await asyncio.to_thread(self._grid_quantities, instance)

        return list(await asyncio.gather(*(run(instance) for instance in instances)))

    async def convergence(self, path: Union[str, Path], Ns: Sequence[int]) -> RunReport:
        """
        Solve on a sequence of grids and estimate observed orders.

        Errors are measured against the closed-form value for scalar memoryless problems
        started at ``t = 0`` and against the finest grid otherwise. The finest observed
        orders of ``J_ol`` (nominal 2) and of ``J_ric``, the open/closed cost gap and the control
        gap before ``T`` (nominal scheme order) must lie within 0.4 of nominal. Writes
        ``convergence.csv`` and ``report.json``.

        :param path: Problem file with a regriddable kernel and history.
        :type path: Union[str, Path]
        :param Ns: Grid sizes, at least three distinct.
        :type Ns: Sequence[int]
        :raises GridError: If fewer than three sizes are given or ``tau`` leaves the grid.
        :raises VerificationError: If an order falls outside its band.
        :return: The report.
        :rtype: RunReport
        """
        self.timings = {}
        Ns = sorted(set(int(N) for N in Ns))
        if len(Ns) < 3:
            raise exceptions.GridError(reason="convergence needs at least three grid sizes")
        async with self.animation.error_handling(self.log):
            instance = await self._load(path)
            instances = [self.problem_manager.regrid(instance, N) for N in Ns]
            quantities = await self._sweep(instances)

            oracle = scalar_oracle(instance)
            references = {
                "J_ol": oracle,
                "J_ric": oracle,
                "J_cl": oracle,
                "gap": 0.0,
                "u_gap": 0.0,
            }
            order = self.settings.order
            nominal = {"J_ol": 2, "J_ric": order, "gap": order, "u_gap": order}
            rows: List[ConvergenceRow] = []
            residuals: List[ResidualRow] = []
            for name, reference in references.items():
                values = [q[name] for q in quantities]
                errors, orders = estimate_orders(Ns, values, reference)
                rows += [
                    ConvergenceRow(
                        N=N, h=inst.h, quantity=name, value=v, error=e, order=o
                    )
                    for N, inst, v, e, o in zip(Ns, instances, values, errors, orders)
                ]
                if name not in nominal:
                    continue
                row_name = f"convergence: {name} order"
                if orders[-1] == "exact":
                    residuals.append(
                        ResidualRow(name=row_name, value=0.0, tolerance=0.0, note="exact")
                    )
                    continue
                observed = [o for o in orders if isinstance(o, float)]
                if not observed:
                    residuals.append(
                        ResidualRow(name=row_name, note="errors below round-off level")
                    )
                    continue
                residuals.append(
                    ResidualRow(
                        name=row_name,
                        value=abs(observed[-1] - nominal[name]),
                        tolerance=ORDER_SLACK,
                        note=f"observed {observed[-1]:.3f}, nominal {nominal[name]}",
                    )
                )

            self.csv_report.export_convergence(rows, self.out_dir / "convergence.csv")
            self.animation.stop_event.set()
            results = {f"{name}@{Ns[-1]}": quantities[-1][name] for name in references}
            if oracle is not None:
                results["oracle"] = oracle
            report = self._report(
                "convergence", instance, results=results, residuals=residuals, convergence=rows
            )
            return self._finish(report)

    async def tables(self, path: Union[str, Path]) -> RunReport:
        """
        Build the propagator tables, check them and dump them to ``tables.bin``.

        :param path: Problem file.
        :type path: Union[str, Path]
        :raises VerificationError: If a table identity fails.
        :return: The report.
        :rtype: RunReport
        """
        self.timings = {}
        async with self.animation.error_handling(self.log):
            instance = await self._load(path)
            prop = await self._propagate(instance)
            suite = VerificationSuite(instance, self.settings, prop=prop)
            await asyncio.to_thread(suite.check_propagator)
            await self._export_tables(instance, "tables.bin", table_dump.propagator_sections(prop))
            self.animation.stop_event.set()
            report = self._report(
                "tables",
                instance,
                results={"resolvent_growth": propagator.resolvent_growth(prop.resolvent)},
                residuals=suite.rows,
                warnings=suite.warnings,
            )
            return self._finish(report)
