import asyncio
import sys
from typing import List, Optional

import asyncclick as click

from .__about__ import __version__
from .models.reports.csv_report import CSVReport
from .models.reports.json_report import JSONReport
from .models.settings import RunSettings
from .solver.problem_manager import ProblemManager
from .solver.report_manager import ReportManager
from .utils.animation import Animation
from .utils.exceptions import MemlqrError
from .utils.logger import LogMe, set_debug


def parse_int_list(ctx: click.Context, param: click.Parameter, value: Optional[str]) -> List[int]:
    """Callback turning ``"10,20,40"`` into ``[10, 20, 40]``."""
    if not value:
        return []
    try:
        return [int(item) for item in value.split(",") if item.strip()]
    except ValueError:
        raise click.BadParameter(f"expected comma-separated integers, got '{value}'")


def build_manager(ctx: click.Context, **overrides) -> ReportManager:
    settings: RunSettings = ctx.obj["settings"].model_copy(update=overrides)
    animation = Animation(enable_animation=sys.stderr.isatty() and not settings.debug)
    return ReportManager(ProblemManager(), CSVReport(), JSONReport(), settings, animation)


async def run_command(ctx: click.Context, command, *args):
    log: LogMe = ctx.obj["log"]
    try:
        await command(*args)
    except MemlqrError as e:
        log.debug(f"Exiting with code {e.exit_code}")
        await ctx.aexit(e.exit_code)


@click.group()
@click.version_option(version=__version__)
@click.option(
    "--scheme",
    type=click.Choice(["heun", "euler"], case_sensitive=False),
    default="heun",
    help="Riccati scheme; euler also switches the closed-loop stepper to explicit Euler.",
)
@click.option(
    "--threads",
    type=click.IntRange(min=1),
    default=1,
    help="Maximum number of nodes or grids processed concurrently.",
)
@click.option(
    "--out",
    "-o",
    "out_dir",
    type=click.Path(file_okay=False),
    default="memlqr-out",
    help="Directory receiving CSV, JSON and binary outputs.",
)
@click.option(
    "--no-timing",
    is_flag=True,
    default=False,
    help="Leave per-phase timings out of the report so identical runs give identical files.",
)
@click.option(
    "--debug",
    "-x",
    is_flag=True,
    default=False,
    help="Enable debug logging to see detailed debug messages.",
)
@click.pass_context
async def main(
    ctx: click.Context, scheme: str, threads: int, out_dir: str, no_timing: bool, debug: bool
) -> None:
    """Optimal control of linear evolution equations with finite memory."""
    set_debug(debug)
    ctx.ensure_object(dict)
    ctx.obj["log"] = LogMe(__name__, debug=debug)
    ctx.obj["settings"] = RunSettings(
        scheme=scheme.lower(),
        threads=threads,
        out_dir=out_dir,
        timing=not no_timing,
        debug=debug,
    )


@main.command()
@click.argument("problem", type=click.Path())
@click.option(
    "--checkpoints",
    callback=parse_int_list,
    help="Extra Riccati checkpoint nodes, e.g. 10,50,90.",
)
@click.option(
    "--dump-tables",
    is_flag=True,
    default=False,
    help="Also write propagator and Riccati tables in binary form.",
)
@click.pass_context
async def solve(ctx: click.Context, problem: str, checkpoints: List[int], dump_tables: bool):
    """Solve PROBLEM in open loop and by Riccati feedback."""
    manager = build_manager(ctx, checkpoints=checkpoints, dump_tables=dump_tables)
    await run_command(ctx, manager.solve, problem)


@main.command()
@click.argument("problem", type=click.Path())
@click.pass_context
async def verify(ctx: click.Context, problem: str):
    """Run every identity check on PROBLEM."""
    await run_command(ctx, build_manager(ctx).verify, problem)


@main.command()
@click.argument("problem", type=click.Path())
@click.option(
    "--N",
    "grid_sizes",
    callback=parse_int_list,
    required=True,
    help="Grid sizes, at least three, e.g. 50,100,200,400.",
)
@click.pass_context
async def convergence(ctx: click.Context, problem: str, grid_sizes: List[int]):
    """Estimate observed orders of PROBLEM under grid refinement."""
    await run_command(ctx, build_manager(ctx).convergence, problem, grid_sizes)


@main.command()
@click.argument("problem", type=click.Path())
@click.pass_context
async def tables(ctx: click.Context, problem: str):
    """Build, check and dump the propagator tables of PROBLEM."""
    await run_command(ctx, build_manager(ctx).tables, problem)


if __name__ == "__main__":
    asyncio.run(main())
