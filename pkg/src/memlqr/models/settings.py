from pathlib import Path
from typing import List, Literal

from pydantic import Field

from . import Model


class RunSettings(Model):
    """
    Options shared by every CLI command.

    :ivar scheme: Riccati scheme; ``euler`` also selects the explicit closed-loop stepper.
    :ivar threads: Upper bound on concurrent per-node work.
    :ivar out_dir: Directory receiving CSV, JSON and binary outputs.
    :ivar timing: Include per-phase timings in reports.
    :ivar debug: Mirror log messages to the console.
    :ivar checkpoints: Extra Riccati checkpoint nodes.
    :ivar dump_tables: Write binary table dumps next to the report.
    """

    scheme: Literal["euler", "heun"] = "heun"
    threads: int = Field(default=1, ge=1)
    out_dir: Path = Path("memlqr-out")
    timing: bool = True
    debug: bool = False
    checkpoints: List[int] = Field(default_factory=list)
    dump_tables: bool = False

    @property
    def stepper(self) -> Literal["trapezoid", "euler"]:
        return "euler" if self.scheme == "euler" else "trapezoid"

    @property
    def order(self) -> int:
        return 1 if self.scheme == "euler" else 2
