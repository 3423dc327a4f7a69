import math
from typing import Dict, List, Literal, Optional, Union

from pydantic import ConfigDict, Field, model_validator

from . import Model
from .problem import ProblemInstance

SCHEMA = "memlqr-report/1"


class ResidualRow(Model):
    """
    One line of a verification table.

    ``status`` is derived when not given: ``skip`` without a value, ``info`` without a
    tolerance, otherwise ``pass`` when the value is finite and within the tolerance.

    :ivar name: Identity or check name.
    :ivar value: Measured residual.
    :ivar tolerance: Bound the value is held to.
    :ivar status: ``pass``, ``fail``, ``skip`` or ``info``.
    :ivar note: Optional free text (skip reason, constant estimate).
    """

    name: str
    value: Optional[float] = None
    tolerance: Optional[float] = None
    status: Literal["pass", "fail", "skip", "info"] = "info"
    note: Optional[str] = None

    @model_validator(mode="before")
    @classmethod
    def derive_status(cls, data):
        if not isinstance(data, dict) or data.get("status") is not None:
            return data
        value, tolerance = data.get("value"), data.get("tolerance")
        if value is None:
            status = "skip"
        elif tolerance is None:
            status = "info"
        else:
            status = "pass" if math.isfinite(value) and value <= tolerance else "fail"
        return {**data, "status": status}

    @property
    def failed(self) -> bool:
        return self.status == "fail"


class InstanceDigest(Model):
    """Dimensions, grid and kernel of the instance a report was produced for."""

    n: int
    m: int
    N: int
    h: float
    T: float
    tau: float
    kernel: str

    @classmethod
    def from_instance(cls, instance: ProblemInstance) -> "InstanceDigest":
        return cls(
            n=instance.n,
            m=instance.m,
            N=instance.grid.N,
            h=instance.h,
            T=instance.T,
            tau=instance.init.tau,
            kernel=instance.K.tag,
        )


class ConvergenceRow(Model):
    """
    One quantity on one grid of a convergence study.

    ``order`` is estimated from three consecutive grids; ``exact`` means every error of
    the sequence vanished.
    """

    N: int
    h: float
    quantity: str
    value: float
    error: Optional[float] = None
    order: Optional[Union[float, Literal["exact"]]] = None


class RunReport(Model):
    """
    Machine-readable result of a CLI command.

    :ivar schema: Version tag of the JSON layout.
    :ivar command: ``solve``, ``verify``, ``convergence`` or ``tables``.
    :ivar instance: Digest of the problem.
    :ivar results: Scalar results (``J_ol``, ``J_cl``, spectrum of ``P0(0)`` ...).
    :ivar residuals: Verification rows, each with its tolerance.
    :ivar convergence: Rows of a convergence study.
    :ivar warnings: Numerical flags raised during the run.
    :ivar timing: Seconds per phase, absent with ``--no-timing``.
    """

    schema_version: str = Field(default=SCHEMA, alias="schema")
    command: str
    instance: InstanceDigest
    results: Dict[str, Optional[float]] = Field(default_factory=dict)
    residuals: List[ResidualRow] = Field(default_factory=list)
    convergence: List[ConvergenceRow] = Field(default_factory=list)
    warnings: List[str] = Field(default_factory=list)
    timing: Optional[Dict[str, float]] = None

    model_config = ConfigDict(populate_by_name=True)

    @property
    def failed(self) -> List[str]:
        return [row.name for row in self.residuals if row.failed]

    @property
    def passed(self) -> bool:
        return not self.failed
