import json
from pathlib import Path
from typing import Any, Dict, Union

from pydantic import ValidationError

from ..models.problem import InvariantViolation, ProblemInstance, ProblemSpec, ShapeViolation
from ..utils import exceptions, logger
from .builders import BUILDERS

# pydantic error types that mean the file does not follow the schema at all
SCHEMA_ERRORS = ("missing", "literal_error", "extra_forbidden", "union_tag_invalid")


class ProblemManager:
    """
    Loads, validates and saves problem files.

    Problem files are JSON objects holding either explicit matrices or a ``builder`` field
    naming one of the canonical families (``heat`` or ``random``) together with its
    parameters. Every failure is reported as a :class:`~memlqr.utils.exceptions.MemlqrError`
    whose exit code separates malformed files (1) from invariant violations (2).
    """

    def __init__(self):
        self.log = logger.LogMe(self.__class__.__name__)

    def _read(self, path: Path) -> Dict[str, Any]:
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as e:
            self.log.error(f"Unable to read problem file {path}: {e}")
            raise exceptions.ProblemParseError(path=str(path), reason=str(e))
        try:
            data = json.loads(text)
        except json.JSONDecodeError as e:
            self.log.error(f"Problem file {path} is not valid JSON: {e}")
            raise exceptions.ProblemParseError(path=str(path), reason=f"invalid JSON: {e}")
        if not isinstance(data, dict):
            raise exceptions.ProblemParseError(
                path=str(path), reason="top-level value must be an object"
            )
        return data

    def _translate(self, error: ValidationError, source: str) -> exceptions.MemlqrError:
        """Map the first pydantic error to the matching :mod:`~memlqr.utils.exceptions` class."""
        first = error.errors()[0]
        original = first.get("ctx", {}).get("error")
        location = ".".join(str(part) for part in first.get("loc", ())) or None
        if isinstance(original, ShapeViolation):
            return self._from_violation(original)
        if isinstance(original, InvariantViolation):
            return self._from_violation(original)
        kind = first.get("type", "")
        if kind in SCHEMA_ERRORS or kind.endswith("_type") or kind.endswith("_parsing"):
            return exceptions.ProblemParseError(
                path=source, reason=f"{location}: {first.get('msg')}"
            )
        return exceptions.ProblemValidationError(invariant=location, reason=first.get("msg"))

    @staticmethod
    def _from_violation(violation: ValueError) -> exceptions.MemlqrError:
        if isinstance(violation, ShapeViolation):
            return exceptions.DimensionMismatchError(
                field=violation.field, expected=violation.expected, received=violation.received
            )
        if isinstance(violation, InvariantViolation):
            return exceptions.ProblemValidationError(
                invariant=violation.invariant, reason=violation.reason
            )
        return exceptions.ProblemValidationError(reason=str(violation))

    def expand(self, data: Dict[str, Any]) -> ProblemSpec:
        """
        Turn a decoded problem file into an explicit :class:`ProblemSpec`.

        :param data: Decoded JSON object.
        :type data: Dict[str, Any]
        :raises ValidationError: If the object does not describe a problem.
        :raises InvariantViolation: If a builder is unknown.
        :return: The explicit description.
        :rtype: ProblemSpec
        """
        name = data.get("builder")
        if name is None:
            return ProblemSpec.model_validate(data)
        if name not in BUILDERS:
            raise InvariantViolation("builder", f"unknown builder '{name}'")
        self.log.debug(f"Expanding builder '{name}'")
        return BUILDERS[name].model_validate(data).spec()

    def parse(self, data: Dict[str, Any], source: str = "<memory>") -> ProblemInstance:
        """
        Validate a decoded problem file.

        :param data: Decoded JSON object.
        :type data: Dict[str, Any]
        :param source: Name used in error messages.
        :type source: str
        :raises ProblemParseError: If the object does not follow the schema.
        :raises ProblemValidationError: If an invariant fails (named in the error).
        :raises DimensionMismatchError: If shapes disagree with ``n`` and ``m``.
        :return: The validated instance.
        :rtype: ProblemInstance
        """
        try:
            instance = self.expand(data).build()
        except ValidationError as e:
            self.log.error(f"Problem {source} failed validation: {e}")
            raise self._translate(e, source)
        except (ShapeViolation, InvariantViolation) as e:
            self.log.error(f"Problem {source} failed validation: {e}")
            raise self._from_violation(e)
        self.log.info(
            f"Loaded problem {source}: n={instance.n}, m={instance.m}, N={instance.grid.N}, "
            f"kernel={instance.K.tag}"
        )
        return instance

    def load_problem(self, path: Union[str, Path]) -> ProblemInstance:
        """
        Read and validate a problem file.

        :param path: Path of the JSON file.
        :type path: Union[str, Path]
        :return: The validated instance.
        :rtype: ProblemInstance
        """
        path = Path(path)
        return self.parse(self._read(path), source=str(path))

    def save_problem(self, instance: ProblemInstance, path: Union[str, Path]) -> Path:
        """
        Write the explicit description of ``instance`` as JSON.

        Loading the written file reproduces the instance with bit-exact numbers.

        :param instance: The instance to save.
        :type instance: ProblemInstance
        :param path: Target file.
        :type path: Union[str, Path]
        :raises ExportError: If the file cannot be written.
        :return: The written path.
        :rtype: Path
        """
        path = Path(path)
        payload = instance.spec.model_dump(mode="json", exclude_none=True)
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
        except OSError as e:
            self.log.error(f"Unable to save problem to {path}: {e}")
            raise exceptions.ExportError(file_path=str(path))
        self.log.info(f"Problem saved to {path}")
        return path

    def regrid(self, instance: ProblemInstance, N: int) -> ProblemInstance:
        """
        Rebuild ``instance`` on ``N`` steps.

        :raises GridError: If the kernel or history is given by samples or ``tau`` leaves the grid.
        """
        try:
            return instance.regrid(N)
        except ValidationError as e:
            raise self._translate(e, f"N={N}")
        except ValueError as e:
            raise exceptions.GridError(reason=str(e))
