import json
from pathlib import Path
from typing import Union

from ...utils import exceptions, logger
from ..report import RunReport


class JSONReport:
    """Serializes :class:`~memlqr.models.report.RunReport` objects deterministically."""

    def __init__(self):
        self.log = logger.LogMe(self.__class__.__name__)

    @staticmethod
    def render(report: RunReport) -> str:
        """Sorted keys, two-space indent, non-finite floats as ``null``."""
        payload = report.model_dump(mode="json", by_alias=True)
        return json.dumps(payload, indent=2, sort_keys=True) + "\n"

    def export(self, report: RunReport, path: Union[str, Path]) -> Path:
        """
        Write ``report`` as JSON.

        :param report: The report.
        :type report: RunReport
        :param path: Target file.
        :type path: Union[str, Path]
        :raises ExportError: If the file cannot be written.
        :return: The written path.
        :rtype: Path
        """
        path = Path(path)
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(self.render(report), encoding="utf-8")
        except OSError as e:
            self.log.error(f"Unable to write report {path}: {e}")
            raise exceptions.ExportError(file_path=str(path))
        self.log.info(f"Report written to {path}")
        return path
