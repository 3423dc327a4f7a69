from pathlib import Path
from typing import List, Union

import pandas as pd

from ...utils import exceptions, logger
from ..report import ConvergenceRow
from ..solution import Trajectory

CONVERGENCE_COLUMNS = ["N", "h", "quantity", "value", "error", "order"]


class CSVReport:
    """
    Writes trajectories and convergence tables as CSV.

    Floats are written with 17 significant digits so that identical runs give identical files.
    """

    float_format = "%.17g"

    def __init__(self):
        self.log = logger.LogMe(self.__class__.__name__)

    def _write(self, df: pd.DataFrame, path: Union[str, Path]) -> Path:
        path = Path(path)
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            df.to_csv(path, index=False, float_format=self.float_format)
        except (OSError, ValueError) as e:
            self.log.error(f"Unable to write {path}: {e}")
            raise exceptions.ExportError(file_path=str(path))
        self.log.info(f"CSV written to {path}")
        return path

    @staticmethod
    def trajectory_frame(trajectory: Trajectory) -> pd.DataFrame:
        """Columns ``t, w_1..w_n, u_1..u_m``."""
        n, m = trajectory.w.shape[1], trajectory.u.shape[1]
        df = pd.DataFrame({"t": trajectory.t})
        for k in range(n):
            df[f"w_{k + 1}"] = trajectory.w[:, k]
        for k in range(m):
            df[f"u_{k + 1}"] = trajectory.u[:, k]
        return df

    def export_trajectory(self, trajectory: Trajectory, path: Union[str, Path]) -> Path:
        """
        Write a trajectory.

        :param trajectory: Open- or closed-loop samples.
        :type trajectory: Trajectory
        :param path: Target CSV file.
        :type path: Union[str, Path]
        :raises ExportError: If the file cannot be written.
        :return: The written path.
        :rtype: Path
        """
        return self._write(self.trajectory_frame(trajectory), path)

    def export_convergence(self, rows: List[ConvergenceRow], path: Union[str, Path]) -> Path:
        """
        Write a convergence table with columns ``N, h, quantity, value, error, order``.

        :param rows: One row per grid and quantity.
        :type rows: List[ConvergenceRow]
        :param path: Target CSV file.
        :type path: Union[str, Path]
        :raises ExportError: If the file cannot be written.
        :return: The written path.
        :rtype: Path
        """
        df = pd.DataFrame(
            [row.model_dump() for row in rows], columns=CONVERGENCE_COLUMNS
        )
        return self._write(df, path)
