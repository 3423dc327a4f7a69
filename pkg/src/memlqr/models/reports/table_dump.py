"""
Binary dump of kernel tables and Riccati checkpoints.

Layout (little endian):

- magic ``b"MLQR1"``
- ``n`` and ``N`` as ``uint32``, ``h`` as ``float64``
- sections until end of file, each: tag length (``uint8``), ASCII tag, ``ndim`` (``uint32``),
  the shape (``ndim`` x ``uint32``), then the data as row-major ``float64``.
"""

from pathlib import Path
from typing import Dict, Tuple, Union

import numpy as np

from ...utils import exceptions, logger
from ..problem import TimeGrid
from ..solution import RiccatiSolution
from ..tables import PropagatorTables

MAGIC = b"MLQR1"

log = logger.LogMe("table_dump")


def _u32(*values: int) -> bytes:
    return np.array(values, dtype="<u4").tobytes()


def propagator_sections(prop: PropagatorTables) -> Dict[str, np.ndarray]:
    sections = {"K": prop.kernel}
    for table in (prop.semigroup, prop.mu, prop.resolvent, prop.F):
        sections[table.name] = table.blocks
    sections["G"] = prop.gm.G
    sections["M"] = prop.gm.M
    return sections


def riccati_sections(solution: RiccatiSolution) -> Dict[str, np.ndarray]:
    sections = {"P0": solution.P0}
    for node in solution.checkpoints:
        sections[f"P1@{node}"] = solution.P1[node]
        sections[f"P2@{node}"] = solution.P2[node]
    return sections


def write_tables(
    path: Union[str, Path], n: int, grid: TimeGrid, sections: Dict[str, np.ndarray]
) -> Path:
    """
    Write tagged arrays in the ``MLQR1`` format.

    :param path: Target file.
    :type path: Union[str, Path]
    :param n: State dimension.
    :type n: int
    :param grid: Grid of the tables.
    :type grid: TimeGrid
    :param sections: Arrays keyed by tag (ASCII, at most 255 bytes).
    :type sections: Dict[str, numpy.ndarray]
    :raises ExportError: If the file cannot be written.
    :return: The written path.
    :rtype: Path
    """
    path = Path(path)
    chunks = [MAGIC, _u32(n, grid.N), np.array([grid.h], dtype="<f8").tobytes()]
    for tag, values in sections.items():
        data = np.ascontiguousarray(values, dtype="<f8")
        name = tag.encode("ascii")
        chunks += [bytes([len(name)]), name, _u32(data.ndim), _u32(*data.shape), data.tobytes()]
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(b"".join(chunks))
    except OSError as e:
        log.error(f"Unable to write table dump {path}: {e}")
        raise exceptions.ExportError(file_path=str(path))
    log.info(f"Wrote {len(sections)} sections to {path}")
    return path


def read_tables(path: Union[str, Path]) -> Tuple[Dict[str, float], Dict[str, np.ndarray]]:
    """
    Read a file written by :func:`write_tables`.

    :param path: Dump file.
    :type path: Union[str, Path]
    :raises ProblemParseError: If the file is not an ``MLQR1`` dump.
    :return: Header ``{"n", "N", "h"}`` and the sections by tag.
    :rtype: Tuple[Dict[str, float], Dict[str, numpy.ndarray]]
    """
    raw = Path(path).read_bytes()
    if not raw.startswith(MAGIC):
        raise exceptions.ProblemParseError(path=str(path), reason="not an MLQR1 table dump")
    offset = len(MAGIC)
    n, N = (int(v) for v in np.frombuffer(raw, dtype="<u4", count=2, offset=offset))
    offset += 8
    h = float(np.frombuffer(raw, dtype="<f8", count=1, offset=offset)[0])
    offset += 8

    sections = {}
    while offset < len(raw):
        size = raw[offset]
        tag = raw[offset + 1 : offset + 1 + size].decode("ascii")
        offset += 1 + size
        ndim = int(np.frombuffer(raw, dtype="<u4", count=1, offset=offset)[0])
        offset += 4
        shape = tuple(int(v) for v in np.frombuffer(raw, dtype="<u4", count=ndim, offset=offset))
        offset += 4 * ndim
        count = int(np.prod(shape))
        sections[tag] = np.frombuffer(raw, dtype="<f8", count=count, offset=offset).reshape(shape)
        offset += 8 * count
    return {"n": n, "N": N, "h": h}, sections
