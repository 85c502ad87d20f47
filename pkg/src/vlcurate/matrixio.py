"""Plain-text matrix files for fixtures and CLI interchange.

One matrix per file, row-major, with a single header line:

    # vlcurate-matrix <rows> <cols> [tau=<value>]

followed by one whitespace-separated row per line.  Values are written with
``repr`` so they round-trip exactly through float64.
"""

from __future__ import annotations

import io
from pathlib import Path

import numpy as np

MAGIC = "# vlcurate-matrix"


def dump_matrix(matrix: np.ndarray, tau: float | None = None) -> str:
    m = np.atleast_2d(np.asarray(matrix, float))
    header = f"{MAGIC} {m.shape[0]} {m.shape[1]}"
    if tau is not None:
        header += f" tau={tau!r}"
    rows = [" ".join(repr(v) for v in row) for row in m.tolist()]
    return "\n".join([header] + rows) + "\n"


def save_matrix(path: str | Path, matrix: np.ndarray,
                tau: float | None = None) -> None:
    Path(path).write_text(dump_matrix(matrix, tau))


def parse_matrix(text: str) -> tuple[np.ndarray, float | None]:
    lines = [ln for ln in io.StringIO(text) if ln.strip()]
    if not lines or not lines[0].startswith(MAGIC):
        raise ValueError(f"missing {MAGIC!r} header")
    fields = lines[0][len(MAGIC):].split()
    if len(fields) < 2:
        raise ValueError("header must carry row and column counts")
    rows, cols = int(fields[0]), int(fields[1])
    tau = None
    for extra in fields[2:]:
        if extra.startswith("tau="):
            tau = float(extra[4:])
    data = [[float(v) for v in ln.split()] for ln in lines[1:]]
    m = np.array(data, float)
    if m.shape != (rows, cols):
        raise ValueError(f"header promises {rows}x{cols}, file holds {m.shape}")
    return m, tau


def load_matrix(path: str | Path) -> tuple[np.ndarray, float | None]:
    return parse_matrix(Path(path).read_text())
