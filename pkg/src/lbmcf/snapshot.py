"""``LBMCF-SNAPSHOT v1`` text files: one scalar field per file, bit-exact round trip."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .grid import Grid, GridConfig, build_grid

MAGIC = "LBMCF-SNAPSHOT v1"
_HEADER_KEYS = ("n", "N", "r", "r_prime", "bc", "time")


class SnapshotError(ValueError):
    pass


@dataclass
class Snapshot:
    grid: Grid
    values: np.ndarray
    time: float | None


def format_snapshot(values: np.ndarray, grid: Grid, time: float | None = None) -> str:
    """Header lines then row-major values, ``N`` per line, written with shortest round-trip repr."""
    values = np.asarray(values, dtype=float)
    if values.shape != grid.shape:
        raise SnapshotError(f"field shape {values.shape} does not match grid {grid.shape}")
    lines = [
        MAGIC,
        f"n {grid.n}",
        f"N {grid.N}",
        f"r {float(grid.r)!r}",
        f"r_prime {float(grid.r_prime)!r}",
        f"bc {grid.bc}",
        f"time {'none' if time is None else repr(float(time))}",
    ]
    flat = values.ravel(order="C")
    for s in range(0, flat.size, grid.N):
        lines.append(" ".join(repr(float(v)) for v in flat[s : s + grid.N]))
    return "\n".join(lines) + "\n"


def write_snapshot(path, values: np.ndarray, grid: Grid, time: float | None = None) -> Path:
    path = Path(path)
    path.write_text(format_snapshot(values, grid, time), encoding="ascii")
    return path


def parse_snapshot(text: str) -> Snapshot:
    lines = text.splitlines()
    if not lines or lines[0].strip() != MAGIC:
        raise SnapshotError(f"line 1: expected {MAGIC!r}")
    header = {}
    for k, key in enumerate(_HEADER_KEYS, start=2):
        if k - 1 >= len(lines):
            raise SnapshotError(f"line {k}: missing header {key!r}")
        parts = lines[k - 1].split()
        if len(parts) != 2 or parts[0] != key:
            raise SnapshotError(f"line {k}: expected '{key} <value>'")
        header[key] = parts[1]
    try:
        grid = build_grid(
            GridConfig(
                n=int(header["n"]),
                r=float(header["r"]),
                r_prime=float(header["r_prime"]),
                N=int(header["N"]),
                bc=header["bc"],
            )
        )
        time = None if header["time"] == "none" else float(header["time"])
        data = np.array(" ".join(lines[len(_HEADER_KEYS) + 1 :]).split(), dtype=float)
    except ValueError as exc:
        raise SnapshotError(str(exc)) from exc
    if data.size != int(np.prod(grid.shape)):
        raise SnapshotError(f"expected {int(np.prod(grid.shape))} values, found {data.size}")
    return Snapshot(grid, data.reshape(grid.shape), time)


def read_snapshot(path) -> Snapshot:
    return parse_snapshot(Path(path).read_text(encoding="ascii"))
