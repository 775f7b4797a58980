"""Uniform periodic grids, cell-average fields and their binary format."""
from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np

MIN_CELLS = 4
FIELD_MAGIC = b"MFSLFLD1"
_HEADER = struct.Struct("<8sIIIIQ")  # magic, rank, n0, n1, crc32, reserved -> 32 bytes

# 5-point Gauss-Legendre nodes/weights on [-1, 1].
GL_NODES, GL_WEIGHTS = np.polynomial.legendre.leggauss(5)


class FieldFormatError(ValueError):
    """Raised when a serialized field is truncated, corrupted or mis-shaped."""


@dataclass(frozen=True)
class UniformGrid1D:
    lo: float
    hi: float
    n_cells: int

    def __post_init__(self):
        if not self.hi > self.lo:
            raise ValueError(f"grid needs hi > lo, got [{self.lo}, {self.hi}]")
        if int(self.n_cells) != self.n_cells or self.n_cells < MIN_CELLS:
            raise ValueError(f"grid needs at least {MIN_CELLS} cells, got {self.n_cells}")

    @property
    def h(self) -> float:
        return (self.hi - self.lo) / self.n_cells

    @property
    def length(self) -> float:
        return self.hi - self.lo

    @property
    def centers(self) -> np.ndarray:
        return self.lo + (np.arange(self.n_cells) + 0.5) * self.h

    @property
    def interfaces(self) -> np.ndarray:
        """Right interfaces x_{i+1/2}, one per cell."""
        return self.lo + (np.arange(self.n_cells) + 1.0) * self.h

    @property
    def shape(self) -> tuple:
        return (self.n_cells,)

    @property
    def ndim(self) -> int:
        return 1

    @property
    def cell_volume(self) -> float:
        return self.h

    def refine(self, factor: int) -> "UniformGrid1D":
        return UniformGrid1D(self.lo, self.hi, self.n_cells * factor)


@dataclass(frozen=True)
class UniformGrid2D:
    x: UniformGrid1D
    y: UniformGrid1D

    @property
    def grids(self) -> tuple:
        return (self.x, self.y)

    @property
    def shape(self) -> tuple:
        return (self.x.n_cells, self.y.n_cells)

    @property
    def ndim(self) -> int:
        return 2

    @property
    def cell_volume(self) -> float:
        return self.x.h * self.y.h

    def refine(self, factor: int) -> "UniformGrid2D":
        return UniformGrid2D(self.x.refine(factor), self.y.refine(factor))


Grid = Union[UniformGrid1D, UniformGrid2D]


def make_grid_1d(lo: float, hi: float, n: int) -> UniformGrid1D:
    return UniformGrid1D(float(lo), float(hi), int(n))


def make_grid_2d(x: tuple, y: tuple) -> UniformGrid2D:
    """``x`` and ``y`` are ``(lo, hi, n)`` triples."""
    return UniformGrid2D(make_grid_1d(*x), make_grid_1d(*y))


@dataclass(frozen=True)
class CellField:
    grid: Grid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.shape != self.grid.shape:
            raise ValueError(f"field shape {vals.shape} does not match grid {self.grid.shape}")
        if not np.all(np.isfinite(vals)):
            raise ValueError("field contains non-finite values")
        vals = vals.copy()
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)

    def with_values(self, values) -> "CellField":
        return CellField(self.grid, values)


def _quad_points(g: UniformGrid1D):
    # (n_cells, 5) absolute nodes; weights sum to 1 per cell.
    half = 0.5 * g.h
    pts = g.centers[:, None] + half * GL_NODES[None, :]
    return pts, 0.5 * GL_WEIGHTS


def project_ic(g: Grid, u0: Callable) -> CellField:
    """Cell averages of ``u0`` by tensor 5-point Gauss-Legendre quadrature.

    ``u0`` is called with broadcastable coordinate arrays (one per dimension).
    """
    if g.ndim == 1:
        pts, w = _quad_points(g)
        vals = np.asarray(u0(pts), dtype=np.float64)
        vals = np.broadcast_to(vals, pts.shape) @ w
    else:
        px, wx = _quad_points(g.x)
        py, wy = _quad_points(g.y)
        X = px[:, None, :, None]
        Y = py[None, :, None, :]
        vals = np.asarray(u0(X, Y), dtype=np.float64)
        vals = np.broadcast_to(vals, (g.x.n_cells, g.y.n_cells, 5, 5))
        vals = np.einsum("ijab,a,b->ij", vals, wx, wy)
    if not np.all(np.isfinite(vals)):
        raise ValueError("initial condition produced non-finite values")
    return CellField(g, vals)


def total_mass(f: CellField) -> float:
    return float(f.grid.cell_volume * np.sum(f.values))


def mse(a: CellField, b: CellField) -> float:
    if a.grid != b.grid:
        raise ValueError("mse needs fields on the same grid")
    return float(np.mean((a.values - b.values) ** 2))


def field_to_bytes(f: CellField) -> bytes:
    vals = np.ascontiguousarray(f.values, dtype="<f8")
    payload = vals.tobytes()
    shape = vals.shape + (0,) * (2 - vals.ndim)
    header = _HEADER.pack(FIELD_MAGIC, vals.ndim, shape[0], shape[1], zlib.crc32(payload), 0)
    return header + payload


def values_from_bytes(buf: bytes) -> np.ndarray:
    if len(buf) < _HEADER.size:
        raise FieldFormatError("field file shorter than its header")
    magic, rank, n0, n1, crc, _ = _HEADER.unpack_from(buf)
    if magic != FIELD_MAGIC:
        raise FieldFormatError(f"bad field magic {magic!r}")
    if rank not in (1, 2):
        raise FieldFormatError(f"unsupported field rank {rank}")
    shape = (n0,) if rank == 1 else (n0, n1)
    payload = buf[_HEADER.size:]
    if len(payload) != 8 * int(np.prod(shape)):
        raise FieldFormatError("field payload size does not match header dims")
    if zlib.crc32(payload) != crc:
        raise FieldFormatError("field checksum mismatch")
    return np.frombuffer(payload, dtype="<f8").reshape(shape).astype(np.float64)


def save_field(path, f: CellField) -> None:
    with open(path, "wb") as fh:
        fh.write(field_to_bytes(f))


def load_field(path, grid: Grid) -> CellField:
    with open(path, "rb") as fh:
        vals = values_from_bytes(fh.read())
    if vals.shape != grid.shape:
        raise FieldFormatError(f"stored field shape {vals.shape} != grid {grid.shape}")
    return CellField(grid, vals)


def grid_to_dict(g: Grid) -> dict:
    if g.ndim == 1:
        return {"lo": g.lo, "hi": g.hi, "n": g.n_cells}
    return {"x": grid_to_dict(g.x), "y": grid_to_dict(g.y)}


def grid_from_dict(d: dict) -> Grid:
    if "x" in d:
        return UniformGrid2D(grid_from_dict(d["x"]), grid_from_dict(d["y"]))
    return make_grid_1d(d["lo"], d["hi"], d["n"])
