"""Uniform rectangular lattices and densities sampled on them."""

from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

_MAGIC = b"GDEN"


@dataclass(frozen=True)
class Grid:
    origin: tuple[float, ...]
    spacing: tuple[float, ...]
    shape: tuple[int, ...]

    def __post_init__(self):
        if not (len(self.origin) == len(self.spacing) == len(self.shape)):
            raise ValueError("origin, spacing and shape must have the same length")
        if any(h <= 0 for h in self.spacing) or any(k < 1 for k in self.shape):
            raise ValueError("grid spacing must be positive and extents at least 1")

    @classmethod
    def around(cls, center, radius: float, h: float) -> "Grid":
        """Grid with spacing ``h`` covering ``center +- radius`` on every axis."""
        center = np.atleast_1d(np.asarray(center, dtype=float))
        k = int(math.ceil(radius / h))
        origin = tuple(float(c - k * h) for c in center)
        return cls(origin, (float(h),) * len(center), (2 * k + 1,) * len(center))

    @classmethod
    def from_bounds(cls, lo, hi, h: float) -> "Grid":
        lo = np.atleast_1d(np.asarray(lo, dtype=float))
        hi = np.atleast_1d(np.asarray(hi, dtype=float))
        shape = tuple(int(math.ceil((b - a) / h)) + 1 for a, b in zip(lo, hi))
        return cls(tuple(map(float, lo)), (float(h),) * len(lo), shape)

    @property
    def dim(self) -> int:
        return len(self.shape)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    def axes(self) -> list[np.ndarray]:
        return [o + h * np.arange(k) for o, h, k in zip(self.origin, self.spacing, self.shape)]

    def points(self) -> np.ndarray:
        """All nodes as an array of shape ``(size, d)`` in row-major order."""
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def weights(self) -> np.ndarray:
        """Trapezoid weights, flattened row-major."""
        w = np.ones(())
        for h, k in zip(self.spacing, self.shape):
            wk = np.full(k, h)
            if k > 1:
                wk[[0, -1]] *= 0.5
            w = np.multiply.outer(w, wk)
        return w.ravel()


@dataclass
class GridDensity:
    grid: Grid
    values: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).reshape(self.grid.shape)

    @property
    def mass(self) -> float:
        return float(np.sum(self.values.ravel() * self.grid.weights()))

    def to_csv(self, path) -> Path:
        path = Path(path)
        pts = self.grid.points()
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow([f"x{k + 1}" for k in range(self.grid.dim)] + ["value"])
            for p, v in zip(pts, self.values.ravel()):
                writer.writerow([repr(float(c)) for c in p] + [repr(float(v))])
        return path

    @classmethod
    def from_csv(cls, path) -> "GridDensity":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        d = data.shape[1] - 1
        axes = [np.unique(data[:, k]) for k in range(d)]
        spacing = tuple(float(a[1] - a[0]) if len(a) > 1 else 1.0 for a in axes)
        grid = Grid(tuple(float(a[0]) for a in axes), spacing, tuple(len(a) for a in axes))
        return cls(grid, data[:, -1])

    def to_bytes(self) -> bytes:
        g = self.grid
        head = _MAGIC + struct.pack("<I", g.dim)
        head += struct.pack(f"<{g.dim}q", *g.shape)
        head += struct.pack(f"<{g.dim}d", *g.origin)
        head += struct.pack(f"<{g.dim}d", *g.spacing)
        return head + np.ascontiguousarray(self.values, dtype="<f8").tobytes()

    @classmethod
    def from_bytes(cls, blob: bytes) -> "GridDensity":
        if blob[:4] != _MAGIC:
            raise ValueError("not a grid density blob")
        (d,) = struct.unpack_from("<I", blob, 4)
        off = 8
        shape = struct.unpack_from(f"<{d}q", blob, off)
        off += 8 * d
        origin = struct.unpack_from(f"<{d}d", blob, off)
        off += 8 * d
        spacing = struct.unpack_from(f"<{d}d", blob, off)
        off += 8 * d
        values = np.frombuffer(blob, dtype="<f8", offset=off).reshape(shape)
        return cls(Grid(tuple(origin), tuple(spacing), tuple(shape)), values.copy())

    def to_binary(self, path) -> Path:
        path = Path(path)
        path.write_bytes(self.to_bytes())
        return path

    @classmethod
    def from_binary(cls, path) -> "GridDensity":
        return cls.from_bytes(Path(path).read_bytes())
