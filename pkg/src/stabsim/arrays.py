"""Spatial activation grids and the three primitives everything else composes.

A :class:`SpatialArray` is a rectangular grid of activation values in
``[0, 1]`` with a physical pitch in arcmin per element.  The simulator uses
this one type for the retinal image, the background and stimulus reference
snapshots, and the perceptual canvas.  Three pure operations act on it:

* :func:`shift`    -- integer translation with zero fill outside the grid,
* :func:`dot`      -- elementwise match score between two grids,
* :func:`transfer` -- masked replacement of canvas content by source content.

Arrays are immutable once constructed (the backing numpy buffer is marked
read-only), so values can be shared freely across concurrent workers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "SpatialArray",
    "Translation",
    "MatchScore",
    "shift",
    "dot",
    "transfer",
    "write_pgm",
    "read_pgm",
    "write_csv_grid",
    "read_csv_grid",
]


@dataclass(frozen=True, order=True)
class Translation:
    """Integer shift in elements. ``dx`` is columns (+x right), ``dy`` rows (+y down)."""

    dx: int
    dy: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "dx", int(self.dx))
        object.__setattr__(self, "dy", int(self.dy))

    @property
    def radius(self) -> float:
        return math.hypot(self.dx, self.dy)

    @property
    def angle_deg(self) -> float:
        """Direction in degrees, in [0, 360). Zero vector maps to 0."""
        if self.dx == 0 and self.dy == 0:
            return 0.0
        return math.degrees(math.atan2(self.dy, self.dx)) % 360.0

    def is_zero(self) -> bool:
        return self.dx == 0 and self.dy == 0


@dataclass(frozen=True)
class MatchScore:
    """Non-negative degree-of-match value (sum of element products, possibly normalized)."""

    value: float

    def __post_init__(self) -> None:
        if not math.isfinite(self.value) or self.value < 0.0:
            raise ValueError(f"match score must be finite and >= 0, got {self.value}")


@dataclass(frozen=True)
class SpatialArray:
    """2D activation grid with all values in [0, 1].

    ``values`` is indexed ``[y, x]`` (row-major).  ``element_pitch`` is the
    physical size of one element in arcmin; with the default pitch of 1.0 a
    translation in elements equals a translation in arcmin.
    """

    values: np.ndarray = field(repr=False)
    element_pitch: float = 1.0

    def __post_init__(self) -> None:
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.ndim != 2 or vals.shape[0] < 1 or vals.shape[1] < 1:
            raise ValueError(f"values must be a 2D grid with both sides >= 1, got shape {vals.shape}")
        if not np.all(np.isfinite(vals)):
            raise ValueError("activation values must all be finite")
        if vals.min() < 0.0 or vals.max() > 1.0:
            raise ValueError("activation values must lie in [0, 1]")
        if not (self.element_pitch > 0.0):
            raise ValueError(f"element_pitch must be > 0, got {self.element_pitch}")
        vals = vals.copy()
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @classmethod
    def zeros(cls, width: int, height: int, element_pitch: float = 1.0) -> "SpatialArray":
        return cls(np.zeros((height, width)), element_pitch)

    def with_values(self, values: np.ndarray) -> "SpatialArray":
        """New array with the same pitch and replaced content."""
        return SpatialArray(values, self.element_pitch)


def _require_same_shape(*arrays: SpatialArray) -> None:
    shapes = {a.shape for a in arrays}
    if len(shapes) != 1:
        raise ValueError(f"arrays must share dimensions, got shapes {sorted(shapes)}")


def shift_values(values: np.ndarray, dx: int, dy: int) -> np.ndarray:
    """Zero-fill translation of a raw 2D array: out[y, x] = values[y - dy, x - dx]."""
    h, w = values.shape
    out = np.zeros_like(values)
    y0, y1 = max(0, dy), h + min(0, dy)
    x0, x1 = max(0, dx), w + min(0, dx)
    if y0 < y1 and x0 < x1:
        out[y0:y1, x0:x1] = values[y0 - dy : y1 - dy, x0 - dx : x1 - dx]
    return out


def shift(a: SpatialArray, t: Translation) -> SpatialArray:
    """Translate ``a`` by ``t``.

    Elements whose source position falls outside the grid read as zero; the
    retina has a boundary, so wraparound would fabricate spurious matches.
    """
    return a.with_values(shift_values(a.values, t.dx, t.dy))


def dot(a: SpatialArray, b: SpatialArray) -> MatchScore:
    """Sum over all elements of ``a(x, y) * b(x, y)``."""
    _require_same_shape(a, b)
    return MatchScore(float(np.einsum("yx,yx->", a.values, b.values)))


def transfer(canvas: SpatialArray, source: SpatialArray, mask: SpatialArray) -> SpatialArray:
    """Replace canvas content with source content wherever ``mask`` is 1.

    ``mask`` values must be 0 or 1.  Idempotent for a fixed (source, mask)
    pair, and a no-op for the all-zero mask.
    """
    _require_same_shape(canvas, source, mask)
    m = mask.values
    if not np.all((m == 0.0) | (m == 1.0)):
        raise ValueError("mask values must be exactly 0 or 1")
    return canvas.with_values(np.where(m == 1.0, source.values, canvas.values))


# ---------------------------------------------------------------------------
# Serialization: plain PGM (debug dumps) and CSV grids (lossless fixtures).
# ---------------------------------------------------------------------------

_PGM_MAXVAL = 255


def write_pgm(array: SpatialArray, path) -> None:
    """Write as plain (ASCII, P2) portable graymap, activation 1.0 -> 255."""
    levels = np.rint(array.values * _PGM_MAXVAL).astype(int)
    lines = [f"P2", f"{array.width} {array.height}", f"{_PGM_MAXVAL}"]
    lines.extend(" ".join(str(v) for v in row) for row in levels)
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def read_pgm(path, element_pitch: float = 1.0) -> SpatialArray:
    with open(path, "r", encoding="ascii") as fh:
        tokens: list[str] = []
        for line in fh:
            bare = line.split("#", 1)[0]
            tokens.extend(bare.split())
    if not tokens or tokens[0] != "P2":
        raise ValueError(f"{path}: not a plain P2 graymap")
    width, height, maxval = (int(t) for t in tokens[1:4])
    data = np.array([int(t) for t in tokens[4:]], dtype=np.float64)
    if data.size != width * height:
        raise ValueError(f"{path}: expected {width * height} samples, found {data.size}")
    return SpatialArray(data.reshape(height, width) / maxval, element_pitch)


def write_csv_grid(values: np.ndarray, path) -> None:
    """Lossless CSV dump of a raw 2D float grid (one row per line)."""
    np.savetxt(path, np.asarray(values, dtype=np.float64), fmt="%.17g", delimiter=",")


def read_csv_grid(path) -> np.ndarray:
    return np.atleast_2d(np.loadtxt(path, delimiter=","))
