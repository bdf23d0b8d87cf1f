"""Dense 2.5D grid containers and pixel/world calibration.

Arrays are stored row-major as ``values[row, col]`` with ``x = col`` and
``y = row``.  A :class:`HeightField` is the canonical analysis substrate:
heights in metres, oriented so that wrinkle bumps are local maxima.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np
from scipy import ndimage


class InvalidInputError(ValueError):
    """Raised when a grid violates its construction invariants."""


class DomainError(ValueError):
    """Raised when a query falls outside the valid domain of a grid."""


class WorldPoint(NamedTuple):
    x: float
    y: float
    z: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=float)


def _check_grid(values: np.ndarray, valid: np.ndarray) -> None:
    if values.ndim != 2 or values.shape[0] < 1 or values.shape[1] < 1:
        raise InvalidInputError(f"grid must be 2D with non-zero dimensions, got shape {values.shape}")
    if valid.shape != values.shape:
        raise InvalidInputError(f"validity shape {valid.shape} does not match values {values.shape}")


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Calibration:
    pitch: float
    depth_offset: float = 1.0

    def __post_init__(self):
        if not (self.pitch > 0 and np.isfinite(self.pitch)):
            raise InvalidInputError(f"pitch must be positive, got {self.pitch}")


@dataclass(frozen=True, eq=False)
class DepthMap:
    """Per-pixel distance from the sensor in metres (larger is farther)."""

    values: np.ndarray
    valid: Optional[np.ndarray] = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        valid = np.isfinite(values) if self.valid is None else np.asarray(self.valid, dtype=bool)
        _check_grid(values, valid)
        valid = valid & np.isfinite(values) & (values > 0)
        object.__setattr__(self, "values", _freeze(values))
        object.__setattr__(self, "valid", _freeze(valid))

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True, eq=False)
class HeightField:
    """Heights in metres on an isotropic grid of ``pitch`` metres per pixel."""

    values: np.ndarray
    pitch: float
    valid: Optional[np.ndarray] = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        valid = np.isfinite(values) if self.valid is None else np.asarray(self.valid, dtype=bool)
        _check_grid(values, valid)
        if not (self.pitch > 0 and np.isfinite(self.pitch)):
            raise InvalidInputError(f"pitch must be positive, got {self.pitch}")
        valid = valid & np.isfinite(values)
        # invalid pixels hold 0 so that arithmetic on the raw array never produces NaN
        values = np.where(valid, values, 0.0)
        object.__setattr__(self, "values", _freeze(values))
        object.__setattr__(self, "valid", _freeze(valid))
        object.__setattr__(self, "pitch", float(self.pitch))

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def with_values(self, values: np.ndarray, valid: Optional[np.ndarray] = None) -> "HeightField":
        return HeightField(values, self.pitch, self.valid if valid is None else valid)


@dataclass(frozen=True, eq=False)
class PixelMask:
    bits: np.ndarray

    def __post_init__(self):
        bits = np.asarray(self.bits, dtype=bool)
        if bits.ndim != 2:
            raise InvalidInputError(f"mask must be 2D, got shape {bits.shape}")
        object.__setattr__(self, "bits", _freeze(bits))

    @classmethod
    def full(cls, shape: tuple[int, int]) -> "PixelMask":
        return cls(np.ones(shape, dtype=bool))

    @property
    def shape(self) -> tuple[int, int]:
        return self.bits.shape

    def count(self) -> int:
        return int(self.bits.sum())

    def __and__(self, other: "PixelMask") -> "PixelMask":
        return PixelMask(self.bits & other.bits)


def depth_to_height(d: DepthMap | HeightField, c: Calibration) -> HeightField:
    """Convert sensor depth to canonical height, ``h = depth_offset - d``.

    The map is its own inverse, so a :class:`HeightField` passed in is
    converted back to depth values (carried in a HeightField container).
    """
    values = np.asarray(d.values, dtype=float)
    if values.size == 0:
        raise InvalidInputError("empty depth map")
    valid = np.asarray(d.valid, dtype=bool)
    heights = np.where(valid, c.depth_offset - values, 0.0)
    return HeightField(heights, c.pitch, valid)


def pixel_to_world(h: HeightField, px: tuple[float, float]) -> WorldPoint:
    """Embed pixel ``(x, y)`` into world coordinates using its height."""
    x, y = px
    col, row = int(round(x)), int(round(y))
    if x != col or y != row:
        raise DomainError(f"pixel coordinates must be integral, got {px}")
    if not (0 <= row < h.height and 0 <= col < h.width):
        raise DomainError(f"pixel {px} outside {h.width}x{h.height} grid")
    if not h.valid[row, col]:
        raise DomainError(f"pixel {px} is invalid")
    return WorldPoint(col * h.pitch, row * h.pitch, float(h.values[row, col]))


def world_point(h: HeightField, x: float, y: float, z: float) -> WorldPoint:
    """World point for a (possibly sub-pixel) location with a known height."""
    return WorldPoint(float(x) * h.pitch, float(y) * h.pitch, float(z))


def erode_mask(m: PixelMask, radius: int) -> PixelMask:
    """Keep pixels whose whole Chebyshev ``radius`` neighbourhood is set.

    Pixels outside the grid count as unset, so the border is eroded too.
    """
    if radius < 0:
        raise InvalidInputError(f"radius must be >= 0, got {radius}")
    if radius == 0:
        return PixelMask(m.bits)
    size = 2 * radius + 1
    out = ndimage.binary_erosion(m.bits, structure=np.ones((size, size), dtype=bool),
                                 border_value=0)
    return PixelMask(out)


def dilate_bits(bits: np.ndarray, radius: int) -> np.ndarray:
    if radius <= 0:
        return bits.copy()
    size = 2 * radius + 1
    return ndimage.binary_dilation(bits, structure=np.ones((size, size), dtype=bool))


def bilinear(values: np.ndarray, x: float, y: float) -> float:
    """Bilinear sample at sub-pixel ``(x, y)``; caller guarantees bounds."""
    h, w = values.shape
    x0 = min(max(int(np.floor(x)), 0), w - 2) if w > 1 else 0
    y0 = min(max(int(np.floor(y)), 0), h - 2) if h > 1 else 0
    fx = x - x0
    fy = y - y0
    x1 = min(x0 + 1, w - 1)
    y1 = min(y0 + 1, h - 1)
    top = values[y0, x0] * (1 - fx) + values[y0, x1] * fx
    bottom = values[y1, x0] * (1 - fx) + values[y1, x1] * fx
    return float(top * (1 - fy) + bottom * fy)
