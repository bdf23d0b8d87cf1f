"""Shape index, nine-way surface typing, rank filtering and topology masks."""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .differential import CurvatureMaps, ParameterError, ScalarField
from .grid import PixelMask, _freeze

FLAT_EPS = 1e-9
DEFAULT_RANK_WINDOW = 5


class SurfaceType(enum.IntEnum):
    CUP = 0
    TROUGH = 1
    RUT = 2
    SADDLE_RUT = 3
    SADDLE = 4
    SADDLE_RIDGE = 5
    RIDGE = 6
    DOME = 7
    CAP = 8
    FLAT = 9
    INVALID = 10


CONVEX_TYPES = (SurfaceType.SADDLE_RIDGE, SurfaceType.RIDGE, SurfaceType.DOME, SurfaceType.CAP)
RIDGE_CANDIDATES = (SurfaceType.RIDGE, SurfaceType.DOME, SurfaceType.CAP)
N_LABELS = len(SurfaceType)
# interior edges -7/9, -5/9, ..., 7/9; each interval is closed on the left
_BIN_EDGES = np.array([(2 * k - 7) / 9 for k in range(8)])

# per-pixel degeneracy flags of the shape index
REGULAR, UMBILIC, FLAT = 0, 1, 2


@dataclass(frozen=True, eq=False)
class ShapeIndexMap:
    values: ScalarField
    flags: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "flags", _freeze(np.asarray(self.flags, dtype=np.int8)))


@dataclass(frozen=True, eq=False)
class ShapeTypeMap:
    labels: np.ndarray  # SurfaceType codes

    def __post_init__(self):
        object.__setattr__(self, "labels", _freeze(np.asarray(self.labels, dtype=np.int8)))

    @property
    def shape(self) -> tuple[int, int]:
        return self.labels.shape

    def mask_of(self, *types: SurfaceType) -> np.ndarray:
        return np.isin(self.labels, [int(t) for t in types])


@dataclass(frozen=True, eq=False)
class TopologyMasks:
    ridge_points: PixelMask
    contours: PixelMask
    convex: PixelMask


def shape_index(c: CurvatureMaps, flat_eps: float = FLAT_EPS) -> ShapeIndexMap:
    """Koenderink shape index ``(2/pi) atan((k_min + k_max) / (k_min - k_max))``.

    Umbilics (equal principal curvatures) take +-1 opposite to the sign of
    the mean curvature; pixels with both sum and difference below
    ``flat_eps`` are flagged flat.
    """
    kmax, kmin = c.k_max.values, c.k_min.values
    total = kmin + kmax
    diff = kmin - kmax
    valid = c.k_max.valid & c.k_min.valid
    small_diff = np.abs(diff) < flat_eps
    small_sum = np.abs(total) < flat_eps
    flags = np.full(kmax.shape, REGULAR, dtype=np.int8)
    flags[small_diff & ~small_sum] = UMBILIC
    flags[small_diff & small_sum] = FLAT
    with np.errstate(divide="ignore", invalid="ignore"):
        s = (2.0 / np.pi) * np.arctan(total / np.where(small_diff, 1.0, diff))
    s = np.where(flags == UMBILIC, -np.sign(c.mean.values), s)
    s = np.where(flags == FLAT, 0.0, s)
    return ShapeIndexMap(ScalarField(s, valid, "dimensionless"), np.where(valid, flags, FLAT))


def quantize_types(s: ShapeIndexMap) -> ShapeTypeMap:
    """Bin the index into nine uniform intervals of width 2/9 over [-1, 1]."""
    v = np.clip(s.values.values, -1.0, 1.0)
    labels = np.digitize(v, _BIN_EDGES).astype(np.int8)
    labels[s.flags == FLAT] = SurfaceType.FLAT
    labels[~s.values.valid] = SurfaceType.INVALID
    return ShapeTypeMap(labels)


def majority_rank_filter(t: ShapeTypeMap, window: int = DEFAULT_RANK_WINDOW) -> ShapeTypeMap:
    """Replace each label by the most frequent label in its window.

    Invalid pixels neither vote nor change.  When several labels tie for
    the maximum count the original label is kept if it is among them,
    otherwise the lowest label code among the tied ones wins.
    """
    if window < 3 or window % 2 == 0:
        raise ParameterError(f"window must be odd and >= 3, got {window}")
    labels = t.labels
    counts = np.empty((N_LABELS - 1,) + labels.shape, dtype=np.int32)
    footprint = np.ones((window, window))
    for code in range(N_LABELS - 1):
        counts[code] = np.rint(ndimage.correlate((labels == code).astype(np.float64), footprint,
                                                 mode="constant", cval=0.0))
    best = counts.max(axis=0)
    mode = counts.argmax(axis=0).astype(np.int8)
    own = np.where(labels < N_LABELS - 1, labels, 0).astype(np.intp)
    own_count = np.take_along_axis(counts, own[None], axis=0)[0]
    keep = (labels == SurfaceType.INVALID) | (own_count == best)
    return ShapeTypeMap(np.where(keep, labels, mode))


def _sample(values: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    return ndimage.map_coordinates(values, [y, x], order=1, mode="nearest")


def extract_topology(t: ShapeTypeMap, c: CurvatureMaps, lap: ScalarField,
                     min_curvature: float = 0.0) -> TopologyMasks:
    """Ridge points, convex/concave contours and the convex region.

    Ridge points are ridge/dome/cap pixels whose bump curvature ``-k_min``
    is positive, at least ``min_curvature``, and a local maximum along the
    across-ridge direction (non-maximum suppression over +-1 px with linear
    interpolation); of two such pixels adjacent along the dominant axis of
    that direction only the stronger is kept.  Contours are pixels where the Laplacian changes sign
    against a 4-neighbour; of each sign-change pair the pixel with the
    smaller magnitude is marked.
    """
    if not (t.shape == c.shape == lap.shape):
        raise ValueError("topology inputs must share dimensions")
    convex = t.mask_of(*CONVEX_TYPES)

    bump = np.where(c.k_min.valid, -c.k_min.values, 0.0)
    direction = c.cross_dir.values
    rows, cols = np.nonzero(t.mask_of(*RIDGE_CANDIDATES) & c.cross_dir.valid
                            & (bump > 0) & (bump >= min_curvature))
    ridge = np.zeros(t.shape, dtype=bool)
    if len(rows):
        ux, uy = np.cos(direction[rows, cols]), np.sin(direction[rows, cols])
        centre = bump[rows, cols]
        ahead = _sample(bump, cols + ux, rows + uy)
        behind = _sample(bump, cols - ux, rows - uy)
        keep = (centre > ahead) & (centre >= behind)
        ridge[rows[keep], cols[keep]] = True
        # oblique crests can leave 2-px runs; along the dominant axis of the
        # across direction keep only the stronger pixel of an adjacent pair
        rows, cols = rows[keep], cols[keep]
        steep = np.abs(uy[keep]) >= np.abs(ux[keep])
        dr, dc = steep.astype(int), (~steep).astype(int)
        drop = np.zeros(len(rows), dtype=bool)
        for sgn in (1, -1):
            r2, c2 = rows + sgn * dr, cols + sgn * dc
            inside = (r2 >= 0) & (r2 < t.shape[0]) & (c2 >= 0) & (c2 < t.shape[1])
            r2, c2 = np.where(inside, r2, rows), np.where(inside, c2, cols)
            other = bump[r2, c2]
            beaten = (other > bump[rows, cols]) | ((other == bump[rows, cols]) & (sgn < 0))
            drop |= inside & ridge[r2, c2] & beaten
        ridge[rows[drop], cols[drop]] = False

    lv = np.where(lap.valid, lap.values, 0.0)
    mag = np.abs(lv)
    contours = np.zeros(t.shape, dtype=bool)
    for axis in (0, 1):
        a = lv.take(range(0, lv.shape[axis] - 1), axis=axis)
        b = lv.take(range(1, lv.shape[axis]), axis=axis)
        va = lap.valid.take(range(0, lv.shape[axis] - 1), axis=axis)
        vb = lap.valid.take(range(1, lv.shape[axis]), axis=axis)
        change = va & vb & (((a > 0) & (b < 0)) | ((a < 0) & (b > 0)))
        ma = mag.take(range(0, lv.shape[axis] - 1), axis=axis)
        mb = mag.take(range(1, lv.shape[axis]), axis=axis)
        first = change & (ma <= mb)
        second = change & (ma > mb)
        if axis == 0:
            contours[:-1, :] |= first
            contours[1:, :] |= second
        else:
            contours[:, :-1] |= first
            contours[:, 1:] |= second
    ridge &= convex
    contours &= ~ridge
    return TopologyMasks(PixelMask(ridge), PixelMask(contours), PixelMask(convex))


def type_boundaries(t: ShapeTypeMap) -> PixelMask:
    """Convex/concave boundary straight from the type map (debug output)."""
    convex = t.mask_of(*CONVEX_TYPES)
    known = ~t.mask_of(SurfaceType.FLAT, SurfaceType.INVALID)
    edge = convex & known & ~ndimage.binary_erosion(convex | ~known, border_value=1)
    return PixelMask(edge)
