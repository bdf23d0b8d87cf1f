"""Grasping triplets: a ridge point and its two flanking contour points.

A triplet is found by walking from the ridge pixel in both directions
across the wrinkle until each walk meets the wrinkle contour.  Its height
and width come from the triangle the three world points span.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import ndimage

from .grid import DomainError, HeightField, WorldPoint, bilinear, pixel_to_world, world_point
from .surface import ShapeTypeMap, TopologyMasks

DEFAULT_MAX_STEPS = 60
CLIMB_TOLERANCE = 0.0005
SLACK_STEP_PX = 0.25

_EIGHT = np.ones((3, 3), dtype=bool)


class DegenerateTripletError(ValueError):
    pass


@dataclass(frozen=True)
class Triplet:
    ridge_px: tuple[int, int]
    contour_px_1: tuple[int, int]
    contour_px_2: tuple[int, int]
    ridge_w: WorldPoint
    contour_w1: WorldPoint
    contour_w2: WorldPoint
    height_m: float
    width_m: float
    slack_m: float
    direction: float

    def to_dict(self) -> dict:
        return {
            "ridge_px": list(self.ridge_px),
            "contour_px": [list(self.contour_px_1), list(self.contour_px_2)],
            "ridge_w": list(self.ridge_w),
            "contour_w": [list(self.contour_w1), list(self.contour_w2)],
            "height_m": self.height_m,
            "width_m": self.width_m,
            "slack_m": self.slack_m,
            "direction": self.direction,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Triplet":
        return cls(
            ridge_px=tuple(d["ridge_px"]),
            contour_px_1=tuple(d["contour_px"][0]),
            contour_px_2=tuple(d["contour_px"][1]),
            ridge_w=WorldPoint(*d["ridge_w"]),
            contour_w1=WorldPoint(*d["contour_w"][0]),
            contour_w2=WorldPoint(*d["contour_w"][1]),
            height_m=d["height_m"],
            width_m=d["width_m"],
            slack_m=d["slack_m"],
            direction=d["direction"],
        )


@dataclass(frozen=True)
class TriangleSides:
    a: float  # ridge to contour 1
    b: float  # ridge to contour 2
    c: float  # contour to contour
    d: float  # semi-perimeter
    area: float


def triangle_sides(ridge: WorldPoint, c1: WorldPoint, c2: WorldPoint) -> TriangleSides:
    r, p1, p2 = (np.asarray(v, dtype=float) for v in (ridge, c1, c2))
    a = float(np.linalg.norm(r - p1))
    b = float(np.linalg.norm(r - p2))
    c = float(np.linalg.norm(p1 - p2))
    return TriangleSides(a, b, c, (a + b + c) / 2.0, heron_area(a, b, c))


def heron_area(a: float, b: float, c: float) -> float:
    """Triangle area from its sides, ``sqrt(d(d-a)(d-b)(d-c))``.

    Evaluated in Kahan's rearrangement (sides sorted descending) which keeps
    full relative accuracy for needle-like triangles; collinear or slightly
    inconsistent sides give zero area.
    """
    x, y, z = sorted((a, b, c), reverse=True)
    if z - (x - y) < -1e-12 * max(x, 1.0):
        raise DegenerateTripletError(f"sides {a}, {b}, {c} violate the triangle inequality")
    p = (x + (y + z)) * (z - (x - y)) * (z + (x - y)) * (x + (y - z))
    return 0.25 * math.sqrt(p) if p > 0 else 0.0


def triplet_metrics(ridge: WorldPoint, c1: WorldPoint, c2: WorldPoint) -> tuple[float, float]:
    """Return ``(height_m, width_m)``: apex height over the contour chord and chord length."""
    sides = triangle_sides(ridge, c1, c2)
    if sides.c == 0.0:
        raise DegenerateTripletError("contour points coincide")
    return 2.0 * sides.area / sides.c, sides.c


def geodesic_slack(c1_px, c2_px, h: HeightField, chord: Optional[float] = None) -> float:
    """Surface arc length along the straight segment between the contour
    pixels minus the 3D chord joining them, clamped at zero."""
    (x1, y1), (x2, y2) = c1_px, c2_px
    span = math.hypot(x2 - x1, y2 - y1)
    n = max(1, int(math.ceil(span / SLACK_STEP_PX)))
    t = np.linspace(0.0, 1.0, n + 1)
    xs, ys = x1 + t * (x2 - x1), y1 + t * (y2 - y1)
    zs = ndimage.map_coordinates(h.values, [ys, xs], order=1, mode="nearest")
    ds = span * h.pitch / n
    arc = float(np.sum(np.sqrt(ds * ds + np.diff(zs) ** 2)))
    if chord is None:
        chord = math.sqrt((span * h.pitch) ** 2 + (zs[-1] - zs[0]) ** 2)
    return max(arc - chord, 0.0)


def triplet_slack(t: Triplet, h: HeightField) -> float:
    """Slack between the triplet's contour world points."""
    chord = float(np.linalg.norm(t.contour_w1.as_array() - t.contour_w2.as_array()))
    p1 = (t.contour_w1.x / h.pitch, t.contour_w1.y / h.pitch)
    p2 = (t.contour_w2.x / h.pitch, t.contour_w2.y / h.pitch)
    return geodesic_slack(p1, p2, h, chord)


def convex_regions(topo: TopologyMasks) -> np.ndarray:
    labels, _ = ndimage.label(topo.convex.bits, structure=_EIGHT)
    return labels


def _in_region(labels: np.ndarray, row: int, col: int, region: int) -> bool:
    # one-pixel tolerance: the contour and the convex boundary may disagree by a pixel
    window = labels[max(row - 1, 0):row + 2, max(col - 1, 0):col + 2]
    return bool(np.any(window == region))


def _snap_to_contour(contours: np.ndarray, x: float, y: float, ux: float, uy: float,
                     ox: float, oy: float) -> Optional[tuple[int, int]]:
    """Nearest true contour pixel in the 3x3 block around ``(x, y)``,
    preferring pixels close to the walk ray."""
    h, w = contours.shape
    col, row = int(round(x)), int(round(y))
    best, best_key = None, None
    for r in range(max(row - 1, 0), min(row + 2, h)):
        for c in range(max(col - 1, 0), min(col + 2, w)):
            if not contours[r, c]:
                continue
            dx, dy = c - ox, r - oy
            along = dx * ux + dy * uy
            off = abs(-dx * uy + dy * ux)
            key = (round(off, 9), abs(along - math.hypot(x - ox, y - oy)), r, c)
            if best_key is None or key < best_key:
                best, best_key = (c, r), key
    return best


def _inflection(h: HeightField, x0: float, y0: float, ux: float, uy: float, k: int) -> Optional[float]:
    """Sub-pixel ray parameter of the height-profile inflection nearest step ``k``.

    The profile is sampled bilinearly every quarter pixel and its second
    difference (1 px lag) is searched for a sign change within 3 px of ``k``.
    """
    H, W = h.shape
    ts = np.arange(max(k - 4, 0), k + 4.0001, 0.25)
    xs, ys = x0 + ts * ux, y0 + ts * uy
    inside = (xs >= 0) & (xs <= W - 1) & (ys >= 0) & (ys <= H - 1)
    ts, xs, ys = ts[inside], xs[inside], ys[inside]
    if len(ts) < 9:
        return None
    z = ndimage.map_coordinates(h.values, [ys, xs], order=1, mode="nearest")
    d2 = z[8:] - 2 * z[4:-4] + z[:-8]
    tc = ts[4:-4]
    best = None
    for i in range(len(d2) - 1):
        a, b = d2[i], d2[i + 1]
        if (a < 0 <= b) or (a > 0 >= b):
            t = tc[i] + (tc[i + 1] - tc[i]) * (a / (a - b) if a != b else 0.0)
            if abs(t - k) <= 3 and (best is None or abs(t - k) < abs(best - k)):
                best = float(t)
    return best


def _walk(start: tuple[int, int], ux: float, uy: float, topo: TopologyMasks, h: HeightField,
          regions: np.ndarray, region: int, contour_zone: np.ndarray, max_steps: int,
          climb_tol: float, refine: bool = True):
    x0, y0 = start
    H, W = h.shape
    prev = float(h.values[y0, x0])
    for k in range(1, max_steps + 1):
        x, y = x0 + k * ux, y0 + k * uy
        if not (0 <= x <= W - 1 and 0 <= y <= H - 1):
            return None
        col, row = int(round(x)), int(round(y))
        if not h.valid[row, col]:
            return None
        z = bilinear(h.values, x, y)
        if z - prev > climb_tol:
            return None
        prev = z
        if contour_zone[row, col]:
            hit = _snap_to_contour(topo.contours.bits, x, y, ux, uy, x0, y0)
            if hit is not None and hit != (x0, y0):
                t = _inflection(h, x0, y0, ux, uy, k) if refine else None
                if t is None or t <= 0:
                    return hit, (float(hit[0]), float(hit[1]))
                return hit, (x0 + t * ux, y0 + t * uy)
        if not _in_region(regions, row, col, region):
            return None
    return None


def match_triplet(ridge_px: tuple[int, int], theta: float, topo: TopologyMasks, types: ShapeTypeMap,
                  h: HeightField, max_steps: int = DEFAULT_MAX_STEPS, *, regions: Optional[np.ndarray] = None,
                  contour_zone: Optional[np.ndarray] = None, refine: bool = True,
                  climb_tol: float = CLIMB_TOLERANCE) -> Optional[Triplet]:
    """Match ``ridge_px = (x, y)`` with contour points along ``theta`` and ``theta + pi``.

    Each walk advances one pixel per step with bilinear height sampling and
    succeeds on reaching the (1 px dilated) contour mask.  It aborts when
    the height rises by more than ``climb_tol`` in one step, when it leaves
    the convex region holding the ridge pixel, leaves the grid, or runs out
    of steps.  Returns None unless both walks succeed.

    With ``refine`` set, each contour world point is moved to the sub-pixel
    inflection of the height profile along the walk; the stored contour
    pixels remain the matched mask pixels.
    """
    x0, y0 = int(ridge_px[0]), int(ridge_px[1])
    H, W = h.shape
    if not (0 <= x0 < W and 0 <= y0 < H) or not h.valid[y0, x0]:
        raise DomainError(f"ridge pixel {ridge_px} is outside the valid grid")
    if not topo.ridge_points.bits[y0, x0]:
        raise DomainError(f"pixel {ridge_px} is not a ridge point")
    if not math.isfinite(theta):
        raise DomainError("search direction must be finite")
    if regions is None:
        regions = convex_regions(topo)
    if contour_zone is None:
        contour_zone = ndimage.binary_dilation(topo.contours.bits, structure=_EIGHT)
    region = int(regions[y0, x0])
    ux, uy = math.cos(theta), math.sin(theta)
    ends = []
    for sign in (1.0, -1.0):
        hit = _walk((x0, y0), sign * ux, sign * uy, topo, h, regions, region, contour_zone,
                    max_steps, climb_tol, refine)
        if hit is None:
            return None
        ends.append(hit)
    (c1, p1), (c2, p2) = ends
    # the two contour points must straddle the ridge along the search direction
    s1 = (p1[0] - x0) * ux + (p1[1] - y0) * uy
    s2 = (p2[0] - x0) * ux + (p2[1] - y0) * uy
    if not (s1 > 0 > s2):
        return None
    ridge_w = pixel_to_world(h, (x0, y0))
    w1 = world_point(h, p1[0], p1[1], bilinear(h.values, *p1))
    w2 = world_point(h, p2[0], p2[1], bilinear(h.values, *p2))
    try:
        height, width = triplet_metrics(ridge_w, w1, w2)
    except DegenerateTripletError:
        return None
    slack = geodesic_slack(p1, p2, h, width)
    return Triplet((x0, y0), c1, c2, ridge_w, w1, w2, height, width, slack, float(theta))
