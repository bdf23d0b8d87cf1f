"""Analytic heightfield scenes with exact ground truth.

Scenes are closed-form surfaces sampled on a pixel grid.  Ridges use the
profile ``A * exp(-u**2 / (2 sigma**2))`` where ``u`` is the distance to the
crest line (or crest segment, giving rounded ends); overlapping features are
combined by taking the maximum.  Orientation angles are measured in the image
frame, from +x (columns) towards +y (rows).
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
from scipy import integrate

from .grid import HeightField, PixelMask

KINDS = ("plane", "hemisphere", "half_cylinder", "gaussian_ridge", "crossing_ridges",
         "t_junction", "multi_wrinkle", "benchmark_oriented")

BENCHMARK_ORIENTATIONS = tuple(float(a) for a in np.linspace(-45.0, 45.0, 8))


class SpecError(ValueError):
    pass


class NotAvailable(LookupError):
    """No closed-form curvature at the requested point."""


@dataclass(frozen=True)
class SceneSpec:
    kind: str = "gaussian_ridge"
    amplitude: float = 0.02
    sigma: float = 0.01
    radius: float = 0.05
    orientation: float = 0.0
    # second crest direction for crossing_ridges; None means orientation + 90
    orientation2: Optional[float] = None
    length: Optional[float] = None
    count: int = 5
    seed: int = 0
    width: int = 201
    height: int = 201
    pitch: float = 0.001
    noise_sigma: float = 0.0
    # garment inset as a fraction of each grid side (benchmark scenes only)
    margin: float = 0.1

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SpecError(f"unknown scene kind {self.kind!r}; expected one of {', '.join(KINDS)}")
        for name in ("amplitude", "sigma", "radius", "pitch"):
            if not getattr(self, name) > 0:
                raise SpecError(f"{name} must be positive")
        if not -90.0 <= self.orientation <= 90.0:
            raise SpecError(f"orientation must lie in [-90, 90] degrees, got {self.orientation}")
        if self.width < 3 or self.height < 3:
            raise SpecError("grid must be at least 3x3")
        if self.noise_sigma < 0:
            raise SpecError("noise_sigma must be >= 0")
        if self.length is not None and self.length <= 0:
            raise SpecError("length must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise SpecError(f"unknown scene keys: {', '.join(sorted(unknown))}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def centre(self) -> tuple[float, float]:
        return ((self.width - 1) / 2.0, (self.height - 1) / 2.0)


@dataclass
class Ridge:
    """One crest in pixel units: a line (``length=None``) or a segment."""

    cx: float
    cy: float
    angle_deg: float
    amplitude: float
    sigma_px: float
    length_px: Optional[float] = None
    # half-line ridges start at the centre and extend along +direction only
    half: bool = False

    @property
    def direction(self) -> np.ndarray:
        a = math.radians(self.angle_deg)
        return np.array([math.cos(a), math.sin(a)])

    def distance(self, x, y):
        t = self.direction
        dx, dy = np.asarray(x, float) - self.cx, np.asarray(y, float) - self.cy
        along = dx * t[0] + dy * t[1]
        across = -dx * t[1] + dy * t[0]
        if self.half:
            lo, hi = 0.0, (np.inf if self.length_px is None else self.length_px)
        elif self.length_px is None:
            return np.abs(across)
        else:
            lo, hi = -self.length_px / 2, self.length_px / 2
        excess = np.maximum(lo - along, 0.0) + np.maximum(along - hi, 0.0)
        return np.hypot(across, excess)

    def height(self, x, y):
        u = self.distance(x, y)
        return self.amplitude * np.exp(-0.5 * (u / self.sigma_px) ** 2)

    def endpoints(self, width: int, height: int) -> np.ndarray:
        """Crest polyline clipped to the grid, in pixels (2x2 array)."""
        t = self.direction
        if self.half:
            lo, hi = 0.0, (1e9 if self.length_px is None else self.length_px)
        elif self.length_px is None:
            lo, hi = -1e9, 1e9
        else:
            lo, hi = -self.length_px / 2, self.length_px / 2
        # clip parameter range to the pixel rectangle [0, W-1] x [0, H-1]
        for c0, tc, top in ((self.cx, t[0], width - 1), (self.cy, t[1], height - 1)):
            if abs(tc) < 1e-15:
                continue
            a, b = (0 - c0) / tc, (top - c0) / tc
            lo, hi = max(lo, min(a, b)), min(hi, max(a, b))
        return np.array([[self.cx + lo * t[0], self.cy + lo * t[1]],
                         [self.cx + hi * t[0], self.cy + hi * t[1]]])


@dataclass
class GroundTruth:
    crest_lines: list = field(default_factory=list)  # world-coordinate (N, 2) arrays
    contour_lines: list = field(default_factory=list)
    wrinkle_count: int = 0
    directions_deg: list = field(default_factory=list)
    crest_height: float = 0.0
    width: float = 0.0
    height_above_chord: float = 0.0
    slack: float = 0.0
    volume_per_length: float = 0.0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["crest_lines"] = [np.asarray(c).tolist() for c in self.crest_lines]
        d["contour_lines"] = [np.asarray(c).tolist() for c in self.contour_lines]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GroundTruth":
        d = dict(d)
        d["crest_lines"] = [np.asarray(c, dtype=float) for c in d.get("crest_lines", [])]
        d["contour_lines"] = [np.asarray(c, dtype=float) for c in d.get("contour_lines", [])]
        return cls(**d)


def gaussian_profile_slack(amplitude: float, sigma: float) -> float:
    """Cross-section arc length between the inflections minus the chord."""
    def integrand(u):
        slope = -amplitude * u / sigma ** 2 * math.exp(-0.5 * (u / sigma) ** 2)
        return math.sqrt(1.0 + slope * slope)
    arc, _ = integrate.quad(integrand, -sigma, sigma, epsabs=1e-14, epsrel=1e-12)
    return arc - 2.0 * sigma


def gaussian_profile_area(amplitude: float, sigma: float) -> float:
    """Cross-section area above the chord joining the two inflections."""
    edge = amplitude * math.exp(-0.5)
    area, _ = integrate.quad(lambda u: amplitude * math.exp(-0.5 * (u / sigma) ** 2) - edge,
                             -sigma, sigma, epsabs=1e-16, epsrel=1e-12)
    return area


def _ridges(spec: SceneSpec) -> list[Ridge]:
    cx, cy = spec.centre
    s_px = spec.sigma / spec.pitch
    a = spec.amplitude
    length_px = None if spec.length is None else spec.length / spec.pitch
    kind = spec.kind
    if kind == "gaussian_ridge":
        return [Ridge(cx, cy, spec.orientation, a, s_px, length_px)]
    if kind == "crossing_ridges":
        second = spec.orientation + 90.0 if spec.orientation2 is None else spec.orientation2
        return [Ridge(cx, cy, spec.orientation, a, s_px, length_px),
                Ridge(cx, cy, second, a, s_px, length_px)]
    if kind == "t_junction":
        return [Ridge(cx, cy, spec.orientation, a, s_px, length_px),
                Ridge(cx, cy, spec.orientation + 90.0, a, s_px, None if length_px is None else length_px / 2,
                      half=True)]
    if kind == "benchmark_oriented":
        side = min(spec.width, spec.height) * (1 - 2 * spec.margin)
        length = 0.6 * side if length_px is None else length_px
        return [Ridge(cx, cy, spec.orientation, a, s_px, length)]
    if kind == "multi_wrinkle":
        rng = np.random.default_rng(spec.seed)
        out = []
        span = min(spec.width, spec.height)
        # stack the crests across the grid so that they stay separable
        offsets = np.linspace(-0.3, 0.3, spec.count) * span if spec.count > 1 else np.zeros(1)
        for k in range(spec.count):
            ang = float(rng.uniform(-20.0, 20.0))
            amp = a * float(rng.uniform(0.5, 1.0))
            length = span * float(rng.uniform(0.35, 0.55)) if length_px is None else length_px
            jitter = float(rng.uniform(-0.1, 0.1)) * span
            out.append(Ridge(cx + jitter, cy + offsets[k], ang, amp, s_px, length))
        return out
    return []


def _check_extent(spec: SceneSpec) -> None:
    if spec.kind in ("plane", "hemisphere", "half_cylinder"):
        return
    extent = 6.0 * spec.sigma
    grid = min(spec.width, spec.height) * spec.pitch
    if extent > 0.8 * grid:
        raise SpecError(f"feature extent {extent:.4g} m exceeds 80% of the {grid:.4g} m grid")
    if spec.count < 1:
        raise SpecError("count must be >= 1")


def height_at(spec: SceneSpec, x, y):
    """Noise-free analytic height at pixel coordinates ``(x, y)``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    cx, cy = spec.centre
    if spec.kind == "plane":
        return np.zeros(np.broadcast(x, y).shape)
    if spec.kind == "hemisphere":
        r2 = ((x - cx) ** 2 + (y - cy) ** 2) * spec.pitch ** 2
        return np.sqrt(np.maximum(spec.radius ** 2 - r2, 0.0))
    if spec.kind == "half_cylinder":
        a = math.radians(spec.orientation)
        across = (-(x - cx) * math.sin(a) + (y - cy) * math.cos(a)) * spec.pitch
        return np.sqrt(np.maximum(spec.radius ** 2 - across ** 2, 0.0))
    out = np.zeros(np.broadcast(x, y).shape)
    for ridge in _ridges(spec):
        out = np.maximum(out, ridge.height(x, y))
    return out


def garment_mask(spec: SceneSpec) -> PixelMask:
    bits = np.ones((spec.height, spec.width), dtype=bool)
    if spec.kind == "benchmark_oriented":
        my = int(round(spec.margin * spec.height))
        mx = int(round(spec.margin * spec.width))
        bits[:] = False
        bits[my:spec.height - my, mx:spec.width - mx] = True
    return PixelMask(bits)


def ground_truth(spec: SceneSpec) -> GroundTruth:
    gt = GroundTruth()
    if spec.kind == "hemisphere":
        gt.crest_height = spec.radius
        return gt
    if spec.kind == "half_cylinder":
        r = Ridge(*spec.centre, spec.orientation, spec.radius, 1.0)
        gt.crest_lines = [r.endpoints(spec.width, spec.height) * spec.pitch]
        gt.crest_height = spec.radius
        gt.wrinkle_count = 1
        gt.directions_deg = [spec.orientation]
        return gt
    ridges = _ridges(spec)
    for r in ridges:
        ends = r.endpoints(spec.width, spec.height)
        gt.crest_lines.append(ends * spec.pitch)
        n = np.array([-r.direction[1], r.direction[0]]) * r.sigma_px
        gt.contour_lines.append((ends + n) * spec.pitch)
        gt.contour_lines.append((ends - n) * spec.pitch)
        gt.directions_deg.append(r.angle_deg)
    gt.wrinkle_count = len(ridges)
    if ridges:
        a, s = spec.amplitude, spec.sigma
        gt.crest_height = a
        gt.width = 2.0 * s
        gt.height_above_chord = a * (1.0 - math.exp(-0.5))
        gt.slack = gaussian_profile_slack(a, s)
        gt.volume_per_length = gaussian_profile_area(a, s)
    return gt


def generate(spec: SceneSpec) -> tuple[HeightField, PixelMask, GroundTruth]:
    """Sample the scene; deterministic for a given spec (noise uses ``seed``)."""
    _check_extent(spec)
    y, x = np.mgrid[0:spec.height, 0:spec.width].astype(float)
    values = height_at(spec, x, y)
    mask = garment_mask(spec)
    if spec.kind == "benchmark_oriented":
        values = np.where(mask.bits, values, 0.0)
    if spec.noise_sigma > 0:
        rng = np.random.default_rng(spec.seed)
        values = values + rng.normal(0.0, spec.noise_sigma, values.shape)
    return HeightField(values, spec.pitch), mask, ground_truth(spec)


def _monge_curvatures(fx, fy, fxx, fxy, fyy):
    g = 1.0 + fx * fx + fy * fy
    mean = ((1 + fy * fy) * fxx + (1 + fx * fx) * fyy - 2 * fx * fy * fxy) / (2 * g ** 1.5)
    gauss = (fxx * fyy - fxy * fxy) / g ** 2
    disc = math.sqrt(max(mean * mean - gauss, 0.0))
    return mean, gauss, mean + disc, mean - disc


def analytic_curvature(spec: SceneSpec, x: float, y: float) -> tuple[float, float, float, float]:
    """Closed-form ``(mean, gaussian, k_max, k_min)`` at world point ``(x, y)``."""
    p = spec.pitch
    px, py = x / p, y / p
    cx, cy = spec.centre
    if spec.kind == "plane":
        return 0.0, 0.0, 0.0, 0.0
    if spec.kind == "hemisphere":
        dx, dy = (px - cx) * p, (py - cy) * p
        r2 = spec.radius ** 2 - dx * dx - dy * dy
        if r2 <= 0:
            raise NotAvailable("outside the hemisphere")
        z = math.sqrt(r2)
        fx, fy = -dx / z, -dy / z
        fxx = -(spec.radius ** 2 - dy * dy) / z ** 3
        fyy = -(spec.radius ** 2 - dx * dx) / z ** 3
        fxy = -dx * dy / z ** 3
        return _monge_curvatures(fx, fy, fxx, fxy, fyy)
    if spec.kind == "half_cylinder":
        a = math.radians(spec.orientation)
        nx, ny = -math.sin(a), math.cos(a)
        u = ((px - cx) * nx + (py - cy) * ny) * p
        r = spec.radius
        if abs(u) >= r:
            raise NotAvailable("outside the cylinder")
        z = math.sqrt(r * r - u * u)
        d1, d2 = -u / z, -r * r / z ** 3
        return _monge_curvatures(d1 * nx, d1 * ny, d2 * nx * nx, d2 * nx * ny, d2 * ny * ny)
    ridges = _ridges(spec)
    if not ridges:
        return 0.0, 0.0, 0.0, 0.0
    heights = [float(r.height(px, py)) for r in ridges]
    order = np.argsort(heights)[::-1]
    top = ridges[order[0]]
    if len(ridges) > 1 and heights[order[1]] > 1e-6 * max(heights[order[0]], 1e-300):
        raise NotAvailable("superposition overlap")
    t = top.direction
    dx, dy = px - top.cx, py - top.cy
    along = dx * t[0] + dy * t[1]
    if top.half:
        lo, hi = 0.0, (np.inf if top.length_px is None else top.length_px)
    elif top.length_px is None:
        lo, hi = -np.inf, np.inf
    else:
        lo, hi = -top.length_px / 2, top.length_px / 2
    if not lo <= along <= hi:
        raise NotAvailable("rounded ridge end")
    nx, ny = -t[1], t[0]
    s = top.sigma_px * p
    u = (dx * nx + dy * ny) * p
    f = top.amplitude * math.exp(-0.5 * (u / s) ** 2)
    d1 = -u / s ** 2 * f
    d2 = (u * u / s ** 4 - 1.0 / s ** 2) * f
    return _monge_curvatures(d1 * nx, d1 * ny, d2 * nx * nx, d2 * nx * ny, d2 * ny * ny)
