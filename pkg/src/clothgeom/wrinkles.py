"""Wrinkle detection, quintic description, Hough splitting and quantification.

Ridge points are linked into thin polylines, cut at dome/rut junctions and
regrouped into wrinkles.  Each wrinkle is described by a fifth-order
polynomial in its own principal frame; groups that a single quintic cannot
describe are split along the two dominant Hough lines, recursively.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import ndimage
from scipy.sparse.csgraph import connected_components

from .differential import CurvatureMaps
from .grid import Calibration, HeightField
from .surface import ShapeTypeMap, SurfaceType, TopologyMasks
from .triplets import DEFAULT_MAX_STEPS, Triplet, convex_regions, match_triplet

MIN_SEGMENT_PX = 5
JUNCTION_WINDOW = 5
JUNCTION_MIN_PIXELS = 3
GROUP_GAP_PX = 8.0
GROUP_ANGLE_DEG = 30.0
# segment ends of three or more segments this close together mark a junction
JUNCTION_RADIUS_PX = 24.0
TANGENT_SPAN = 20
# fitted pieces this close may rejoin when one quintic describes both, e.g. across a crossing
REJOIN_GAP_PX = 64.0
MIN_FIT_POINTS = 8
THRES_RMSE_PX = 2.0
THRES_ALPHA_DEG = 20.0
MAX_SPLIT_DEPTH = 4
HOUGH_ALPHA_BIN_DEG = 1.0
HOUGH_BETA_BIN_PX = 2.0
# a second Hough peak must collect at least this fraction of the first peak's votes
HOUGH_SECOND_PEAK_FRACTION = 0.3

_EIGHT = np.ones((3, 3), dtype=bool)


class InsufficientPointsError(ValueError):
    pass


class CurveFitError(RuntimeError):
    pass


class UnquantifiedWrinkleError(ValueError):
    """A wrinkle without any valid triplet."""


@dataclass(frozen=True, eq=False)
class RidgeSegment:
    points: np.ndarray  # (N, 2) integer (x, y), consecutive points are 8-neighbours

    @property
    def length_px(self) -> int:
        return len(self.points)


@dataclass(frozen=True)
class QuinticCurve:
    """``v = a u^5 + b u^4 + c u^3 + d u^2 + e u + f`` in a local frame.

    The frame origin is the centroid of the fitted points and its abscissa
    axis points along ``angle`` (radians, image frame).
    """

    coefficients: tuple[float, float, float, float, float, float]
    origin: tuple[float, float]
    angle: float
    u_range: tuple[float, float]
    rmse_px: float

    @property
    def axes(self) -> tuple[np.ndarray, np.ndarray]:
        e1 = np.array([math.cos(self.angle), math.sin(self.angle)])
        return e1, np.array([-e1[1], e1[0]])

    def to_local(self, points) -> tuple[np.ndarray, np.ndarray]:
        p = np.asarray(points, dtype=float) - np.asarray(self.origin)
        e1, e2 = self.axes
        return p @ e1, p @ e2

    def to_image(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        e1, e2 = self.axes
        v = self(u)
        return np.asarray(self.origin) + np.multiply.outer(u, e1) + np.multiply.outer(v, e2)

    def __call__(self, u):
        return np.polyval(self.coefficients, u)

    def slope(self, u):
        return np.polyval(np.polyder(self.coefficients), u)

    def to_dict(self) -> dict:
        return {"coefficients": list(self.coefficients), "origin": list(self.origin), "angle": self.angle,
                "u_range": list(self.u_range), "rmse_px": self.rmse_px}

    @classmethod
    def from_dict(cls, d: dict) -> "QuinticCurve":
        return cls(tuple(d["coefficients"]), tuple(d["origin"]), d["angle"], tuple(d["u_range"]), d["rmse_px"])


@dataclass(eq=False)
class Wrinkle:
    points: np.ndarray  # (N, 2) integer (x, y)
    curve: QuinticCurve
    triplets: list = field(default_factory=list)
    width_m: float = 0.0
    height_m: float = 0.0
    volume_m3: float = 0.0
    principal_dir: tuple[float, float] = (1.0, 0.0)
    score: float = 0.0
    warning: Optional[str] = None

    @property
    def centroid(self) -> tuple[float, float]:
        """``(row, col)`` centroid of the point set."""
        c = self.points.mean(axis=0)
        return float(c[1]), float(c[0])

    def to_dict(self) -> dict:
        return {
            "points": self.points.tolist(),
            "curve": self.curve.to_dict(),
            "triplets": [t.to_dict() for t in self.triplets],
            "width_m": self.width_m,
            "height_m": self.height_m,
            "volume_m3": self.volume_m3,
            "principal_dir": list(self.principal_dir),
            "score": self.score,
            "warning": self.warning,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Wrinkle":
        return cls(
            points=np.asarray(d["points"], dtype=int).reshape(-1, 2),
            curve=QuinticCurve.from_dict(d["curve"]),
            triplets=[Triplet.from_dict(t) for t in d["triplets"]],
            width_m=d["width_m"],
            height_m=d["height_m"],
            volume_m3=d["volume_m3"],
            principal_dir=tuple(d["principal_dir"]),
            score=d["score"],
            warning=d.get("warning"),
        )


@dataclass(frozen=True, eq=False)
class SplitResult:
    subsets: tuple  # one array when unsplit, two when split
    lines: tuple = ()  # (alpha_rad, beta_px) normal-form lines about the centroid
    warning: Optional[str] = None

    @property
    def split(self) -> bool:
        return len(self.subsets) == 2


# ---------------------------------------------------------------- linking

def _trace(pixels: set, adjacency: dict) -> list[np.ndarray]:
    """Order the pixels of a max-degree-two graph into paths."""
    seen = set()
    paths = []
    for start in sorted(pixels, key=lambda p: (len(adjacency[p]) != 1, p)):
        if start in seen:
            continue
        path = [start]
        seen.add(start)
        cur = start
        while True:
            nxt = [q for q in adjacency[cur] if q not in seen]
            if not nxt:
                break
            cur = min(nxt)
            seen.add(cur)
            path.append(cur)
        paths.append(np.array([(c, r) for r, c in path], dtype=int))
    return paths


def link_segments(topo: TopologyMasks, min_length: int = MIN_SEGMENT_PX) -> list[RidgeSegment]:
    """Trace ridge points into ordered 8-connected polylines.

    Diagonal links that shortcut a 4-connected corner are dropped; pixels
    left with three or more links are branch points and are removed, so
    every remaining piece is a simple path (or loop, opened at its first
    pixel).  Pieces shorter than ``min_length`` are discarded.
    """
    bits = topo.ridge_points.bits
    rows, cols = np.nonzero(bits)
    pixels = set(zip(rows.tolist(), cols.tolist()))
    adjacency = {}
    for r, c in pixels:
        links = []
        for dr in (-1, 0, 1):
            for dc in (-1, 0, 1):
                q = (r + dr, c + dc)
                if (dr or dc) and q in pixels:
                    if dr and dc and ((r, c + dc) in pixels or (r + dr, c) in pixels):
                        continue
                    links.append(q)
        adjacency[(r, c)] = links
    branch = {p for p, links in adjacency.items() if len(links) >= 3}
    kept = pixels - branch
    adjacency = {p: [q for q in adjacency[p] if q in kept] for p in kept}
    segments = [RidgeSegment(path) for path in _trace(kept, adjacency) if len(path) >= min_length]
    return sorted(segments, key=lambda s: (s.points[0][1], s.points[0][0], len(s.points)))


def split_at_junctions(segments, types: ShapeTypeMap, min_length: int = MIN_SEGMENT_PX) -> list[RidgeSegment]:
    """Cut segments wherever the 5x5 neighbourhood holds >= 3 dome or rut pixels.

    Cut points are dropped; pieces shorter than ``min_length`` are discarded.
    """
    junction = types.mask_of(SurfaceType.DOME, SurfaceType.RUT).astype(np.float64)
    counts = ndimage.correlate(junction, np.ones((JUNCTION_WINDOW, JUNCTION_WINDOW)), mode="constant")
    cut = np.rint(counts) >= JUNCTION_MIN_PIXELS
    out = []
    for seg in segments:
        p = seg.points
        keep = ~cut[p[:, 1], p[:, 0]]
        if keep.all():
            out.append(seg)
            continue
        labels, n = ndimage.label(keep)
        for k in range(1, n + 1):
            piece = p[labels == k]
            if len(piece) >= min_length:
                out.append(RidgeSegment(piece))
    return out


def _axis_angle(points: np.ndarray) -> float:
    """Principal direction of a short run of pixels, degrees mod 180."""
    if len(points) < 2:
        return 0.0
    v, _ = principal_axis(points)
    return math.degrees(math.atan2(v[1], v[0])) % 180.0


def _local_tangent(points: np.ndarray, k: int) -> float:
    lo = max(0, min(k - TANGENT_SPAN // 2, len(points) - TANGENT_SPAN))
    return _axis_angle(points[lo:lo + TANGENT_SPAN])


def _angle_gap(a: float, b: float) -> float:
    d = abs(a - b) % 180.0
    return min(d, 180.0 - d)


def group_segments(segments, max_gap: float = GROUP_GAP_PX, max_angle: float = GROUP_ANGLE_DEG,
                   junction_radius: float = JUNCTION_RADIUS_PX) -> list[np.ndarray]:
    """Merge segments into wrinkle point sets (transitive closure).

    Two segments join when an endpoint of one lies within ``max_gap`` of a
    point of the other and the tangents there differ by at most
    ``max_angle``; for two endpoints this is the plain end-to-end gap test,
    for an endpoint near the middle of another segment it catches branches
    that merge at a shallow angle.  Tangents are principal directions of
    ``TANGENT_SPAN`` consecutive pixels.  Where endpoints of three or more
    segments gather within ``junction_radius`` (single linkage) the
    segments of at least ``TANGENT_SPAN`` pixels meet at a junction,
    provided two of their end tangents differ by more than ``max_angle``,
    and are grouped whatever their angles;
    Hough splitting separates the crossing wrinkles afterwards.
    Returns one ``(N, 2)`` point array per group, rows sorted by ``(y, x)``.
    """
    n = len(segments)
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    pts = [s.points for s in segments]
    ends = [((p[0], _local_tangent(p, 0)), (p[-1], _local_tangent(p, len(p) - 1))) for p in pts]
    for i in range(n):
        for j in range(n):
            if i == j or find(i) == find(j):
                continue
            for e, t in ends[i]:
                d = np.hypot(*(pts[j] - e).T)
                k = int(np.argmin(d))
                if d[k] <= max_gap and _angle_gap(t, _local_tangent(pts[j], k)) <= max_angle:
                    parent[find(i)] = find(j)
                    break

    # only arms long enough for a stable tangent take part in junctions;
    # short cap stubs at ridge tips would otherwise glue neighbours together
    arms = [i for i in range(n) if len(pts[i]) >= TANGENT_SPAN]
    if len(arms) >= 3:
        # single-linkage clusters of endpoints; three or more segments meeting is a junction
        xy = np.array([e for i in arms for e, _ in ends[i]], dtype=float)
        owner = np.repeat(np.array(arms), 2)
        close = np.hypot(*(xy[:, None, :] - xy[None, :, :]).transpose(2, 0, 1)) <= junction_radius
        _, cluster = connected_components(close, directed=False)
        tangents = np.array([t for i in arms for _, t in ends[i]])
        for c in np.unique(cluster):
            members = np.unique(owner[cluster == c])
            # parallel ends (e.g. stacked folds cut by the mask edge) are no junction
            ts = tangents[cluster == c]
            crossing = max(_angle_gap(a, b) for a in ts for b in ts) > max_angle
            if len(members) >= 3 and crossing:
                for i in members[1:]:
                    parent[find(int(i))] = find(int(members[0]))

    groups: dict[int, list] = {}
    for i in range(n):
        groups.setdefault(find(i), []).append(pts[i])
    out = []
    for members in groups.values():
        merged = np.unique(np.concatenate(members), axis=0)
        out.append(merged[np.lexsort((merged[:, 0], merged[:, 1]))])
    return sorted(out, key=lambda p: (p[0, 1], p[0, 0], len(p)))


# ---------------------------------------------------------------- description

def principal_axis(points) -> tuple[np.ndarray, float]:
    """Dominant eigenvector of the 2x2 coordinate covariance and the eigenvalue gap.

    The sign is normalised to non-negative x (non-negative y when x is zero).
    """
    p = np.asarray(points, dtype=float)
    cov = np.cov(p.T, bias=True) if len(p) > 1 else np.zeros((2, 2))
    evals, evecs = np.linalg.eigh(cov)
    v = evecs[:, 1]
    if v[0] < 0 or (v[0] == 0 and v[1] < 0):
        v = -v
    return v, float(evals[1] - evals[0])


def fit_quintic(points) -> QuinticCurve:
    """Least-squares quintic of the ordinate on the abscissa in the principal frame."""
    p = np.asarray(points, dtype=float)
    if p.ndim != 2 or len(p) < MIN_FIT_POINTS:
        raise InsufficientPointsError(f"need at least {MIN_FIT_POINTS} points, got {len(p)}")
    origin = p.mean(axis=0)
    axis, _ = principal_axis(p)
    angle = math.atan2(axis[1], axis[0])
    q = p - origin
    u = q @ axis
    v = q @ np.array([-axis[1], axis[0]])
    scale = float(np.max(np.abs(u)))
    if scale == 0.0:
        raise CurveFitError("points collapse to a single abscissa")
    basis = np.vander(u / scale, 6)
    coef, _, rank, _ = np.linalg.lstsq(basis, v, rcond=None)
    if rank < 6:
        raise CurveFitError(f"quintic basis is rank deficient (rank {rank}) on {len(p)} points")
    coef = coef / scale ** np.arange(5, -1, -1)
    rmse = float(np.sqrt(np.mean((np.polyval(coef, u) - v) ** 2)))
    return QuinticCurve(tuple(float(c) for c in coef), (float(origin[0]), float(origin[1])), angle,
                        (float(u.min()), float(u.max())), rmse)


def tangent_direction(c: QuinticCurve, x: float) -> float:
    """Image-frame tangent angle at local abscissa ``x``, folded to (-pi/2, pi/2]."""
    delta = c.angle + math.atan(float(c.slope(x)))
    delta = math.fmod(delta + math.pi / 2, math.pi)
    if delta <= 0:
        delta += math.pi
    return delta - math.pi / 2


# ---------------------------------------------------------------- Hough

def _hough_peaks(acc: np.ndarray) -> list[tuple[int, int, int]]:
    """Local maxima ``(votes, alpha_bin, beta_bin)``, strongest first."""
    # alpha wraps with beta mirrored; pad with the flipped rows before NMS
    padded = np.concatenate([acc[-1:, ::-1], acc, acc[:1, ::-1]], axis=0)
    local = ndimage.maximum_filter(padded, size=3, mode="constant", cval=0)[1:-1]
    ai, bi = np.nonzero((acc == local) & (acc > 0))
    peaks = [(int(acc[a, b]), int(a), int(b)) for a, b in zip(ai, bi)]
    return sorted(peaks, key=lambda t: (-t[0], t[1], t[2]))


def hough_split(points, thres_rmse: float = THRES_RMSE_PX, thres_alpha: float = THRES_ALPHA_DEG) -> SplitResult:
    """Split a point set along its two dominant lines when one quintic does not fit.

    Points vote in a normal-form ``(alpha, beta)`` accumulator about their
    centroid (1 degree by 2 px bins).  The two strongest peaks whose line
    angles differ by more than ``thres_alpha`` (modulo 180) define lines
    ``l1``, ``l2``; every point goes to the nearer line.  Without such a
    second peak the set is returned unsplit with a warning.
    """
    p = np.asarray(points)
    if len(p) == 0:
        raise InsufficientPointsError("empty point set")
    if thres_rmse <= 0 or thres_alpha <= 0:
        raise ValueError("thresholds must be positive")
    if len(p) >= MIN_FIT_POINTS:
        try:
            if fit_quintic(p).rmse_px <= thres_rmse:
                return SplitResult((p,))
        except CurveFitError:
            pass
    centre = p.mean(axis=0)
    q = p - centre
    n_alpha = int(round(180.0 / HOUGH_ALPHA_BIN_DEG))
    alphas = np.deg2rad(np.arange(n_alpha) * HOUGH_ALPHA_BIN_DEG)
    beta = q[:, 0, None] * np.cos(alphas) + q[:, 1, None] * np.sin(alphas)
    reach = float(np.max(np.hypot(q[:, 0], q[:, 1]))) + HOUGH_BETA_BIN_PX
    n_beta = 2 * int(math.ceil(reach / HOUGH_BETA_BIN_PX)) + 1
    offset = n_beta // 2
    bins = np.floor(beta / HOUGH_BETA_BIN_PX + 0.5).astype(int) + offset
    acc = np.zeros((n_alpha, n_beta), dtype=np.int64)
    np.add.at(acc, (np.broadcast_to(np.arange(n_alpha), bins.shape), bins), 1)

    peaks = _hough_peaks(acc)
    first = peaks[0]
    second = None
    for cand in peaks[1:]:
        if cand[0] < HOUGH_SECOND_PEAK_FRACTION * first[0]:
            break
        if _angle_gap(cand[1] * HOUGH_ALPHA_BIN_DEG, first[1] * HOUGH_ALPHA_BIN_DEG) > thres_alpha:
            second = cand
            break
    if second is None:
        return SplitResult((p,), warning=f"no second direction more than {thres_alpha:g} deg from the first")
    lines = tuple((float(alphas[a]), (b - offset) * HOUGH_BETA_BIN_PX) for _, a, b in (first, second))
    dist = np.stack([np.abs(q[:, 0] * math.cos(a) + q[:, 1] * math.sin(a) - b) for a, b in lines])
    to_first = dist[0] <= dist[1]
    if to_first.all() or not to_first.any():
        return SplitResult((p,), lines, warning="all points fall to one line")
    return SplitResult((p[to_first], p[~to_first]), lines)


# ---------------------------------------------------------------- quantification

def quantify_wrinkle(w: Wrinkle) -> tuple[float, float, float]:
    """Mean triplet width and height and the parabolic-section volume.

    Volume is ``sum (2/3) h_i w_i ds_i`` with ``ds_i`` the mean of the
    distances to the neighbouring triplet ridge points along the curve
    (the single neighbour at either end).
    """
    ts = w.triplets
    if not ts:
        raise UnquantifiedWrinkleError("wrinkle has no valid triplets")
    width = float(np.mean([t.width_m for t in ts]))
    height = float(np.mean([t.height_m for t in ts]))
    if len(ts) == 1:
        # a lone triplet stands for one pixel of crest
        return width, height, (2.0 / 3.0) * height * width * _pixel_pitch(ts[0])
    u, _ = w.curve.to_local(np.array([t.ridge_px for t in ts], dtype=float))
    order = np.argsort(u, kind="stable")
    pos = np.array([ts[i].ridge_w.as_array() for i in order])
    gaps = np.linalg.norm(np.diff(pos, axis=0), axis=1)
    ds = np.empty(len(ts))
    ds[0], ds[-1] = gaps[0], gaps[-1]
    ds[1:-1] = 0.5 * (gaps[:-1] + gaps[1:])
    hw = np.array([ts[i].height_m * ts[i].width_m for i in order])
    return width, height, float(np.sum((2.0 / 3.0) * hw * ds))


def _pixel_pitch(t: Triplet) -> float:
    x, y = t.ridge_px
    if x:
        return t.ridge_w.x / x
    if y:
        return t.ridge_w.y / y
    return 0.0


def _resolve(points: np.ndarray, depth: int, thres_rmse: float, thres_alpha: float,
             max_depth: int, out: list) -> None:
    if len(points) < MIN_FIT_POINTS:
        return
    try:
        curve = fit_quintic(points)
    except CurveFitError:
        return
    if curve.rmse_px <= thres_rmse:
        out.append((points, curve, None))
        return
    if depth >= max_depth:
        out.append((points, curve, f"split depth cap {max_depth} reached with rmse {curve.rmse_px:.2f} px"))
        return
    result = hough_split(points, thres_rmse, thres_alpha)
    if not result.split:
        out.append((points, curve, result.warning))
        return
    for sub in result.subsets:
        _resolve(sub, depth + 1, thres_rmse, thres_alpha, max_depth, out)


def _gap(p: np.ndarray, q: np.ndarray) -> float:
    d = p[:, None, :] - q[None, :, :]
    return float(np.sqrt(np.min(np.sum(d * d, axis=-1))))


def _collinear(p: np.ndarray, q: np.ndarray, max_angle: float = GROUP_ANGLE_DEG) -> bool:
    a, b = _axis_angle(p), _axis_angle(q)
    d = q.mean(axis=0) - p.mean(axis=0)
    link = math.degrees(math.atan2(d[1], d[0])) % 180.0
    return max(_angle_gap(a, b), _angle_gap(a, link), _angle_gap(b, link)) <= max_angle


def _rejoin(finals: list, thres_rmse: float) -> list:
    """Merge collinear fitted pieces that lie within ``REJOIN_GAP_PX`` of
    each other when a single quintic still describes their union.

    Crossing crests leave a hole around the junction, so the two arms of one
    wrinkle come out as separate pieces; this puts them back together.
    Pieces shorter than ``TANGENT_SPAN`` have no reliable axis and stay apart.
    """
    finals = list(finals)
    merged = True
    while merged:
        merged = False
        for i in range(len(finals)):
            for j in range(i + 1, len(finals)):
                (p, _, wp), (q, _, wq) = finals[i], finals[j]
                short = min(len(p), len(q)) < TANGENT_SPAN
                if wp or wq or short or _gap(p, q) > REJOIN_GAP_PX or not _collinear(p, q):
                    continue
                union = np.concatenate([p, q])
                try:
                    curve = fit_quintic(union)
                except CurveFitError:
                    continue
                if curve.rmse_px <= thres_rmse:
                    union = union[np.lexsort((union[:, 0], union[:, 1]))]
                    finals[i] = (union, curve, None)
                    del finals[j]
                    merged = True
                    break
            if merged:
                break
    return finals


def detect_wrinkles(topo: TopologyMasks, types: ShapeTypeMap, curvatures: CurvatureMaps, h: HeightField,
                    calib: Optional[Calibration] = None, *, thres_rmse: float = THRES_RMSE_PX,
                    thres_alpha: float = THRES_ALPHA_DEG, max_depth: int = MAX_SPLIT_DEPTH,
                    max_steps: int = DEFAULT_MAX_STEPS) -> list[Wrinkle]:
    """Link, split, group, fit and quantify wrinkles, ranked by volume.

    Every ridge point of a final wrinkle is matched into a triplet along the
    quintic normal.  Wrinkles are ordered by score (descending), then by
    centroid row and column.
    """
    if not (topo.ridge_points.shape == types.shape == curvatures.shape == h.shape):
        raise ValueError("wrinkle detection inputs must share dimensions")
    if calib is not None and not math.isclose(calib.pitch, h.pitch, rel_tol=1e-12):
        raise ValueError(f"calibration pitch {calib.pitch} differs from height field pitch {h.pitch}")
    segments = split_at_junctions(link_segments(topo), types)
    finals: list = []
    for group in group_segments(segments):
        _resolve(group, 0, thres_rmse, thres_alpha, max_depth, finals)
    finals = _rejoin(finals, thres_rmse)

    regions = convex_regions(topo)
    zone = ndimage.binary_dilation(topo.contours.bits, structure=_EIGHT)
    wrinkles = []
    for points, curve, warning in finals:
        u, _ = curve.to_local(points)
        lo, hi = curve.u_range
        triplets = []
        for (x, y), ui in zip(points, u):
            normal = tangent_direction(curve, float(np.clip(ui, lo, hi))) + math.pi / 2
            t = match_triplet((int(x), int(y)), normal, topo, types, h, max_steps,
                              regions=regions, contour_zone=zone)
            if t is not None:
                triplets.append(t)
        w = Wrinkle(points=points, curve=curve, triplets=triplets, warning=warning,
                    principal_dir=tuple(float(v) for v in principal_axis(points)[0]))
        try:
            w.width_m, w.height_m, w.volume_m3 = quantify_wrinkle(w)
        except UnquantifiedWrinkleError:
            pass
        w.score = w.volume_m3
        wrinkles.append(w)
    return sorted(wrinkles, key=lambda w: (-w.score, *w.centroid))
