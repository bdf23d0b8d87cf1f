import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from clothgeom.grid import DomainError, HeightField, PixelMask, WorldPoint
from clothgeom.surface import ShapeTypeMap, TopologyMasks
from clothgeom.synth import SceneSpec, gaussian_profile_slack
from clothgeom.triplets import (DegenerateTripletError, geodesic_slack, heron_area, match_triplet,
                                triangle_sides, triplet_metrics)

# A(1 - exp(-1/2)) for A = 0.02
HEIGHT_A20 = 0.0078693868057473315

coord = st.floats(-1.0, 1.0, allow_nan=False)
point = st.builds(WorldPoint, coord, coord, coord)


def test_heron_isoceles_right():
    r, c1, c2 = WorldPoint(0.0, 0.0, 1.0), WorldPoint(-1.0, 0.0, 0.0), WorldPoint(1.0, 0.0, 0.0)
    s = triangle_sides(r, c1, c2)
    assert (s.a, s.b, s.c) == pytest.approx((math.sqrt(2), math.sqrt(2), 2.0), abs=1e-15)
    assert s.d == pytest.approx(math.sqrt(2) + 1, abs=1e-15)
    assert s.area == pytest.approx(1.0, abs=1e-12)
    assert triplet_metrics(r, c1, c2) == pytest.approx((1.0, 2.0), abs=1e-12)


def test_collinear_gives_zero_height():
    h, w = triplet_metrics(WorldPoint(0.5, 0, 0), WorldPoint(0, 0, 0), WorldPoint(2, 0, 0))
    assert h == 0.0 and w == 2.0


def test_coincident_contours_raise():
    with pytest.raises(DegenerateTripletError):
        triplet_metrics(WorldPoint(0, 0, 1), WorldPoint(1, 1, 0), WorldPoint(1, 1, 0))


def test_inconsistent_sides_raise():
    with pytest.raises(DegenerateTripletError):
        heron_area(1.0, 1.0, 3.0)


def _cross_area(r, p, q):
    r, p, q = (np.asarray(v, float) for v in (r, p, q))
    return 0.5 * float(np.linalg.norm(np.cross(p - r, q - r)))


@settings(max_examples=300, deadline=None)
@given(point, point, point)
def test_heron_matches_cross_product(r, p, q):
    s = triangle_sides(r, p, q)
    exact = _cross_area(r, p, q)
    span = max(s.a, s.b, s.c)
    # rounded side lengths carry sqrt(eps) * L^2 area uncertainty on needles
    tol = 1e-12 if exact > 1e-4 * span ** 2 else 1e-12 + 2e-8 * span ** 2
    assert s.area == pytest.approx(exact, abs=tol)


@settings(max_examples=200, deadline=None)
@given(point, point, point, st.floats(0.01, 100.0))
def test_swap_symmetry_and_scaling(r, p, q, s):
    if np.linalg.norm(np.subtract(p, q)) < 1e-6:
        return
    h, w = triplet_metrics(r, p, q)
    assert triplet_metrics(r, q, p) == pytest.approx((h, w), abs=1e-12)
    scale = lambda v: WorldPoint(*(s * np.asarray(v)))
    hs, ws = triplet_metrics(scale(r), scale(p), scale(q))
    assert ws == pytest.approx(s * w, rel=1e-12)
    assert hs == pytest.approx(s * h, rel=1e-9, abs=1e-12 * s)


def test_flat_segment_has_no_slack():
    h = HeightField(np.full((20, 40), 0.003), 0.001)
    assert geodesic_slack((2, 10), (37, 10), h) == 0.0


def test_triangle_wave_slack():
    x = np.arange(41, dtype=float)
    profile = (20.0 - np.abs(x - 20.0)) * 0.001  # slope 1
    h = HeightField(np.tile(profile, (5, 1)), 0.001)
    base = 0.040
    assert geodesic_slack((0, 2), (40, 2), h) == pytest.approx((math.sqrt(2) - 1) * base, rel=0.02)


def test_gaussian_profile_slack_matches_quadrature(scene):
    _, mid, truth = scene(kind="gaussian_ridge")
    raw = geodesic_slack((100, 90), (100, 110), mid.raw)
    assert raw == pytest.approx(truth.slack, rel=0.05)
    assert truth.slack == pytest.approx(gaussian_profile_slack(0.02, 0.01), rel=1e-12)


def test_match_at_crest(scene):
    _, mid, _ = scene(kind="gaussian_ridge")
    t = match_triplet((100, 100), math.pi / 2, mid.topology, mid.types, mid.smooth)
    assert t is not None
    rows = sorted([t.contour_px_1[1], t.contour_px_2[1]])
    assert abs(rows[0] - 90) <= 1 and abs(rows[1] - 110) <= 1
    assert t.width_m == pytest.approx(0.02, rel=0.10)
    assert t.height_m == pytest.approx(HEIGHT_A20, rel=0.10)
    assert t.slack_m >= 0 and t.height_m >= 0
    s1 = (t.contour_px_1[1] - 100) * math.sin(t.direction)
    s2 = (t.contour_px_2[1] - 100) * math.sin(t.direction)
    assert s1 * s2 < 0
    assert t.width_m == pytest.approx(float(np.linalg.norm(np.subtract(t.contour_w1, t.contour_w2))), rel=1e-12)


def _crop(mid, r0, r1):
    topo = mid.topology
    cut = lambda m: PixelMask(m.bits[r0:r1])
    return (TopologyMasks(cut(topo.ridge_points), cut(topo.contours), cut(topo.convex)),
            ShapeTypeMap(mid.types.labels[r0:r1]),
            HeightField(mid.smooth.values[r0:r1], mid.smooth.pitch, mid.smooth.valid[r0:r1]))


def test_border_ridge_has_no_match(scene):
    _, mid, _ = scene(kind="gaussian_ridge")
    topo, types, h = _crop(mid, 97, 140)
    assert topo.ridge_points.bits[3, 100]
    assert match_triplet((100, 3), math.pi / 2, topo, types, h) is None


def test_occluded_side_has_no_match(scene):
    _, mid, _ = scene(kind="gaussian_ridge")
    topo = mid.topology
    contours = topo.contours.bits.copy()
    contours[:100] = False
    occluded = TopologyMasks(topo.ridge_points, PixelMask(contours), topo.convex)
    assert match_triplet((100, 100), math.pi / 2, occluded, mid.types, mid.smooth) is None


def test_non_ridge_start_is_domain_error(scene):
    _, mid, _ = scene(kind="gaussian_ridge")
    with pytest.raises(DomainError):
        match_triplet((100, 50), math.pi / 2, mid.topology, mid.types, mid.smooth)
    with pytest.raises(DomainError):
        match_triplet((500, 100), math.pi / 2, mid.topology, mid.types, mid.smooth)


@pytest.mark.parametrize("orientation", [0.0, 30.0])
def test_contours_near_inflection_lines(scene, orientation):
    report, _, _ = scene(kind="gaussian_ridge", orientation=orientation)
    (w,) = report.wrinkles
    a = math.radians(orientation)
    normal = np.array([-math.sin(a), math.cos(a)])
    hits = 0
    for t in w.triplets:
        d = sorted((np.subtract(p, (100, 100)) @ normal) for p in (t.contour_px_1, t.contour_px_2))
        hits += abs(d[0] + 10) <= 2 and abs(d[1] - 10) <= 2
    assert hits >= 0.9 * len(w.points)
