import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from clothgeom.grid import (Calibration, DepthMap, DomainError, HeightField, InvalidInputError, PixelMask,
                            WorldPoint, bilinear, depth_to_height, erode_mask, pixel_to_world)
from clothgeom.synth import SceneSpec, generate


def test_constant_depth_gives_zero_height():
    h = depth_to_height(DepthMap(np.full((4, 5), 1.0)), Calibration(0.001, 1.0))
    assert np.all(h.values == 0.0)
    assert h.pitch == 0.001


def test_single_dip_becomes_bump():
    d = np.full((3, 3), 1.0)
    d[1, 2] = 0.98
    h = depth_to_height(DepthMap(d), Calibration(0.001, 1.0))
    assert h.values[1, 2] == pytest.approx(0.02, abs=1e-15)


def test_gaussian_dip_maps_to_height_maximum():
    field, _, _ = generate(SceneSpec(kind="gaussian_ridge", length=0.05))
    depth = DepthMap(1.0 - field.values)
    h = depth_to_height(depth, Calibration(field.pitch, 1.0))
    assert np.unravel_index(np.argmax(h.values), h.shape) == np.unravel_index(np.argmin(depth.values), h.shape)


def test_empty_grid_rejected():
    with pytest.raises(InvalidInputError):
        DepthMap(np.zeros((0, 3)))
    with pytest.raises(InvalidInputError):
        HeightField(np.zeros((2, 2)), pitch=0.0)


def test_invalid_pixels_propagate():
    d = np.array([[1.0, np.nan], [0.0, 0.9]])
    h = depth_to_height(DepthMap(d), Calibration(0.001))
    assert h.valid.tolist() == [[True, False], [False, True]]


@settings(max_examples=50, deadline=None)
@given(arrays(float, (5, 6), elements=st.floats(0.1, 5.0)), st.floats(-2.0, 2.0))
def test_depth_height_involution(values, offset):
    c = Calibration(0.002, offset)
    once = depth_to_height(DepthMap(values), c)
    twice = depth_to_height(once, c)
    assert np.max(np.abs(twice.values - values)) < 1e-12


def test_pixel_to_world_examples():
    h = HeightField(np.zeros((30, 30)), 0.001)
    assert pixel_to_world(h, (0, 0)) == WorldPoint(0.0, 0.0, 0.0)
    v = np.zeros((30, 30))
    v[20, 10] = 0.02
    p = pixel_to_world(HeightField(v, 0.001), (10, 20))
    assert p == pytest.approx((0.01, 0.02, 0.02), abs=1e-15)


def test_pixel_to_world_matches_synth_world_coordinates():
    spec = SceneSpec(kind="gaussian_ridge")
    h, _, truth = generate(spec)
    # crest end point of a horizontal ridge lies on pixel (0, 100)
    start = truth.crest_lines[0][0]
    p = pixel_to_world(h, (0, 100))
    assert abs(p.x - start[0]) < 1e-12 and abs(p.y - start[1]) < 1e-12
    assert abs(p.z - spec.amplitude) < 1e-12


@pytest.mark.parametrize("px", [(-1, 0), (0, 3), (0.5, 1)])
def test_pixel_to_world_domain_errors(px):
    h = HeightField(np.zeros((3, 3)), 0.001)
    with pytest.raises(DomainError):
        pixel_to_world(h, px)


def test_pixel_to_world_invalid_pixel():
    valid = np.ones((3, 3), bool)
    valid[1, 1] = False
    with pytest.raises(DomainError):
        pixel_to_world(HeightField(np.zeros((3, 3)), 0.001, valid), (1, 1))


def test_erode_identity_and_border():
    m = PixelMask(np.ones((3, 3), bool))
    assert np.array_equal(erode_mask(m, 0).bits, m.bits)
    out = erode_mask(m, 1).bits
    assert out.sum() == 1 and out[1, 1]


def test_erode_disc_against_brute_force():
    yy, xx = np.mgrid[0:61, 0:61]
    disc = (xx - 30) ** 2 + (yy - 30) ** 2 <= 20 ** 2
    for k in (1, 3, 5):
        expect = np.zeros_like(disc)
        for r in range(61):
            for c in range(61):
                r0, r1, c0, c1 = r - k, r + k + 1, c - k, c + k + 1
                if r0 >= 0 and c0 >= 0 and r1 <= 61 and c1 <= 61:
                    expect[r, c] = disc[r0:r1, c0:c1].all()
        got = erode_mask(PixelMask(disc), k).bits
        assert np.array_equal(got, expect)
        # and it is a disc of radius about 20 - k
        radii = np.hypot(xx[got] - 30, yy[got] - 30)
        assert abs(radii.max() - (20 - k)) <= 1.0


@settings(max_examples=30, deadline=None)
@given(arrays(bool, (12, 12)), st.integers(0, 3), st.integers(0, 3))
def test_erode_composes(bits, a, b):
    m = PixelMask(bits)
    assert np.array_equal(erode_mask(m, a + b).bits, erode_mask(erode_mask(m, a), b).bits)


@settings(max_examples=50, deadline=None)
@given(st.floats(0, 3), st.floats(0, 3))
def test_bilinear_reproduces_affine(x, y):
    yy, xx = np.mgrid[0:4, 0:4].astype(float)
    assert bilinear(2.0 * xx - 3.0 * yy + 1.0, x, y) == pytest.approx(2 * x - 3 * y + 1, abs=1e-12)
