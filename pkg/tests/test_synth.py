import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from clothgeom.synth import (BENCHMARK_ORIENTATIONS, NotAvailable, SceneSpec, SpecError, analytic_curvature,
                             gaussian_profile_area, gaussian_profile_slack, generate)

# fine-quadrature values computed with mpmath at 40 digits
SLACK_A20_S10 = 0.0062084274555828734
HEIGHT_A20 = 0.0078693868057473315


def test_plane_is_zero_with_no_crest():
    h, _, truth = generate(SceneSpec(kind="plane"))
    assert np.all(h.values == 0.0)
    assert truth.crest_lines == [] and truth.wrinkle_count == 0


def test_gaussian_ridge_crest_and_contours():
    spec = SceneSpec(kind="gaussian_ridge")
    h, _, truth = generate(spec)
    crest = truth.crest_lines[0]
    assert np.allclose(crest[:, 1], 0.1)
    ys = sorted(float(c[0, 1]) for c in truth.contour_lines)
    assert ys == pytest.approx([0.09, 0.11], abs=1e-15)
    # inflection of the sampled profile sits on the contour rows
    col = h.values[:, 100]
    d2 = col[2:] - 2 * col[1:-1] + col[:-2]
    rows = np.flatnonzero(np.diff(np.sign(d2))) + 1
    assert any(abs(r - 90) <= 1 for r in rows) and any(abs(r - 110) <= 1 for r in rows)


def test_crossing_truth():
    _, _, truth = generate(SceneSpec(kind="crossing_ridges", orientation=30.0))
    assert truth.wrinkle_count == 2
    assert truth.directions_deg == [30.0, 120.0]
    assert len(truth.crest_lines) == 2


def test_feature_too_large():
    with pytest.raises(SpecError):
        generate(SceneSpec(kind="gaussian_ridge", sigma=0.03, width=101, height=101))


@pytest.mark.parametrize("kw", [dict(amplitude=0.0), dict(orientation=95.0), dict(kind="cone"),
                                dict(noise_sigma=-1.0), dict(pitch=-0.001)])
def test_invalid_specs(kw):
    with pytest.raises(SpecError):
        SceneSpec(**kw)


def test_determinism_bit_identical():
    spec = SceneSpec(kind="multi_wrinkle", noise_sigma=0.0003, seed=7)
    a, _, _ = generate(spec)
    b, _, _ = generate(spec)
    assert a.values.tobytes() == b.values.tobytes()


@pytest.mark.parametrize("orientation", [0.0, 17.0, -45.0, 60.0])
def test_crest_samples_recover_amplitude(orientation):
    spec = SceneSpec(kind="gaussian_ridge", orientation=orientation)
    _, _, truth = generate(spec)
    from clothgeom.synth import height_at
    (x0, y0), (x1, y1) = truth.crest_lines[0] / spec.pitch
    t = np.linspace(0.0, 1.0, 50)
    z = height_at(spec, x0 + t * (x1 - x0), y0 + t * (y1 - y0))
    assert np.max(np.abs(z - spec.amplitude)) < 1e-12


@settings(max_examples=20, deadline=None)
@given(st.floats(-90.0, 90.0))
def test_rotation_consistency(phi):
    spec = SceneSpec(kind="gaussian_ridge", orientation=phi)
    _, _, truth = generate(spec)
    (x0, y0), (x1, y1) = truth.crest_lines[0] / spec.pitch
    cx, cy = spec.centre
    # rotating the 0 degree crest (the horizontal centre line) by phi
    a = math.radians(phi)
    for x, y in ((x0, y0), (x1, y1)):
        across = -(x - cx) * math.sin(a) + (y - cy) * math.cos(a)
        assert abs(across) <= 0.5


def test_benchmark_orientations():
    assert BENCHMARK_ORIENTATIONS[0] == -45.0 and BENCHMARK_ORIENTATIONS[-1] == 45.0
    assert len(BENCHMARK_ORIENTATIONS) == 8
    assert np.allclose(np.diff(BENCHMARK_ORIENTATIONS), 90.0 / 7)


def test_benchmark_mask_and_field():
    h, mask, _ = generate(SceneSpec(kind="benchmark_oriented", orientation=30.0))
    assert not mask.bits[0, 0] and mask.bits[100, 100]
    assert np.all(h.values[~mask.bits] == 0.0)


def test_profile_oracles_match_independent_quadrature():
    assert gaussian_profile_slack(0.02, 0.01) == pytest.approx(SLACK_A20_S10, rel=1e-10)
    area = gaussian_profile_area(0.02, 0.01)
    assert area == pytest.approx(0.02 * 0.01 * (math.sqrt(2 * math.pi) * math.erf(1 / math.sqrt(2))
                                              - 2 * math.exp(-0.5)), rel=1e-10)


def test_analytic_curvature_examples():
    hemi = SceneSpec(kind="hemisphere", radius=0.5, width=201, height=201)
    cx = 100 * hemi.pitch
    mean, gauss, kmax, kmin = analytic_curvature(hemi, cx, cx)
    assert (mean, gauss, kmax, kmin) == pytest.approx((-2.0, 4.0, -2.0, -2.0), rel=1e-12)
    cyl = SceneSpec(kind="half_cylinder", radius=0.05)
    _, _, kmax, kmin = analytic_curvature(cyl, 0.1, 0.1)
    assert kmax == pytest.approx(0.0, abs=1e-12) and kmin == pytest.approx(-20.0, rel=1e-12)
    assert analytic_curvature(SceneSpec(kind="plane"), 0.05, 0.05) == (0.0, 0.0, 0.0, 0.0)


def test_analytic_curvature_at_crossing_overlap_not_available():
    spec = SceneSpec(kind="crossing_ridges")
    with pytest.raises(NotAvailable):
        analytic_curvature(spec, 0.1, 0.1)


def test_ridge_crest_curvature_and_height_truth():
    spec = SceneSpec(kind="gaussian_ridge")
    _, _, truth = generate(spec)
    _, _, kmax, kmin = analytic_curvature(spec, 0.1, 0.1)
    assert kmin == pytest.approx(-spec.amplitude / spec.sigma ** 2, rel=1e-12)
    assert truth.height_above_chord == pytest.approx(HEIGHT_A20, rel=1e-12)
