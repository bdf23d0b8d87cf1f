"""Smooth implicit surface fitting with uniform tensor-product B-splines.

The raw height field is replaced by the least-squares B-spline surface
evaluated back on the grid.  Masked-out pixels and sensor holes are filled
by the continuous surface; this is the only inpainting in the pipeline.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.interpolate import BSpline
from scipy.sparse.linalg import splu

from .grid import DomainError, HeightField, InvalidInputError, PixelMask

DEFAULT_SPACING = 8
DEFAULT_DEGREE = 3
DEFAULT_SMOOTHNESS = 1e-6
REFINE_ITERATIONS = 8


class FitError(RuntimeError):
    """The least-squares system is underdetermined somewhere in the grid."""


@dataclass(frozen=True, eq=False)
class BSplineSurface:
    degree: int
    control: np.ndarray  # (ny, nx) control heights in metres
    spacing: int
    width: int
    height: int
    pitch: float

    def __post_init__(self):
        ny, nx = self.control.shape
        if ny < self.degree + 1 or nx < self.degree + 1:
            raise InvalidInputError(f"control grid {self.control.shape} too small for degree {self.degree}")

    @property
    def domain(self) -> tuple[int, int, int, int]:
        """Fitted pixel rectangle as ``(x0, y0, width, height)``."""
        return (0, 0, self.width, self.height)


@dataclass(frozen=True)
class FitReport:
    rmse: float
    max_residual: float
    n_points: int


def _n_spans(n_px: int, spacing: int) -> int:
    return max(1, int(np.ceil((n_px - 1) / spacing)))


def _design_1d(coords: np.ndarray, n_px: int, spacing: int, degree: int) -> sparse.csr_matrix:
    n_spans = _n_spans(n_px, spacing)
    # stretch the nominal spacing so the spans tile [0, n_px - 1] exactly
    step = max(n_px - 1, 1) / n_spans
    t = step * np.arange(-degree, n_spans + degree + 1, dtype=float)
    # the last knot is half-open in BSpline; nudge coordinates at the right edge inward
    hi = t[n_spans + degree]
    x = np.minimum(np.asarray(coords, dtype=float), np.nextafter(hi, -np.inf))
    return BSpline.design_matrix(x, t, degree).tocsr()


def _second_difference(n: int) -> sparse.csr_matrix:
    if n < 3:
        return sparse.csr_matrix((0, n))
    return sparse.diags([1.0, -2.0, 1.0], [0, 1, 2], shape=(n - 2, n)).tocsr()


def _check_coverage(used: np.ndarray, spacing: int, degree: int) -> None:
    """Reject cells that carry data but too little of it to pin their patch."""
    h, w = used.shape
    ny, nx = _n_spans(h, spacing), _n_spans(w, spacing)
    rows = np.minimum((np.arange(h) * ny) // max(h - 1, 1), ny - 1)
    cols = np.minimum((np.arange(w) * nx) // max(w - 1, 1), nx - 1)
    ncy, ncx = rows[-1] + 1, cols[-1] + 1
    cell = rows[:, None] * ncx + cols[None, :]
    counts = np.bincount(cell.ravel(), weights=used.ravel(), minlength=ncy * ncx)
    counts = counts.astype(int).reshape(ncy, ncx)
    need = (degree + 1) ** 2
    total = int(used.sum())
    if total < need:
        raise FitError(f"only {total} valid pixels, need at least {need}")
    padded = np.pad(counts, 1)
    neigh = sum(padded[1 + dy:1 + dy + counts.shape[0], 1 + dx:1 + dx + counts.shape[1]]
                for dy in (-1, 0, 1) for dx in (-1, 0, 1))
    bad = np.argwhere((counts > 0) & (neigh < need))
    if len(bad):
        cy, cx = bad[0]
        xs, ys = np.flatnonzero(cols == cx), np.flatnonzero(rows == cy)
        raise FitError(
            f"patch at pixels x=[{xs[0]}, {xs[-1]}] y=[{ys[0]}, {ys[-1]}] "
            f"has {neigh[cy, cx]} valid pixels in its neighbourhood, need {need}")


def fit_bspline(h: HeightField, mask: PixelMask | None = None, spacing: int = DEFAULT_SPACING,
                degree: int = DEFAULT_DEGREE,
                smoothness: float = DEFAULT_SMOOTHNESS) -> tuple[BSplineSurface, FitReport]:
    """Least-squares B-spline fit to the valid, masked heights of ``h``.

    Minimises ``||B c - z||^2 + smoothness * ||D c||^2`` where ``D`` takes
    second differences of the control grid along both axes, then runs
    iterated-Tikhonov refinement: controls pinned by data converge to the
    unbiased least-squares solution while controls inside holes keep the
    smooth fill chosen by the regulariser.
    """
    if spacing < 2:
        raise InvalidInputError(f"spacing must be >= 2, got {spacing}")
    if degree < 1:
        raise InvalidInputError(f"degree must be >= 1, got {degree}")
    used = h.valid.copy()
    if mask is not None:
        if mask.shape != h.shape:
            raise InvalidInputError(f"mask shape {mask.shape} does not match field {h.shape}")
        used &= mask.bits
    _check_coverage(used, spacing, degree)

    H, W = h.shape
    sx, sy = _n_spans(W, spacing), _n_spans(H, spacing)
    nx, ny = sx + degree, sy + degree
    bx = _design_1d(np.arange(W), W, spacing, degree)
    by = _design_1d(np.arange(H), H, spacing, degree)
    rows = np.flatnonzero(used.ravel())
    design = sparse.kron(by, bx, format="csr")[rows]
    z = h.values.ravel()[rows]

    dx = sparse.kron(sparse.identity(ny), _second_difference(nx))
    dy = sparse.kron(_second_difference(ny), sparse.identity(nx))
    normal = (design.T @ design + smoothness * (dx.T @ dx + dy.T @ dy)).tocsc()
    try:
        solve = splu(normal).solve
    except RuntimeError as exc:
        raise FitError(f"normal equations are singular: {exc}") from None
    coef = solve(design.T @ z)
    for _ in range(REFINE_ITERATIONS):
        step = solve(design.T @ (z - design @ coef))
        coef += step
        if np.max(np.abs(step)) <= 1e-16 * max(1.0, np.max(np.abs(coef))):
            break
    if not np.all(np.isfinite(coef)):
        raise FitError("normal equations are singular")

    surface = BSplineSurface(degree, coef.reshape(ny, nx), int(spacing), W, H, h.pitch)
    residual = design @ coef - z
    rmse = float(np.sqrt(np.mean(residual ** 2)))
    report = FitReport(rmse, float(np.max(np.abs(residual))), int(len(rows)))
    return surface, report


def evaluate_surface(s: BSplineSurface, domain: tuple[int, int, int, int] | None = None) -> HeightField:
    """Sample the spline on the pixel rectangle ``(x0, y0, width, height)``."""
    x0, y0, w, h = s.domain if domain is None else domain
    if w < 1 or h < 1 or x0 < 0 or y0 < 0 or x0 + w > s.width or y0 + h > s.height:
        raise DomainError(f"domain {(x0, y0, w, h)} outside fitted region {s.domain}")
    bx = _design_1d(np.arange(x0, x0 + w), s.width, s.spacing, s.degree).toarray()
    by = _design_1d(np.arange(y0, y0 + h), s.height, s.spacing, s.degree).toarray()
    values = by @ s.control @ bx.T
    return HeightField(values, s.pitch)


def smooth_field(h: HeightField, mask: PixelMask | None = None, spacing: int = DEFAULT_SPACING,
                 degree: int = DEFAULT_DEGREE) -> tuple[HeightField, FitReport]:
    """Fit and resample in one step; validity of the result follows ``mask``."""
    surface, report = fit_bspline(h, mask, spacing, degree)
    out = evaluate_surface(surface)
    valid = np.ones(h.shape, dtype=bool) if mask is None else mask.bits
    return out.with_values(out.values, valid), report
