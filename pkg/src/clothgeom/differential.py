"""Gaussian-derivative estimation and per-pixel surface curvatures.

All derivatives are taken with respect to metres (pixel derivatives divided
by ``pitch ** order``), so curvatures come out in 1/m.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .grid import HeightField, _freeze

DEFAULT_SIGMA = 3.0
DEFAULT_LAPLACE_WINDOW = 16
DISCRIMINANT_EPS = 1e-10
THETA_MIN_GRADIENT = 1e-8


class ParameterError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class ScalarField:
    values: np.ndarray
    valid: np.ndarray
    units: str = "dimensionless"

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        valid = np.asarray(self.valid, dtype=bool) & np.isfinite(values)
        if values.shape != valid.shape:
            raise ValueError(f"validity shape {valid.shape} does not match values {values.shape}")
        object.__setattr__(self, "values", _freeze(np.where(valid, values, 0.0)))
        object.__setattr__(self, "valid", _freeze(valid))

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


@dataclass(frozen=True, eq=False)
class CurvatureMaps:
    mean: ScalarField
    gaussian: ScalarField
    k_max: ScalarField
    k_min: ScalarField
    theta: ScalarField
    # direction of the k_min principal axis: across a ridge under our orientation
    cross_dir: ScalarField

    @property
    def shape(self) -> tuple[int, int]:
        return self.mean.shape


def kernel_radius(sigma: float) -> int:
    return int(math.ceil(4.0 * sigma))


def derivative_kernel(sigma: float, order: int, radius: int | None = None) -> np.ndarray:
    """Sampled Gaussian-derivative correlation weights for offsets -r..r.

    Weights are renormalised on the truncated support so that the discrete
    moments match the continuous operator: order 0 sums to one, order 1
    returns exactly 1 on ``f(k) = k`` and order 2 returns exactly 0 on
    constants and 1 on ``k**2 / 2``.
    """
    if sigma <= 0:
        raise ParameterError(f"sigma must be positive, got {sigma}")
    r = kernel_radius(sigma) if radius is None else int(radius)
    k = np.arange(-r, r + 1, dtype=float)
    g = np.exp(-0.5 * (k / sigma) ** 2)
    if order == 0:
        return g / g.sum()
    if order == 1:
        w = k * g
        return w / np.sum(k * w)
    if order == 2:
        g0, g2, g4 = g.sum(), np.sum(k ** 2 * g), np.sum(k ** 4 * g)
        a = 2.0 / (g4 - g2 * g2 / g0)
        b = -a * g2 / g0
        return a * k ** 2 * g + b * g
    raise ParameterError(f"derivative order must be 0, 1 or 2, got {order}")


def _separable(values: np.ndarray, sigma: float, dx: int, dy: int, radius: int) -> np.ndarray:
    # both pass orders averaged: a 90 degree rotation of the input then sees
    # the same arithmetic, keeping the outputs equivariant to roundoff level
    kx, ky = derivative_kernel(sigma, dx, radius), derivative_kernel(sigma, dy, radius)
    xy = ndimage.correlate1d(ndimage.correlate1d(values, kx, axis=1, mode="nearest"), ky, axis=0, mode="nearest")
    yx = ndimage.correlate1d(ndimage.correlate1d(values, ky, axis=0, mode="nearest"), kx, axis=1, mode="nearest")
    return 0.5 * (xy + yx)


def _centred(h) -> tuple[np.ndarray, float]:
    """Valid values minus their median; a constant offset then cancels exactly
    instead of leaking roundoff into metric derivatives (scaled by 1/pitch^2)."""
    ref = float(np.median(h.values[h.valid])) if np.any(h.valid) else 0.0
    return np.where(h.valid, h.values - ref, 0.0), ref


def _support_valid(valid: np.ndarray, radius: int) -> np.ndarray:
    size = 2 * radius + 1
    return ndimage.binary_erosion(valid, structure=np.ones((size, size), dtype=bool), border_value=0)


def gaussian_derivative(h: HeightField | ScalarField, sigma: float = DEFAULT_SIGMA, dx: int = 0, dy: int = 0,
                        pitch: float | None = None, radius: int | None = None) -> ScalarField:
    """Derivative ``d^(dx+dy) h / dx^dx dy^dy`` in metric units.

    Pixels whose kernel support touches an invalid pixel or leaves the grid
    are marked invalid.
    """
    if sigma <= 0:
        raise ParameterError(f"sigma must be positive, got {sigma}")
    if dx < 0 or dy < 0 or dx + dy > 2:
        raise ParameterError(f"unsupported derivative order ({dx}, {dy})")
    if pitch is None:
        pitch = getattr(h, "pitch", 1.0)
    r = kernel_radius(sigma) if radius is None else int(radius)
    values, ref = _centred(h)
    out = _separable(values, sigma, dx, dy, r) / pitch ** (dx + dy)
    if dx + dy == 0:
        out = out + ref
    units = {0: "m", 1: "dimensionless", 2: "1/m"}[dx + dy]
    return ScalarField(out, _support_valid(h.valid, r), units)


def _fold_half_turn(angle: np.ndarray) -> np.ndarray:
    """Map angles to (-pi/2, pi/2]."""
    out = np.mod(angle + np.pi / 2, np.pi) - np.pi / 2
    return np.where(out <= -np.pi / 2, out + np.pi, out)


def principal_curvatures(mean: np.ndarray, gaussian: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``k = H +- sqrt(H^2 - K)`` with the discriminant clamped near zero.

    The larger-magnitude root is formed directly and the other as ``K / root``
    so that both the sum and the product of the pair stay accurate.
    Returns ``(k_max, k_min, ok)``; ``ok`` is False where the discriminant is
    negative beyond ``DISCRIMINANT_EPS``.
    """
    disc = mean * mean - gaussian
    ok = disc > -DISCRIMINANT_EPS
    root = np.sqrt(np.where(disc > 0, disc, 0.0))
    big = mean + np.where(mean >= 0, root, -root)
    with np.errstate(divide="ignore", invalid="ignore"):
        small = np.where(big != 0, gaussian / np.where(big != 0, big, 1.0), 0.0)
    return np.maximum(big, small), np.minimum(big, small), ok


def _principal_direction(fx, fy, fxx, fxy, fyy, k):
    """In-plane direction of the principal axis with curvature ``k``.

    Solves ``(II - k I) v = 0`` with the first and second fundamental forms
    of the Monge patch.
    """
    w = np.sqrt(1.0 + fx * fx + fy * fy)
    m11 = fxx / w - k * (1.0 + fx * fx)
    m12 = fxy / w - k * fx * fy
    m22 = fyy / w - k * (1.0 + fy * fy)
    # null vector of the symmetric 2x2 matrix; pick the better-conditioned row
    v1 = np.stack([-m12, m11])
    v2 = np.stack([m22, -m12])
    use1 = np.hypot(*v1) >= np.hypot(*v2)
    vx = np.where(use1, v1[0], v2[0])
    vy = np.where(use1, v1[1], v2[1])
    norm = np.hypot(vx, vy)
    return _fold_half_turn(np.arctan2(vy, vx)), norm


def curvature_maps(h: HeightField, sigma: float = DEFAULT_SIGMA) -> CurvatureMaps:
    """Mean, Gaussian and principal curvatures plus curvature directions."""
    if sigma <= 0:
        raise ParameterError(f"sigma must be positive, got {sigma}")
    r = kernel_radius(sigma)
    values, _ = _centred(h)
    p = h.pitch
    fx = _separable(values, sigma, 1, 0, r) / p
    fy = _separable(values, sigma, 0, 1, r) / p
    fxx = _separable(values, sigma, 2, 0, r) / p ** 2
    fyy = _separable(values, sigma, 0, 2, r) / p ** 2
    fxy = _separable(values, sigma, 1, 1, r) / p ** 2
    valid = _support_valid(h.valid, r)

    g = 1.0 + fx * fx + fy * fy
    mean = ((1.0 + fy * fy) * fxx + (1.0 + fx * fx) * fyy - 2.0 * fx * fy * fxy) / (2.0 * g ** 1.5)
    gauss = (fxx * fyy - fxy * fxy) / (g * g)
    k_max, k_min, ok = principal_curvatures(mean, gauss)
    valid &= ok

    # theta: direction of the gradient of k_max, in per-pixel units
    kv = np.where(valid, k_max, 0.0)
    gx = _separable(kv, sigma, 1, 0, r)
    gy = _separable(kv, sigma, 0, 1, r)
    theta_valid = _support_valid(valid, r) & (np.hypot(gx, gy) >= THETA_MIN_GRADIENT)
    theta = _fold_half_turn(np.arctan2(gy, gx))

    cross, norm = _principal_direction(fx, fy, fxx, fxy, fyy, k_min)
    umbilic = (k_max - k_min) <= 1e-9 * np.maximum(1.0, np.abs(k_max) + np.abs(k_min))
    cross_valid = valid & ~umbilic & (norm > 0)

    return CurvatureMaps(
        mean=ScalarField(mean, valid, "1/m"),
        gaussian=ScalarField(gauss, valid, "1/m^2"),
        k_max=ScalarField(k_max, valid, "1/m"),
        k_min=ScalarField(k_min, valid, "1/m"),
        theta=ScalarField(theta, theta_valid, "rad"),
        cross_dir=ScalarField(cross, cross_valid, "rad"),
    )


def laplacian_field(h: HeightField, window: int = DEFAULT_LAPLACE_WINDOW) -> ScalarField:
    """Laplacian-of-Gaussian response ``f_xx + f_yy`` on a ``window``-wide template."""
    if window < 3:
        raise ParameterError(f"window must be >= 3, got {window}")
    sigma = window / 6.0
    radius = window // 2
    fxx = gaussian_derivative(h, sigma, 2, 0, radius=radius)
    fyy = gaussian_derivative(h, sigma, 0, 2, radius=radius)
    return ScalarField(fxx.values + fyy.values, fxx.valid & fyy.valid, "1/m")
