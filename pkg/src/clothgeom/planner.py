"""Grasp selection, dual-arm flattening plans and the halting test.

Also hosts :func:`virtual_flatten_step`, a deliberately crude stand-in for
the robot action: it removes the planned wrinkle from the height field so
that perception-action loops can be run on synthetic scenes.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage

from .grid import Calibration, HeightField, PixelMask, WorldPoint
from .triplets import Triplet
from .wrinkles import Wrinkle, principal_axis

HALTING_SLACK_M = 0.005
DIRECTION_EPS = 1e-9
# footprint: full attenuation within CORE_WIDTHS mean widths of the crest,
# then a cosine ramp over RAMP_WIDTHS more
CORE_WIDTHS = 1.5
RAMP_WIDTHS = 0.5


class DegenerateDirectionError(ValueError):
    pass


class PlanningError(RuntimeError):
    pass


@dataclass(frozen=True)
class GraspCandidate:
    triplet: Triplet
    grasp_point: WorldPoint
    approach_dir: float
    utility: float
    wrinkle_index: int

    def to_dict(self) -> dict:
        return {"triplet": self.triplet.to_dict(), "grasp_point": list(self.grasp_point),
                "approach_dir": self.approach_dir, "utility": self.utility,
                "wrinkle_index": self.wrinkle_index}


@dataclass(frozen=True)
class FlattenPlan:
    wrinkle_id: int
    grasp_a: WorldPoint
    grasp_b: WorldPoint
    pull_dir_a: tuple[float, float]
    pull_dir_b: tuple[float, float]
    pull_dist_m: float
    dual_arm: bool

    def __post_init__(self):
        if self.pull_dist_m < 0:
            raise ValueError("pull distance must be >= 0")
        if self.pull_dir_a != (-self.pull_dir_b[0], -self.pull_dir_b[1]):
            raise ValueError("pull directions must be opposite")

    def to_dict(self) -> dict:
        return {"wrinkle_id": self.wrinkle_id, "grasp_a": list(self.grasp_a), "grasp_b": list(self.grasp_b),
                "pull_dir_a": list(self.pull_dir_a), "pull_dir_b": list(self.pull_dir_b),
                "pull_dist_m": self.pull_dist_m, "dual_arm": self.dual_arm}

    @classmethod
    def from_dict(cls, d: dict) -> "FlattenPlan":
        return cls(d["wrinkle_id"], WorldPoint(*d["grasp_a"]), WorldPoint(*d["grasp_b"]),
                   tuple(d["pull_dir_a"]), tuple(d["pull_dir_b"]), d["pull_dist_m"], d["dual_arm"])


def select_grasp(wrinkles: Sequence[Wrinkle], aperture_m: float) -> Optional[GraspCandidate]:
    """Tallest triplet that fits the gripper; ties go to the higher-scoring wrinkle."""
    if not aperture_m > 0:
        raise ValueError(f"aperture must be positive, got {aperture_m}")
    best, best_key = None, None
    for i, w in enumerate(wrinkles):
        for t in w.triplets:
            if t.width_m > aperture_m:
                continue
            key = (t.height_m, w.score)
            if best_key is None or key > best_key:
                best, best_key = GraspCandidate(t, t.ridge_w, t.direction, t.height_m, i), key
    return best


def principal_direction(w: Wrinkle | np.ndarray) -> np.ndarray:
    """Dominant eigenvector of the pixel-coordinate covariance, sign normalised."""
    points = np.asarray(w.points if isinstance(w, Wrinkle) else w, dtype=float)
    if len(np.unique(points, axis=0)) < 2:
        raise DegenerateDirectionError("need at least two distinct points")
    vec, gap = principal_axis(points)
    scale = float(np.max(np.abs(points - points.mean(axis=0)))) ** 2
    if gap <= DIRECTION_EPS * max(scale, 1.0):
        raise DegenerateDirectionError(f"isotropic point set (eigenvalue gap {gap:.3g})")
    return vec


def wrinkle_slack(w: Wrinkle) -> float:
    """Mean triplet slack, the length a full pull has to remove."""
    if not w.triplets:
        return 0.0
    return float(np.mean([t.slack_m for t in w.triplets]))


def _boundary_along(mask: np.ndarray, start: np.ndarray, step: np.ndarray) -> Optional[tuple[int, int]]:
    """Last mask pixel met walking from ``start`` along ``step``."""
    H, W = mask.shape
    col, row = int(round(start[0])), int(round(start[1]))
    if not (0 <= row < H and 0 <= col < W and mask[row, col]):
        return None
    last = (col, row)
    for k in range(1, H + W + 1):
        p = start + k * step
        col, row = int(round(p[0])), int(round(p[1]))
        if not (0 <= row < H and 0 <= col < W) or not mask[row, col]:
            break
        last = (col, row)
    return last


def make_flatten_plan(w: Wrinkle, garment_mask: PixelMask, calib: Calibration, wrinkle_id: int = 0,
                      h: Optional[HeightField] = None) -> FlattenPlan:
    """Grasp the garment edge beyond both ends of the wrinkle and pull apart.

    The wrinkle's extreme points along its principal direction are pushed
    outwards along that direction to the last garment pixel.  Each arm pulls
    by half the wrinkle slack.  When an end has no garment pixel to grip,
    that arm's grasp falls back to the wrinkle end itself and the plan is
    flagged single-arm.
    """
    mask = garment_mask.bits
    pts = np.asarray(w.points, dtype=float)
    inside = [mask[int(y), int(x)] for x, y in w.points
              if 0 <= y < mask.shape[0] and 0 <= x < mask.shape[1]]
    if not any(inside):
        raise PlanningError("wrinkle lies outside the garment mask")
    d = principal_direction(w)
    proj = (pts - pts.mean(axis=0)) @ d
    lo, hi = pts[int(np.argmin(proj))], pts[int(np.argmax(proj))]
    found_a = _boundary_along(mask, lo, -d)
    found_b = _boundary_along(mask, hi, d)

    def world(px) -> WorldPoint:
        x, y = px
        z = float(h.values[int(y), int(x)]) if h is not None else 0.0
        return WorldPoint(float(x) * calib.pitch, float(y) * calib.pitch, z)

    pull = wrinkle_slack(w) / 2.0
    dx, dy = float(d[0]), float(d[1])
    return FlattenPlan(
        wrinkle_id=wrinkle_id,
        grasp_a=world(found_a if found_a is not None else lo),
        grasp_b=world(found_b if found_b is not None else hi),
        pull_dir_a=(-dx, -dy),
        pull_dir_b=(dx, dy),
        pull_dist_m=pull,
        dual_arm=found_a is not None and found_b is not None,
    )


def is_flat(wrinkles: Sequence[Wrinkle], threshold: float = HALTING_SLACK_M) -> bool:
    """True when no wrinkle would need a total pull of ``threshold`` or more."""
    # both arms pull slack / 2, so the total pull is the slack itself
    return all(wrinkle_slack(w) < threshold for w in wrinkles)


def flatten_weights(w: Wrinkle, shape: tuple[int, int], pitch: float) -> np.ndarray:
    """Attenuation weight in [0, 1] around the wrinkle crest."""
    if not w.triplets:
        return np.zeros(shape)
    width_px = max(float(np.mean([t.width_m for t in w.triplets])) / pitch, 1.0)
    seeds = np.ones(shape, dtype=bool)
    for x, y in w.points:
        if 0 <= y < shape[0] and 0 <= x < shape[1]:
            seeds[int(y), int(x)] = False
    dist = ndimage.distance_transform_edt(seeds)
    core, ramp = CORE_WIDTHS * width_px, RAMP_WIDTHS * width_px
    t = np.clip((dist - core) / ramp, 0.0, 1.0)
    return 0.5 * (1.0 + np.cos(np.pi * t))


def virtual_flatten_step(h: HeightField, plan: Optional[FlattenPlan], wrinkles: Sequence[Wrinkle]) -> HeightField:
    """Pull the planned wrinkle down toward the surrounding surface.

    Heights near the crest move toward a lower envelope of the field (a grey
    opening wider than the wrinkle) by ``min(1, 2 pull / slack)`` times the
    footprint weight.  A null plan or zero pull leaves the field unchanged.
    """
    if plan is None or plan.pull_dist_m == 0.0:
        return h
    if not 0 <= plan.wrinkle_id < len(wrinkles):
        raise PlanningError(f"plan refers to wrinkle {plan.wrinkle_id} of {len(wrinkles)}")
    w = wrinkles[plan.wrinkle_id]
    slack = wrinkle_slack(w)
    if slack <= 0.0:
        return h
    factor = min(1.0, 2.0 * plan.pull_dist_m / slack)
    weight = flatten_weights(w, h.shape, h.pitch)
    width_px = float(np.mean([t.width_m for t in w.triplets])) / h.pitch
    size = 2 * int(math.ceil((CORE_WIDTHS + RAMP_WIDTHS) * width_px)) + 1
    # invalid pixels must not pull the envelope down
    filled = np.where(h.valid, h.values, np.max(h.values[h.valid]) if h.valid.any() else 0.0)
    base = ndimage.grey_opening(filled, size=(size, size), mode="nearest")
    values = h.values - factor * weight * np.maximum(h.values - base, 0.0)
    return h.with_values(values)
