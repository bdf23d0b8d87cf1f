"""End-to-end analysis, the JSON report and the virtual flattening loop."""
from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .config import Config
from .differential import CurvatureMaps, ScalarField, curvature_maps, laplacian_field
from .grid import Calibration, HeightField, PixelMask
from .planner import FlattenPlan, is_flat, make_flatten_plan, virtual_flatten_step
from .preprocess import smooth_field
from .surface import (ShapeTypeMap, SurfaceType, TopologyMasks, extract_topology, majority_rank_filter,
                      quantize_types, shape_index)
from .wrinkles import Wrinkle, detect_wrinkles

SCHEMA_VERSION = 1


class EmptyMaskError(ValueError):
    pass


class StageError(RuntimeError):
    """An internal invariant failed inside a named pipeline stage."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"{stage}: {message}")
        self.stage = stage


@dataclass
class AnalysisReport:
    shape: tuple[int, int]
    pitch: float
    config: dict
    stages: dict
    wrinkles: list[Wrinkle]
    is_flat: bool
    plan: Optional[FlattenPlan] = None
    timing_ms: dict = field(default_factory=dict)

    @property
    def triplet_counts(self) -> list[int]:
        return [len(w.triplets) for w in self.wrinkles]

    def to_dict(self, timing: bool = True) -> dict:
        d = {
            "schema_version": SCHEMA_VERSION,
            "shape": list(self.shape),
            "pitch": self.pitch,
            "config": dict(self.config),
            "stages": self.stages,
            "wrinkles": [w.to_dict() for w in self.wrinkles],
            "triplet_counts": self.triplet_counts,
            "is_flat": self.is_flat,
            "plan": None if self.plan is None else self.plan.to_dict(),
        }
        if timing:
            d["timing_ms"] = dict(self.timing_ms)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "AnalysisReport":
        if d.get("schema_version") != SCHEMA_VERSION:
            raise ValueError(f"unsupported report schema {d.get('schema_version')!r}")
        return cls(
            shape=tuple(d["shape"]),
            pitch=d["pitch"],
            config=d["config"],
            stages=d["stages"],
            wrinkles=[Wrinkle.from_dict(w) for w in d["wrinkles"]],
            is_flat=d["is_flat"],
            plan=None if d["plan"] is None else FlattenPlan.from_dict(d["plan"]),
            timing_ms=d.get("timing_ms", {}),
        )

    def to_json(self, timing: bool = True) -> str:
        return dumps(self.to_dict(timing))


def _plain(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"{type(o).__name__} is not JSON serialisable")


def dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=_plain, allow_nan=False) + "\n"


@dataclass(eq=False)
class Intermediates:
    """Per-stage arrays kept for rendering."""

    raw: HeightField
    mask: PixelMask
    smooth: HeightField
    curvatures: CurvatureMaps
    types: ShapeTypeMap
    laplacian: ScalarField
    topology: TopologyMasks


class _Timer:
    def __init__(self):
        self.ms: dict[str, float] = {}

    def run(self, stage: str, fn, *args, **kwargs):
        t0 = time.perf_counter()
        try:
            out = fn(*args, **kwargs)
        except (ArithmeticError, AssertionError, ValueError, RuntimeError) as exc:
            raise StageError(stage, str(exc)) from exc
        self.ms[stage] = round((time.perf_counter() - t0) * 1000.0, 3)
        return out


def _checked_finite(stage: str, f: ScalarField | HeightField) -> None:
    if not np.all(np.isfinite(f.values)):
        raise StageError(stage, "non-finite values")


def analyze(h: HeightField, mask: Optional[PixelMask], config: Config = Config(),
            keep: bool = False) -> AnalysisReport | tuple[AnalysisReport, Intermediates]:
    """Run preprocess, curvature, surface typing and wrinkle detection.

    ``mask`` defaults to the valid pixels of ``h``.  With ``keep`` the
    intermediate fields are returned alongside the report.
    """
    if mask is None:
        mask = PixelMask(h.valid)
    if mask.shape != h.shape:
        raise ValueError(f"mask shape {mask.shape} does not match field {h.shape}")
    mask = mask & PixelMask(h.valid)
    if mask.count() == 0:
        raise EmptyMaskError("garment mask selects no valid pixel")
    timer = _Timer()
    stages: dict = {}

    if config.smooth:
        smooth, fit = timer.run("preprocess", smooth_field, h, mask, config.spline_spacing, config.spline_degree)
        stages["preprocess"] = {"fit_rmse_m": fit.rmse, "max_residual_m": fit.max_residual,
                                "n_points": fit.n_points}
    else:
        smooth = h.with_values(h.values, mask.bits)
        stages["preprocess"] = {"fit_rmse_m": 0.0, "max_residual_m": 0.0, "n_points": mask.count()}
    _checked_finite("preprocess", smooth)

    curv = timer.run("differential", curvature_maps, smooth, config.sigma)
    lap = timer.run("laplacian", laplacian_field, smooth, config.laplace_window)
    for f in (curv.mean, curv.gaussian, lap):
        _checked_finite("differential", f)
    stages["differential"] = {"valid_pixels": int(curv.mean.valid.sum())}

    def classify():
        return majority_rank_filter(quantize_types(shape_index(curv, config.flat_eps)), config.rank_window)

    types = timer.run("surface", classify)
    counts = np.bincount(types.labels.ravel().astype(np.int64), minlength=len(SurfaceType))
    stages["surface"] = {t.name.lower(): int(counts[t]) for t in SurfaceType}

    topo = timer.run("topology", extract_topology, types, curv, lap, config.ridge_min_curvature)
    stages["topology"] = {"ridge_points": topo.ridge_points.count(), "contour_pixels": topo.contours.count(),
                          "convex_pixels": topo.convex.count()}

    calib = Calibration(h.pitch, config.depth_offset)
    wrinkles = timer.run("wrinkles", detect_wrinkles, topo, types, curv, smooth, calib,
                         thres_rmse=config.thres_rmse_px, thres_alpha=config.thres_alpha_deg,
                         max_depth=config.max_split_depth, max_steps=config.max_steps)
    for w in wrinkles:
        if w.curve.rmse_px > config.thres_rmse_px and w.warning is None:
            raise StageError("wrinkles", f"wrinkle fit rmse {w.curve.rmse_px:.3f} px above gate without warning")
    stages["wrinkles"] = {"count": len(wrinkles), "warnings": sum(w.warning is not None for w in wrinkles)}

    report = AnalysisReport(shape=tuple(h.shape), pitch=h.pitch, config=config.to_dict(), stages=stages,
                            wrinkles=wrinkles, is_flat=is_flat(wrinkles, config.halting_slack_m),
                            timing_ms=timer.ms)
    if keep:
        return report, Intermediates(h, mask, smooth, curv, types, lap, topo)
    return report


def plan_top(report: AnalysisReport, mask: PixelMask, h: HeightField, config: Config) -> Optional[FlattenPlan]:
    """Flattening plan for the top-ranked wrinkle, or None when there is none."""
    if not report.wrinkles:
        return None
    return make_flatten_plan(report.wrinkles[0], mask, Calibration(h.pitch, config.depth_offset), 0, h)


@dataclass
class SimulationLog:
    iterations: list[dict]
    converged: bool
    rni: Optional[int]

    def to_dict(self) -> dict:
        return {"schema_version": SCHEMA_VERSION, "iterations": self.iterations,
                "converged": self.converged, "rni": self.rni}


def simulate(h: HeightField, mask: Optional[PixelMask], config: Config = Config(),
             max_iters: Optional[int] = None) -> tuple[SimulationLog, HeightField]:
    """Analyze, plan and virtually flatten until flat or ``max_iters`` actions.

    The required number of iterations (RNI) is the count of flattening
    actions taken before the halting test passes.
    """
    limit = config.max_iters if max_iters is None else max_iters
    if mask is None:
        mask = PixelMask(h.valid)
    log = []
    for it in range(limit + 1):
        report = analyze(h, mask, config)
        entry = {"iteration": it, "wrinkles": len(report.wrinkles),
                 "top_score": report.wrinkles[0].score if report.wrinkles else 0.0,
                 "is_flat": report.is_flat, "pull_dist_m": 0.0}
        if report.is_flat:
            log.append(entry)
            return SimulationLog(log, True, it), h
        if it == limit:
            log.append(entry)
            break
        plan = plan_top(report, mask, h, config)
        entry["pull_dist_m"] = plan.pull_dist_m
        entry["dual_arm"] = plan.dual_arm
        log.append(entry)
        before = h
        h = virtual_flatten_step(h, plan, report.wrinkles)
        if h is before:
            break
    return SimulationLog(log, False, None), h
