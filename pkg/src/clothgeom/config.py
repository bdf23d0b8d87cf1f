"""Single configuration schema for every tunable of the pipeline.

Files are TOML.  Keys may sit at the top level or inside any table (tables
only group keys for readability), e.g.::

    [differential]
    sigma = 3.0

    [wrinkles]
    thres_rmse_px = 2.0
"""
from __future__ import annotations

import sys
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Config:
    # calibration
    pitch: float = 0.001  # metres per pixel
    depth_offset: float = 1.0  # height = depth_offset - depth
    # preprocessing
    smooth: bool = True
    spline_spacing: int = 8  # knot spacing, px
    spline_degree: int = 3
    # differential geometry
    sigma: float = 3.0  # Gaussian derivative scale, px
    laplace_window: int = 16  # LoG template width, px
    # surface classification
    rank_window: int = 5
    flat_eps: float = 1e-9
    ridge_min_curvature: float = 10.0  # 1/m, rejects noise and spline ringing
    # wrinkles
    thres_rmse_px: float = 2.0
    thres_alpha_deg: float = 20.0
    max_split_depth: int = 4
    max_steps: int = 60  # triplet walk length, px
    # planning
    halting_slack_m: float = 0.005  # garment is flat below this total slack
    aperture_m: float = 0.08  # gripper opening
    max_iters: int = 10

    def __post_init__(self):
        positive = ("pitch", "spline_spacing", "sigma", "flat_eps", "thres_rmse_px", "thres_alpha_deg",
                    "max_steps", "halting_slack_m", "aperture_m")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.spline_degree < 1:
            raise ConfigError("spline_degree must be >= 1")
        if self.laplace_window < 3:
            raise ConfigError("laplace_window must be >= 3")
        if self.rank_window < 3 or self.rank_window % 2 == 0:
            raise ConfigError("rank_window must be odd and >= 3")
        if self.ridge_min_curvature < 0 or self.max_split_depth < 0 or self.max_iters < 0:
            raise ConfigError("ridge_min_curvature, max_split_depth and max_iters must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)

    def updated(self, **overrides) -> "Config":
        return replace(self, **{k: v for k, v in overrides.items() if v is not None})


def _flatten(table: dict, out: dict) -> dict:
    for key, value in table.items():
        if isinstance(value, dict):
            _flatten(value, out)
        elif key in out:
            raise ConfigError(f"key {key!r} given twice")
        else:
            out[key] = value
    return out


def config_from_dict(d: dict) -> Config:
    flat = _flatten(d, {})
    types = {f.name: f.type for f in fields(Config)}
    unknown = sorted(set(flat) - set(types))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    defaults = Config()
    clean = {}
    for key, value in flat.items():
        want = type(getattr(defaults, key))
        if want is float and isinstance(value, int) and not isinstance(value, bool):
            value = float(value)
        if not isinstance(value, want) or (want is int and isinstance(value, bool)):
            raise ConfigError(f"{key} must be {want.__name__}, got {value!r}")
        clean[key] = value
    return Config(**clean)


def load_config(path: str | Path | None) -> Config:
    if path is None:
        return Config()
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from exc
    return config_from_dict(data)
