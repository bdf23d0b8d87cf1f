"""Command-line entry point: ``clothgeom analyze|plan|simulate|synth|render``.

Exit codes: 0 success, 2 bad input or output path, 3 empty garment mask,
4 internal invariant breach (the failing stage is named on stderr).
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Optional

from .codecs import FormatError, read_height, read_mask, write_mask, write_pfm
from .config import Config, ConfigError, load_config
from .grid import Calibration, InvalidInputError, PixelMask
from .pipeline import EmptyMaskError, StageError, analyze, dumps, plan_top, simulate
from .synth import SceneSpec, SpecError, generate

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

EXIT_OK, EXIT_INPUT, EXIT_EMPTY_MASK, EXIT_INVARIANT = 0, 2, 3, 4


def _config(args) -> Config:
    cfg = load_config(args.config)
    return cfg.updated(pitch=getattr(args, "pitch", None), depth_offset=getattr(args, "depth_offset", None))


def _load(args, cfg: Config):
    h = read_height(args.input, Calibration(cfg.pitch, cfg.depth_offset))
    mask: Optional[PixelMask] = None
    if args.mask:
        mask = read_mask(args.mask)
        if mask.shape != h.shape:
            raise FormatError(f"mask shape {mask.shape} does not match input {h.shape}")
    return h, mask


def _emit(text: str, out: Optional[str]) -> None:
    if out is None:
        sys.stdout.write(text)
        return
    try:
        Path(out).write_text(text)
    except OSError as exc:
        raise FormatError(f"cannot write {out}: {exc.strerror}") from exc


def cmd_analyze(args) -> int:
    cfg = _config(args)
    h, mask = _load(args, cfg)
    report, mid = analyze(h, mask, cfg, keep=True)
    if args.render:
        from .render import render_all
        render_all(report, mid, args.render)
    _emit(report.to_json(timing=not args.no_timing), args.out)
    return EXIT_OK


def cmd_plan(args) -> int:
    cfg = _config(args)
    h, mask = _load(args, cfg)
    report, mid = analyze(h, mask, cfg, keep=True)
    plan = plan_top(report, mid.mask, h, cfg)
    doc = {"schema_version": 1, "plan": None if plan is None else plan.to_dict(), "is_flat": report.is_flat,
           "wrinkles": len(report.wrinkles)}
    _emit(dumps(doc), args.out)
    return EXIT_OK


def load_scene(path: str, seed: Optional[int] = None) -> SceneSpec:
    """Scene spec from TOML (keys at top level or in ``[scene]``) or JSON."""
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc.strerror}") from exc
    try:
        if path.lower().endswith(".json"):
            data = json.loads(raw)
        else:
            data = tomllib.loads(raw.decode("utf-8"))
    except (ValueError, tomllib.TOMLDecodeError) as exc:
        raise FormatError(f"malformed scene spec {path}: {exc}") from exc
    if isinstance(data.get("scene"), dict):
        data = data["scene"]
    if seed is not None:
        data = dict(data, seed=seed)
    try:
        return SceneSpec.from_dict(data)
    except TypeError as exc:
        raise SpecError(str(exc)) from exc


def _is_scene(path: str) -> bool:
    return Path(path).suffix.lower() in (".toml", ".json")


def cmd_simulate(args) -> int:
    cfg = _config(args)
    if _is_scene(args.input):
        spec = load_scene(args.input, args.seed)
        h, mask, _ = generate(spec)
        cfg = cfg.updated(pitch=spec.pitch)
    else:
        h, mask = _load(args, cfg)
    log, _ = simulate(h, mask, cfg, args.max_iters)
    _emit(dumps(log.to_dict()), args.out)
    return EXIT_OK


def cmd_synth(args) -> int:
    spec = load_scene(args.spec, args.seed)
    h, mask, truth = generate(spec)
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise FormatError(f"cannot create {out}: {exc.strerror}") from exc
    write_pfm(out / "height.pfm", h)
    write_mask(out / "mask.pgm", mask)
    _emit(dumps({"spec": spec.to_dict(), "truth": truth.to_dict()}), str(out / "truth.json"))
    return EXIT_OK


def cmd_render(args) -> int:
    cfg = _config(args)
    h, mask = _load(args, cfg)
    report, mid = analyze(h, mask, cfg, keep=True)
    from .render import render_all
    for path in render_all(report, mid, args.out_dir):
        print(path)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="clothgeom", description="Wrinkle analysis of garment height maps.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, with_out=True):
        sp.add_argument("input", help="height/depth map (.pfm metres, .pgm depth mm, .csv metres)")
        sp.add_argument("--mask", help="garment mask PGM (non-zero = garment)")
        sp.add_argument("--config", help="TOML configuration file")
        sp.add_argument("--pitch", type=float, help="metres per pixel (overrides config)")
        sp.add_argument("--depth-offset", type=float, help="height = offset - depth (overrides config)")
        if with_out:
            sp.add_argument("--out", help="write JSON here instead of stdout")

    a = sub.add_parser("analyze", help="detect and quantify wrinkles")
    common(a)
    a.add_argument("--render", metavar="DIR", help="write overlays, figures and CSV to DIR")
    a.add_argument("--no-timing", action="store_true", help="omit timing fields from the report")
    a.set_defaults(func=cmd_analyze)

    pl = sub.add_parser("plan", help="flattening plan for the top wrinkle")
    common(pl)
    pl.set_defaults(func=cmd_plan)

    s = sub.add_parser("simulate", help="analyze/plan/flatten loop on a scene spec or input")
    common(s)
    s.add_argument("--max-iters", type=int, help="iteration cap (default from config)")
    s.add_argument("--seed", type=int, help="override the scene seed")
    s.set_defaults(func=cmd_simulate)

    sy = sub.add_parser("synth", help="write a synthetic scene (height.pfm, mask.pgm, truth.json)")
    sy.add_argument("spec", help="scene spec (.toml or .json)")
    sy.add_argument("--out", required=True, help="output directory")
    sy.add_argument("--seed", type=int, help="override the scene seed")
    sy.set_defaults(func=cmd_synth)

    r = sub.add_parser("render", help="write overlays, figures and CSV only")
    common(r, with_out=False)
    r.add_argument("out_dir", help="output directory")
    r.set_defaults(func=cmd_render)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (FormatError, ConfigError, SpecError, InvalidInputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except EmptyMaskError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_EMPTY_MASK
    except StageError as exc:
        print(f"internal error in stage {exc.stage}: {exc}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
