"""Overlay images and delimited summaries of an analysis.

PPM overlays use the fixed palette below so that they are byte-stable:

=============  ===============
shape type     RGB
=============  ===============
cup            (  0,   0, 128)
trough         (  0,  64, 192)
rut            (  0, 160, 255)
saddle_rut     (  0, 192, 160)
saddle         (128, 128, 128)
saddle_ridge   (192, 192,   0)
ridge          (255, 160,   0)
dome           (255,  96,   0)
cap            (192,   0,   0)
flat           (224, 224, 224)
invalid        (  0,   0,   0)
=============  ===============

Ridge points are red, contours green, triplet triangles cyan and wrinkle
crests yellow with their rank written in white next to the centroid.
"""
from __future__ import annotations

import csv
import io
from pathlib import Path

import numpy as np

from .codecs import FormatError
from .pipeline import AnalysisReport, Intermediates
from .surface import SurfaceType

PALETTE = np.array([
    (0, 0, 128), (0, 64, 192), (0, 160, 255), (0, 192, 160), (128, 128, 128), (192, 192, 0),
    (255, 160, 0), (255, 96, 0), (192, 0, 0), (224, 224, 224), (0, 0, 0),
], dtype=np.uint8)
RIDGE_RGB = (255, 0, 0)
CONTOUR_RGB = (0, 200, 0)
TRIPLET_RGB = (0, 255, 255)
CREST_RGB = (255, 255, 0)
LABEL_RGB = (255, 255, 255)

# 3x5 digit glyphs, rows top to bottom
_GLYPHS = {
    "0": ("111", "101", "101", "101", "111"), "1": ("010", "110", "010", "010", "111"),
    "2": ("111", "001", "111", "100", "111"), "3": ("111", "001", "111", "001", "111"),
    "4": ("101", "101", "111", "001", "001"), "5": ("111", "100", "111", "001", "111"),
    "6": ("111", "100", "111", "101", "111"), "7": ("111", "001", "010", "010", "010"),
    "8": ("111", "101", "111", "101", "111"), "9": ("111", "101", "111", "001", "111"),
}

CSV_FIELDS = ("rank", "score", "width_m", "height_m", "volume_m3", "slack_m", "n_points", "n_triplets",
              "dir_x", "dir_y", "rmse_px", "warning")


def encode_ppm(rgb: np.ndarray) -> bytes:
    rgb = np.asarray(rgb, dtype=np.uint8)
    h, w, _ = rgb.shape
    return f"P6\n{w} {h}\n255\n".encode("ascii") + rgb.tobytes()


def colorize_types(labels: np.ndarray) -> np.ndarray:
    return PALETTE[np.asarray(labels, dtype=np.intp)]


def grey_background(values: np.ndarray, valid: np.ndarray) -> np.ndarray:
    v = np.where(valid, values, np.nan)
    lo, hi = (np.nanmin(v), np.nanmax(v)) if valid.any() else (0.0, 0.0)
    span = hi - lo if hi > lo else 1.0
    g = np.where(valid, np.rint(64 + 128 * (v - lo) / span), 0).astype(np.uint8)
    return np.repeat(g[..., None], 3, axis=2)


def draw_line(img: np.ndarray, p, q, rgb) -> None:
    (x0, y0), (x1, y1) = p, q
    n = int(max(abs(x1 - x0), abs(y1 - y0))) + 1
    xs = np.rint(np.linspace(x0, x1, n + 1)).astype(int)
    ys = np.rint(np.linspace(y0, y1, n + 1)).astype(int)
    ok = (xs >= 0) & (xs < img.shape[1]) & (ys >= 0) & (ys < img.shape[0])
    img[ys[ok], xs[ok]] = rgb


def draw_text(img: np.ndarray, text: str, x: int, y: int, rgb) -> None:
    for k, ch in enumerate(text):
        glyph = _GLYPHS.get(ch)
        if glyph is None:
            continue
        for r, row in enumerate(glyph):
            for c, bit in enumerate(row):
                yy, xx = y + r, x + 4 * k + c
                if bit == "1" and 0 <= yy < img.shape[0] and 0 <= xx < img.shape[1]:
                    img[yy, xx] = rgb


def overlay_images(report: AnalysisReport, mid: Intermediates) -> dict[str, np.ndarray]:
    """RGB overlays keyed by stage name."""
    base = grey_background(mid.smooth.values, mid.smooth.valid)
    topo = base.copy()
    topo[mid.topology.contours.bits] = CONTOUR_RGB
    topo[mid.topology.ridge_points.bits] = RIDGE_RGB
    trip = base.copy()
    crest = base.copy()
    for rank, w in enumerate(report.wrinkles, start=1):
        for t in w.triplets:
            r, a, b = t.ridge_px, t.contour_px_1, t.contour_px_2
            draw_line(trip, r, a, TRIPLET_RGB)
            draw_line(trip, r, b, TRIPLET_RGB)
            draw_line(trip, a, b, TRIPLET_RGB)
        crest[w.points[:, 1], w.points[:, 0]] = CREST_RGB
        row, col = w.centroid
        draw_text(crest, str(rank), int(round(col)) + 3, int(round(row)) - 7, LABEL_RGB)
    return {"types": colorize_types(mid.types.labels), "topology": topo, "triplets": trip, "wrinkles": crest}


def wrinkle_rows(report: AnalysisReport) -> list[dict]:
    rows = []
    for rank, w in enumerate(report.wrinkles, start=1):
        slack = float(np.mean([t.slack_m for t in w.triplets])) if w.triplets else 0.0
        rows.append({"rank": rank, "score": w.score, "width_m": w.width_m, "height_m": w.height_m,
                     "volume_m3": w.volume_m3, "slack_m": slack, "n_points": len(w.points),
                     "n_triplets": len(w.triplets), "dir_x": w.principal_dir[0], "dir_y": w.principal_dir[1],
                     "rmse_px": w.curve.rmse_px, "warning": w.warning or ""})
    return rows


def wrinkles_csv(report: AnalysisReport) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_FIELDS, lineterminator="\n")
    writer.writeheader()
    for row in wrinkle_rows(report):
        writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    return buf.getvalue()


def _figures(report: AnalysisReport, mid: Intermediates, out: Path) -> list[Path]:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    from matplotlib.colors import ListedColormap
    from matplotlib.patches import Patch

    paths = []
    pitch_mm = report.pitch * 1000.0
    H, W = report.shape
    extent = (-0.5 * pitch_mm, (W - 0.5) * pitch_mm, (H - 0.5) * pitch_mm, -0.5 * pitch_mm)

    fig, ax = plt.subplots(figsize=(6.4, 5.4))
    hv = np.where(mid.smooth.valid, mid.smooth.values * 1000.0, np.nan)
    im = ax.imshow(hv, cmap="viridis", extent=extent)
    fig.colorbar(im, ax=ax, label="height (mm)")
    for rank, w in enumerate(report.wrinkles, start=1):
        ax.plot(w.points[:, 0] * pitch_mm, w.points[:, 1] * pitch_mm, ".", ms=1.5, color="red")
        for t in w.triplets[::5]:
            xs = [t.contour_px_1[0], t.ridge_px[0], t.contour_px_2[0]]
            ys = [t.contour_px_1[1], t.ridge_px[1], t.contour_px_2[1]]
            ax.plot(np.array(xs) * pitch_mm, np.array(ys) * pitch_mm, "-", lw=0.5, color="white")
        row, col = w.centroid
        ax.annotate(str(rank), (col * pitch_mm, row * pitch_mm), color="white", fontsize=9,
                    xytext=(4, -4), textcoords="offset points")
    ax.set_xlabel("x (mm)")
    ax.set_ylabel("y (mm)")
    ax.set_title(f"{len(report.wrinkles)} wrinkle(s), flat: {report.is_flat}")
    fig.tight_layout()
    paths.append(out / "overview.png")
    fig.savefig(paths[-1], dpi=120)
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(6.4, 5.4))
    cmap = ListedColormap(PALETTE / 255.0)
    ax.imshow(mid.types.labels, cmap=cmap, vmin=-0.5, vmax=len(PALETTE) - 0.5, interpolation="nearest",
              extent=extent)
    handles = [Patch(color=PALETTE[t] / 255.0, label=t.name.lower()) for t in SurfaceType]
    ax.legend(handles=handles, loc="center left", bbox_to_anchor=(1.01, 0.5), fontsize=7, frameon=False)
    ax.set_xlabel("x (mm)")
    ax.set_ylabel("y (mm)")
    ax.set_title("surface types")
    fig.tight_layout()
    paths.append(out / "types.png")
    fig.savefig(paths[-1], dpi=120)
    plt.close(fig)
    return paths


def render_all(report: AnalysisReport, mid: Intermediates, out_dir, figures: bool = True) -> list[Path]:
    """Write PPM overlays, the wrinkle CSV and (optionally) matplotlib PNGs."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        written = []
        for name, rgb in overlay_images(report, mid).items():
            path = out / f"{name}.ppm"
            path.write_bytes(encode_ppm(rgb))
            written.append(path)
        path = out / "wrinkles.csv"
        path.write_text(wrinkles_csv(report))
        written.append(path)
        if figures:
            written.extend(_figures(report, mid, out))
    except OSError as exc:
        raise FormatError(f"cannot write to {out}: {exc.strerror}") from exc
    return written
