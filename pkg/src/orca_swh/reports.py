"""Output writers: heatmaps, per-buoy series and metric tables."""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from .training import Metrics

LEGEND_WIDTH = 56
METRIC_COLUMNS = ("model", "mae", "mse", "rmse")


def ramp(x: np.ndarray) -> np.ndarray:
    """Blue (0) to red (1) colours for values in [0, 1]; returns ... x 3 uint8."""
    x = np.clip(np.asarray(x, dtype=np.float64), 0.0, 1.0)
    rgb = np.stack([x, np.zeros_like(x), 1.0 - x], axis=-1)
    return np.round(rgb * 255).astype(np.uint8)


def render_heatmap(field: np.ndarray, scale: int = 16, vmin: float | None = None,
                   vmax: float | None = None) -> Image.Image:
    """K x J slice to an RGB image: ``scale`` pixels per cell, north row on top, legend on the right."""
    field = np.asarray(field, dtype=np.float64)
    if field.ndim != 2:
        raise ValueError(f"heatmap needs a K x J slice, got shape {field.shape}")
    if scale < 1:
        raise ValueError("scale must be a positive integer")
    lo = float(np.nanmin(field)) if vmin is None else vmin
    hi = float(np.nanmax(field)) if vmax is None else vmax
    span = hi - lo if hi > lo else 1.0
    cells = ramp((field - lo) / span)
    cells = np.repeat(np.repeat(cells, scale, axis=0), scale, axis=1)
    K, J = field.shape
    height = max(K * scale, 64)
    img = Image.new("RGB", (J * scale + LEGEND_WIDTH, height), "white")
    img.paste(Image.fromarray(cells, "RGB"), (0, 0))
    bar_top, bar_bottom = 12, height - 12
    bar = ramp(np.linspace(1.0, 0.0, bar_bottom - bar_top))[:, None, :].repeat(10, axis=1)
    x0 = J * scale + 6
    img.paste(Image.fromarray(bar, "RGB"), (x0, bar_top))
    draw = ImageDraw.Draw(img)
    draw.text((x0 + 13, bar_top - 4), f"{hi:.2f}", fill="black")
    draw.text((x0 + 13, bar_bottom - 8), f"{lo:.2f}", fill="black")
    return img


def write_heatmap(path: str | Path, field: np.ndarray, scale: int = 16) -> tuple[float, float]:
    render_heatmap(field, scale).save(path, format="PNG")
    return float(np.nanmin(field)), float(np.nanmax(field))


def write_buoy_csv(path: str | Path, times, observed, estimated, mask=None) -> None:
    """Columns t, observed, estimated; missing observations are left empty."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "observed", "estimated"])
        for i, t in enumerate(times):
            obs = "" if mask is not None and mask[i] else f"{float(observed[i]):.6g}"
            w.writerow([t, obs, f"{float(estimated[i]):.6g}"])


def write_metrics_csv(path: str | Path, rows: dict[str, Metrics]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(METRIC_COLUMNS)
        for name, m in rows.items():
            w.writerow([name, repr(m.mae), repr(m.mse), repr(m.rmse)])


def read_metrics_csv(path: str | Path) -> dict[str, Metrics]:
    with open(path, newline="") as fh:
        return {r["model"]: Metrics(float(r["mae"]), float(r["mse"]), float(r["rmse"]))
                for r in csv.DictReader(fh)}
