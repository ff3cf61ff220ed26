"""Georeferenced gradient/variance rasters sampled from a GP model.

Arrays are stored row-major with shape ``(height, width)``; pixel ``(col, row)``
has its centre at ``origin + resolution * (col, row)`` in the submap's local
frame, so ``x`` runs along columns and ``y`` along rows.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import RasterTooLarge
from .gp import GpModel, predict

DEFAULT_RESOLUTION = 0.03
MAX_PIXELS = 4096 * 4096
CHANNELS = ("grad", "var", "elev")


@dataclass(frozen=True, eq=False)
class GradientMap:
    origin: tuple
    resolution: float
    grad: np.ndarray
    var: np.ndarray
    prior_var: float
    elev: Optional[np.ndarray] = None

    @property
    def height(self) -> int:
        return self.grad.shape[0]

    @property
    def width(self) -> int:
        return self.grad.shape[1]

    def channel(self, name: str) -> np.ndarray:
        arr = getattr(self, name) if name in CHANNELS else None
        if arr is None:
            raise KeyError(f"map has no channel {name!r}")
        return arr

    def pixel_centers(self) -> np.ndarray:
        """World coordinates of all pixel centres, shape ``(height * width, 2)``, row-major."""
        rows, cols = np.mgrid[0:self.height, 0:self.width]
        return pixel_to_world(self, np.column_stack([cols.ravel(), rows.ravel()]))


def raster_shape(bbox, resolution: float) -> tuple[int, int]:
    x_min, x_max, y_min, y_max = bbox
    # the epsilon keeps e.g. 3.0 / 0.03 from rounding up to 101
    width = max(1, math.ceil((x_max - x_min) / resolution - 1e-9))
    height = max(1, math.ceil((y_max - y_min) / resolution - 1e-9))
    return height, width


def render(model: GpModel, bbox, resolution: float = DEFAULT_RESOLUTION, *,
           max_pixels: int = MAX_PIXELS, with_elevation: bool = False) -> GradientMap:
    """Evaluate gradient magnitude and posterior variance at every pixel centre of ``bbox``."""
    if resolution <= 0:
        raise ValueError("resolution must be positive")
    x_min, x_max, y_min, y_max = bbox
    if not (x_max > x_min and y_max > y_min):
        raise ValueError("bounding box must have positive area")
    height, width = raster_shape(bbox, resolution)
    if width * height > max_pixels:
        raise RasterTooLarge(f"{width}x{height} raster exceeds cap of {max_pixels} pixels")
    origin = (x_min + 0.5 * resolution, y_min + 0.5 * resolution)
    rows, cols = np.mgrid[0:height, 0:width]
    xy = np.column_stack([origin[0] + resolution * cols.ravel(), origin[1] + resolution * rows.ravel()])
    r = predict(model, xy, mean=with_elevation)
    grad = np.hypot(r["dzdx"], r["dzdy"]).reshape(height, width)
    var = r["var"].reshape(height, width)
    elev = r["mean"].reshape(height, width) if with_elevation else None
    return GradientMap(origin, resolution, grad, var, model.hyper.sigma_k, elev)


def pixel_to_world(gmap: GradientMap, px) -> np.ndarray:
    px = np.asarray(px, dtype=float)
    return np.asarray(gmap.origin) + gmap.resolution * px


def world_to_pixel(gmap: GradientMap, xy) -> np.ndarray:
    xy = np.asarray(xy, dtype=float)
    return (xy - np.asarray(gmap.origin)) / gmap.resolution


def bilinear(arr: np.ndarray, px, outside=np.nan, tol: float = 1e-9):
    """Bilinear lookup of ``arr`` at fractional ``(col, row)`` positions.

    Returns ``(values, inside)``; positions outside the hull of pixel centres
    get ``outside``.
    """
    px = np.atleast_2d(np.asarray(px, dtype=float))
    h, w = arr.shape
    c, r = px[:, 0], px[:, 1]
    inside = (c >= -tol) & (c <= w - 1 + tol) & (r >= -tol) & (r <= h - 1 + tol)
    c = np.clip(c, 0, w - 1)
    r = np.clip(r, 0, h - 1)
    c0 = np.minimum(np.floor(c).astype(int), max(w - 2, 0))
    r0 = np.minimum(np.floor(r).astype(int), max(h - 2, 0))
    fc = c - c0
    fr = r - r0
    c1 = np.minimum(c0 + 1, w - 1)
    r1 = np.minimum(r0 + 1, h - 1)
    val = ((1 - fr) * ((1 - fc) * arr[r0, c0] + fc * arr[r0, c1])
           + fr * ((1 - fc) * arr[r1, c0] + fc * arr[r1, c1]))
    return np.where(inside, val, outside), inside


def sample_bilinear(gmap: GradientMap, channel: str, world_xy) -> Optional[float]:
    """Interpolated channel value at a world coordinate, or ``None`` when out of bounds."""
    vals, inside = bilinear(gmap.channel(channel), world_to_pixel(gmap, [world_xy]))
    return float(vals[0]) if inside[0] else None


# --------------------------------------------------------------------------- export

def _sidecar(gmap: GradientMap, channel: str) -> dict:
    return {
        "origin": [float(gmap.origin[0]), float(gmap.origin[1])],
        "resolution": float(gmap.resolution),
        "width": gmap.width,
        "height": gmap.height,
        "channel": channel,
        "dtype": "float32",
        "byte_order": "little",
        "layout": "row-major, row index = y",
        "prior_var": float(gmap.prior_var),
    }


def write_raster(gmap: GradientMap, channel: str, path) -> Path:
    """Write ``<path>.f32`` plus a ``<path>.json`` sidecar; returns the data path."""
    path = Path(path)
    data = path.with_suffix(".f32")
    data.write_bytes(gmap.channel(channel).astype("<f4").tobytes())
    path.with_suffix(".json").write_text(json.dumps(_sidecar(gmap, channel), indent=2, sort_keys=True) + "\n")
    return data


def read_raster(path) -> tuple[np.ndarray, dict]:
    path = Path(path)
    meta = json.loads(path.with_suffix(".json").read_text())
    arr = np.frombuffer(path.with_suffix(".f32").read_bytes(), dtype="<f4")
    return arr.reshape(meta["height"], meta["width"]).astype(np.float64), meta


def write_pgm(gmap: GradientMap, channel: str, path) -> Path:
    """16-bit PGM preview scaled to the channel's min/max (recorded in a sidecar)."""
    path = Path(path)
    arr = gmap.channel(channel)
    lo, hi = float(arr.min()), float(arr.max())
    scaled = np.zeros_like(arr) if hi == lo else (arr - lo) / (hi - lo)
    img = np.round(scaled * 65535).astype(">u2")
    pgm = path.with_suffix(".pgm")
    pgm.write_bytes(f"P5\n{gmap.width} {gmap.height}\n65535\n".encode() + img.tobytes())
    meta = {**_sidecar(gmap, channel), "dtype": "uint16", "scale_min": lo, "scale_max": hi}
    path.with_name(path.stem + ".pgm.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return pgm


def load_map(prefix) -> GradientMap:
    """Load ``<prefix>_grad`` and ``<prefix>_var`` exported rasters into a map."""
    prefix = Path(prefix)
    grad, meta = read_raster(prefix.with_name(prefix.name + "_grad"))
    var, _ = read_raster(prefix.with_name(prefix.name + "_var"))
    return GradientMap(tuple(meta["origin"]), meta["resolution"], grad, var, meta["prior_var"])


def save_map(gmap: GradientMap, prefix) -> list[Path]:
    prefix = Path(prefix)
    return [write_raster(gmap, ch, prefix.with_name(f"{prefix.name}_{ch}")) for ch in ("grad", "var")]
