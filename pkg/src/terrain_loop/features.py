"""Blob keypoints, gradient-statistics descriptors and brute-force matching.

The detector is a multi-scale determinant-of-Hessian on Gaussian-smoothed
``grad`` rasters; the descriptor is a 4x4 grid of (sum dx, sum dy, sum |dx|,
sum |dy|) over an orientation-normalized patch, 64 values, unit length.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage
from scipy.spatial.distance import cdist

from .raster import GradientMap, bilinear, pixel_to_world

DESCRIPTOR_SIZE = 64


@dataclass(frozen=True)
class DetectorParams:
    scales: tuple = tuple(1.6 * 1.4**k for k in range(5))
    tau_v_rel: float = 0.5
    tau_v: Optional[float] = None  # absolute override of tau_v_rel * prior_var
    max_keypoints: int = 500
    rel_threshold: float = 0.01
    min_response: float = 1e-6

    def variance_threshold(self, gmap: GradientMap) -> float:
        return self.tau_v if self.tau_v is not None else self.tau_v_rel * gmap.prior_var


@dataclass(frozen=True)
class Keypoint:
    px: tuple  # fractional (col, row)
    scale: float
    response: float


@dataclass(frozen=True)
class Association:
    world_q: tuple
    world_d: tuple
    distance: float
    index_q: int = -1
    index_d: int = -1


# --------------------------------------------------------------------------- detection

def hessian_responses(img: np.ndarray, scales: Sequence[float]) -> np.ndarray:
    """Scale-normalized determinant of Hessian, stacked as ``(n_scales, h, w)``."""
    out = np.empty((len(scales),) + img.shape)
    for i, s in enumerate(scales):
        lxx = ndimage.gaussian_filter(img, s, order=(0, 2), mode="nearest")
        lyy = ndimage.gaussian_filter(img, s, order=(2, 0), mode="nearest")
        lxy = ndimage.gaussian_filter(img, s, order=(1, 1), mode="nearest")
        out[i] = s**4 * (lxx * lyy - lxy * lxy)
    return out


def _refine(resp: np.ndarray, r: int, c: int) -> tuple[float, float]:
    def offset(m, z, p):
        den = m - 2 * z + p
        return 0.0 if den >= 0 else float(np.clip(0.5 * (m - p) / den, -0.5, 0.5))

    h, w = resp.shape
    dc = offset(resp[r, c - 1], resp[r, c], resp[r, c + 1]) if 0 < c < w - 1 else 0.0
    dr = offset(resp[r - 1, c], resp[r, c], resp[r + 1, c]) if 0 < r < h - 1 else 0.0
    return c + dc, r + dr


def detect(gmap: GradientMap, params: DetectorParams = DetectorParams()) -> list[Keypoint]:
    """Variance-masked multi-scale DoH keypoints, strongest first."""
    img = np.asarray(gmap.grad, dtype=float)
    stack = hessian_responses(img, params.scales)
    peak = float(stack.max()) if stack.size else 0.0
    if peak <= 0:
        return []
    threshold = max(params.min_response, params.rel_threshold * peak)
    local_max = ndimage.maximum_filter(stack, size=3, mode="nearest")
    cand = (stack >= local_max) & (stack > threshold)
    h, w = img.shape
    for i, s in enumerate(params.scales):
        m = int(math.ceil(s))
        if 2 * m >= h or 2 * m >= w:
            cand[i] = False
            continue
        cand[i, :m, :] = cand[i, -m:, :] = False
        cand[i, :, :m] = cand[i, :, -m:] = False
    idx = np.argwhere(cand)
    if len(idx) == 0:
        return []
    vals = stack[idx[:, 0], idx[:, 1], idx[:, 2]]
    # strongest first, ties broken by (scale, row, col) for determinism
    order = np.lexsort((idx[:, 2], idx[:, 1], idx[:, 0], -vals))
    tau_v = params.variance_threshold(gmap)
    kps = []
    taken = set()
    for j in order:
        si, r, c = (int(v) for v in idx[j])
        if (r, c) in taken:
            continue
        col, row = _refine(stack[si], r, c)
        var_here, _ = bilinear(gmap.var, [(col, row)])
        if not var_here[0] <= tau_v:
            continue
        taken.add((r, c))
        kps.append(Keypoint((col, row), float(params.scales[si]), float(vals[j])))
        if len(kps) >= params.max_keypoints:
            break
    return kps


# --------------------------------------------------------------------------- description

@dataclass
class _DerivativeCache:
    img: np.ndarray
    levels: dict = field(default_factory=dict)

    def get(self, scale: float):
        key = round(scale, 9)
        if key not in self.levels:
            sd = 0.5 * scale
            gx = ndimage.gaussian_filter(self.img, sd, order=(0, 1), mode="nearest")
            gy = ndimage.gaussian_filter(self.img, sd, order=(1, 0), mode="nearest")
            self.levels[key] = (gx, gy)
        return self.levels[key]


def _sample(arr, px):
    vals, _ = bilinear(arr, px, outside=0.0)
    return vals


_ORI_STEPS = 72
_ORI_WINDOW = math.pi / 3


def _orientation(gx, gy, kp: Keypoint) -> float:
    s = kp.scale
    k = np.arange(-6, 7)
    u, v = np.meshgrid(k, k)
    disk = u**2 + v**2 <= 36
    u, v = u[disk].astype(float), v[disk].astype(float)
    px = np.column_stack([kp.px[0] + s * u, kp.px[1] + s * v])
    weight = np.exp(-(u**2 + v**2) / (2 * 2.5**2))
    dx = _sample(gx, px) * weight
    dy = _sample(gy, px) * weight
    ang = np.arctan2(dy, dx)
    best, best_norm = 0.0, 0.0
    for i in range(_ORI_STEPS):
        start = -math.pi + i * 2 * math.pi / _ORI_STEPS
        rel = np.mod(ang - start, 2 * math.pi)
        sel = rel < _ORI_WINDOW
        sx, sy = dx[sel].sum(), dy[sel].sum()
        norm = sx * sx + sy * sy
        if norm > best_norm * (1 + 1e-12):
            best, best_norm = math.atan2(sy, sx), norm
    return best


def _descriptor(gx, gy, kp: Keypoint, theta: float) -> np.ndarray:
    side = 20.0 * kp.scale / 3.3
    n = 20
    step = side / n
    t = (np.arange(n) - (n - 1) / 2) * step
    u, v = np.meshgrid(t, t)  # patch frame, v rows
    c, s = math.cos(theta), math.sin(theta)
    px = np.column_stack([kp.px[0] + c * u.ravel() - s * v.ravel(),
                          kp.px[1] + s * u.ravel() + c * v.ravel()])
    dx = _sample(gx, px)
    dy = _sample(gy, px)
    du = (c * dx + s * dy).reshape(n, n)
    dv = (-s * dx + c * dy).reshape(n, n)
    sigma = 0.165 * side
    w = np.exp(-(u**2 + v**2) / (2 * sigma**2))
    du, dv = du * w, dv * w
    cells = []
    for i in range(4):
        for j in range(4):
            a = du[5 * i:5 * i + 5, 5 * j:5 * j + 5]
            b = dv[5 * i:5 * i + 5, 5 * j:5 * j + 5]
            cells.append((a.sum(), b.sum(), np.abs(a).sum(), np.abs(b).sum()))
    vec = np.asarray(cells, dtype=float).ravel()
    norm = np.linalg.norm(vec)
    if not norm > 0:
        return np.zeros(DESCRIPTOR_SIZE)
    return vec / norm


def describe_all(gmap: GradientMap, keypoints: Sequence[Keypoint]) -> np.ndarray:
    """Descriptors for many keypoints, shape ``(len(keypoints), 64)``."""
    cache = _DerivativeCache(np.asarray(gmap.grad, dtype=float))
    out = np.zeros((len(keypoints), DESCRIPTOR_SIZE))
    for i, kp in enumerate(keypoints):
        gx, gy = cache.get(kp.scale)
        out[i] = _descriptor(gx, gy, kp, _orientation(gx, gy, kp))
    return out


def describe(gmap: GradientMap, kp: Keypoint) -> np.ndarray:
    return describe_all(gmap, [kp])[0]


# --------------------------------------------------------------------------- matching

def match(kps_q: Sequence[Keypoint], desc_q: np.ndarray, kps_d: Sequence[Keypoint], desc_d: np.ndarray,
          map_q: GradientMap, map_d: GradientMap, ratio: Optional[float] = 0.85) -> list[Association]:
    """Brute-force L2 nearest neighbours from query to database descriptors.

    Degenerate (all-zero) descriptors are ignored.  A database descriptor is
    used at most once; when several query descriptors pick it, the closest wins.
    ``ratio=None`` disables the nearest/second-nearest test.
    """
    desc_q = np.asarray(desc_q, dtype=float).reshape(-1, DESCRIPTOR_SIZE)
    desc_d = np.asarray(desc_d, dtype=float).reshape(-1, DESCRIPTOR_SIZE)
    vq = np.flatnonzero(np.any(desc_q != 0, axis=1))
    vd = np.flatnonzero(np.any(desc_d != 0, axis=1))
    if len(vq) == 0 or len(vd) == 0:
        return []
    D = cdist(desc_q[vq], desc_d[vd])
    nearest = np.argmin(D, axis=1)
    best = D[np.arange(len(vq)), nearest]
    if len(vd) > 1 and ratio is not None:
        second = np.partition(D, 1, axis=1)[:, 1]
        keep = best <= ratio * second
    else:
        keep = np.ones(len(vq), dtype=bool)
    chosen = {}
    for i in np.flatnonzero(keep):
        j = int(nearest[i])
        if j not in chosen or best[i] < best[chosen[j]]:
            chosen[j] = i
    out = []
    for j, i in sorted(chosen.items(), key=lambda kv: kv[1]):
        qi, di = int(vq[i]), int(vd[j])
        wq = pixel_to_world(map_q, kps_q[qi].px)
        wd = pixel_to_world(map_d, kps_d[di].px)
        out.append(Association((float(wq[0]), float(wq[1])), (float(wd[0]), float(wd[1])),
                               float(best[i]), qi, di))
    return out


# --------------------------------------------------------------------------- export

def write_keypoints(keypoints: Sequence[Keypoint], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["col", "row", "scale", "response"])
        for kp in keypoints:
            w.writerow([repr(kp.px[0]), repr(kp.px[1]), repr(kp.scale), repr(kp.response)])


def read_keypoints(path) -> list[Keypoint]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [Keypoint((float(r["col"]), float(r["row"])), float(r["scale"]), float(r["response"])) for r in rows]
