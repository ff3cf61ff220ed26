"""RANSAC SE(2) registration of two gradient maps with a variance-weighted SSD check.

Transforms map *query* coordinates into *database* coordinates.  All
association coordinates are metric, in each map's local frame.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import DegenerateSample
from .features import Association
from .geometry import Se2Transform
from .raster import GradientMap, bilinear

SSD_MODES = ("count", "weights", "sum")
MIN_OVERLAP_PIXELS = 100


@dataclass(frozen=True)
class RansacParams:
    max_iterations: int = 2000
    inlier_dist: float = 0.15
    min_inliers_accept: int = 4
    ssd_max: float = 0.02
    ssd_mode: str = "weights"
    seed: int = 0

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not self.inlier_dist > 0:
            raise ValueError("inlier_dist must be positive")
        if self.ssd_mode not in SSD_MODES:
            raise ValueError(f"ssd_mode must be one of {SSD_MODES}")


@dataclass(frozen=True)
class MatchResult:
    transform: Se2Transform
    n: int
    h: Optional[float]
    accepted: bool

    def record(self, query_id, db_id) -> dict:
        t = self.transform
        return {"query_id": query_id, "db_id": db_id, "n": self.n, "h": self.h,
                "theta_rad": t.theta, "tx_m": t.tx, "ty_m": t.ty, "accepted": self.accepted}


def _pairs_arrays(pairs):
    if isinstance(pairs, np.ndarray):
        return pairs[:, 0, :], pairs[:, 1, :]
    q = np.array([p[0] for p in pairs], dtype=float).reshape(-1, 2)
    d = np.array([p[1] for p in pairs], dtype=float).reshape(-1, 2)
    return q, d


def estimate_se2(pairs, tol: float = 1e-12) -> Se2Transform:
    """Least-squares rigid transform taking query points onto database points.

    ``pairs`` is a sequence of ``(world_q, world_d)``.  Kabsch in 2D: centroid
    alignment, SVD of the cross-covariance, reflection correction.
    """
    q, d = _pairs_arrays(pairs)
    if len(q) < 2:
        raise DegenerateSample("need at least two pairs")
    cq, cd = q.mean(axis=0), d.mean(axis=0)
    qc, dc = q - cq, d - cd
    spread = max(float(np.abs(qc).max()), float(np.abs(dc).max()))
    scale = max(float(np.abs(q).max()), 1.0)
    if spread <= tol * scale:
        raise DegenerateSample("query points coincide")
    H = qc.T @ dc
    if np.abs(H).max() <= tol * tol * scale * scale:
        raise DegenerateSample("zero cross-covariance")
    U, _, Vt = np.linalg.svd(H)
    D = np.diag([1.0, np.sign(np.linalg.det(Vt.T @ U.T)) or 1.0])
    R = Vt.T @ D @ U.T
    t = cd - R @ cq
    return Se2Transform.from_matrix(R, t)


def _residuals(q, d, T: Se2Transform):
    return np.linalg.norm(T.apply(q) - d, axis=1)


def get_inliers(assoc: Sequence[Association], T: Se2Transform, inlier_dist: float) -> list[Association]:
    if not assoc:
        return []
    q = np.array([a.world_q for a in assoc])
    d = np.array([a.world_d for a in assoc])
    keep = _residuals(q, d, T) <= inlier_dist
    return [a for a, k in zip(assoc, keep) if k]


def _ssd_terms(T: Se2Transform, query: GradientMap, database: GradientMap):
    # database pixel -> query pixel as one affine map, so that the identity on a
    # shared grid reproduces integer pixel indices exactly
    Rt = T.rotation.T
    A = Rt * (database.resolution / query.resolution)
    b = (Rt @ (np.asarray(database.origin) - T.translation) - np.asarray(query.origin)) / query.resolution
    rows, cols = np.mgrid[0:database.height, 0:database.width]
    pd = np.column_stack([cols.ravel(), rows.ravel()]).astype(float)
    pq = pd @ A.T + b
    gq, inside = bilinear(query.grad, pq)
    vq, _ = bilinear(query.var, pq)
    gd = database.grad.ravel()[inside]
    vd = database.var.ravel()[inside]
    return gq[inside] - gd, vq[inside] * vd


def ssd_metric(T: Se2Transform, query: GradientMap, database: GradientMap,
               mode: str = "weights") -> Optional[float]:
    """Variance-weighted sum of squared gradient differences, or ``None`` for no overlap.

    Every database pixel centre ``x`` is compared with the query map at the
    query-frame location ``T^-1 x``.  ``mode`` selects the normalization of
    the sum of ``diff^2 / (var_q * var_d)``: ``"sum"`` leaves it raw,
    ``"count"`` divides by the number of overlapping pixels and ``"weights"``
    divides by the sum of the weights ``1 / (var_q * var_d)``.
    """
    diff, vprod = _ssd_terms(T, query, database)
    if diff.size < MIN_OVERLAP_PIXELS:
        return None
    w = 1.0 / vprod
    total = float(np.sum(diff * diff * w))
    if mode == "sum":
        return total
    if mode == "count":
        return total / diff.size
    if mode == "weights":
        return total / float(np.sum(w))
    raise ValueError(f"unknown ssd mode {mode!r}")


def _iteration_pair(seed: int, i: int, n: int) -> tuple[int, int]:
    rng = np.random.default_rng([seed, i])
    a, b = rng.choice(n, size=2, replace=False)
    return int(a), int(b)


def ransac_match(assoc: Sequence[Association], query: GradientMap, database: GradientMap,
                 params: RansacParams = RansacParams()) -> MatchResult:
    """Sample association pairs, fit, collect inliers, refit, validate with the SSD metric.

    The best accepted hypothesis is the one with most inliers, then lowest
    ``h``, then earliest iteration.  Without any accepted hypothesis the
    result has ``n = 0``, identity transform and ``accepted = False``.
    """
    none = MatchResult(Se2Transform.identity(), 0, None, False)
    m = len(assoc)
    if m < 2:
        return none
    q = np.array([a.world_q for a in assoc], dtype=float)
    d = np.array([a.world_d for a in assoc], dtype=float)
    cache = {}
    best = None  # (n, h, iteration, transform)
    for it in range(params.max_iterations):
        a, b = _iteration_pair(params.seed, it, m)
        try:
            T0 = estimate_se2(np.stack([q[[a, b]], d[[a, b]]], axis=1))
        except DegenerateSample:
            continue
        inl = np.flatnonzero(_residuals(q, d, T0) <= params.inlier_dist)
        n_i = len(inl)
        if n_i < max(2, params.min_inliers_accept):
            continue
        if best is not None and n_i < best[0]:
            continue
        key = inl.tobytes()
        if key not in cache:
            try:
                T = estimate_se2(np.stack([q[inl], d[inl]], axis=1))
            except DegenerateSample:
                cache[key] = None
            else:
                cache[key] = (T, ssd_metric(T, query, database, params.ssd_mode))
        hit = cache[key]
        if hit is None:
            continue
        T, h = hit
        if h is None or not h <= params.ssd_max:
            continue
        cand = (n_i, h, it, T)
        if best is None or (n_i, -h) > (best[0], -best[1]):
            best = cand
    if best is None:
        return none
    return MatchResult(best[3], best[0], best[1], True)


def classify(result: MatchResult, min_inliers: int) -> bool:
    return bool(result.accepted and result.n >= min_inliers)
