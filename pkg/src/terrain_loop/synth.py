"""Synthetic terrains and submap fixtures with exact ground truth.

Terrains are a smooth random base surface (random Fourier features of a
squared-exponential spectrum) plus Gaussian "rock" bumps.  Submaps are uniform
samples of square windows, each expressed in a local frame centred on its
window and rotated by the window yaw.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from shapely.geometry import Polygon

from .errors import NoOverlap
from .geometry import Se2Transform, WorldPose
from .ingest import PointCloud, Submap


@dataclass(frozen=True)
class TerrainSpec:
    extent: tuple = (8.0, 8.0)
    base_amplitude: float = 0.15
    base_correlation: float = 1.5
    bump_count: int = 80
    bump_amplitude: tuple = (0.05, 0.3)
    bump_radius: tuple = (0.08, 0.3)
    noise_sigma: float = 0.02
    seed: int = 0
    base_components: int = 32

    def __post_init__(self):
        if min(self.extent) <= 0:
            raise ValueError("extent must be positive")
        if (self.base_amplitude < 0 or self.base_correlation <= 0 or self.bump_count < 0
                or min(self.bump_amplitude) < 0 or min(self.bump_radius) < 0 or self.noise_sigma < 0):
            raise ValueError("amplitudes, radii and noise must be non-negative")
        if self.bump_amplitude[0] > self.bump_amplitude[1] or self.bump_radius[0] > self.bump_radius[1]:
            raise ValueError("ranges must be (low, high)")


@dataclass(frozen=True, eq=False)
class Terrain:
    """Deterministic continuous elevation function ``z = terrain(xy)``."""

    spec: TerrainSpec
    freqs: np.ndarray
    phases: np.ndarray
    base_weight: float
    centers: np.ndarray
    amplitudes: np.ndarray
    radii: np.ndarray

    def __call__(self, xy) -> np.ndarray:
        xy = np.atleast_2d(np.asarray(xy, dtype=float))
        z = np.zeros(xy.shape[0])
        if self.base_weight > 0:
            z += self.base_weight * np.cos(xy @ self.freqs.T + self.phases).sum(axis=1)
        for c, a, r in zip(self.centers, self.amplitudes, self.radii):
            if a == 0 or r == 0:
                continue
            d2 = ((xy - c) ** 2).sum(axis=1)
            z += a * np.exp(-d2 / (2 * r * r))
        return z

    def base(self, xy) -> np.ndarray:
        """Elevation without bumps."""
        xy = np.atleast_2d(np.asarray(xy, dtype=float))
        if self.base_weight == 0:
            return np.zeros(xy.shape[0])
        return self.base_weight * np.cos(xy @ self.freqs.T + self.phases).sum(axis=1)


def generate_terrain(spec: TerrainSpec) -> Terrain:
    rng = np.random.default_rng([spec.seed, 0x7E])
    m = spec.base_components
    freqs = rng.normal(scale=1.0 / spec.base_correlation, size=(m, 2))
    phases = rng.uniform(0, 2 * math.pi, size=m)
    # var(sum of m cosines with random phase) = m / 2
    base_weight = spec.base_amplitude * math.sqrt(2.0 / m)
    ex, ey = spec.extent
    centers = rng.uniform([0, 0], [ex, ey], size=(spec.bump_count, 2))
    amps = rng.uniform(*spec.bump_amplitude, size=spec.bump_count)
    radii = rng.uniform(*spec.bump_radius, size=spec.bump_count)
    return Terrain(spec, freqs, phases, base_weight, centers, amps, radii)


def sample_gp(xy, hyper, seed: int = 0) -> np.ndarray:
    """Draw noisy targets from a zero-mean GP prior with the given hyperparameters."""
    from .gp import kernel_matrix

    xy = np.asarray(xy, dtype=float)
    rng = np.random.default_rng(seed)
    K = kernel_matrix(xy, xy, hyper)
    L = np.linalg.cholesky(K + 1e-10 * hyper.sigma_k * np.eye(len(xy)))
    return L @ rng.standard_normal(len(xy)) + hyper.sigma_z * rng.standard_normal(len(xy))


# --------------------------------------------------------------------------- windows and pairs

@dataclass(frozen=True)
class Window:
    """Square-ish sampling window; its centre and yaw define the submap's local frame."""

    center: tuple
    yaw: float = 0.0
    size: tuple = (4.0, 4.0)

    @property
    def pose(self) -> Se2Transform:
        return Se2Transform(self.yaw, *self.center)

    def polygon(self) -> Polygon:
        w, h = self.size
        corners = np.array([[-w / 2, -h / 2], [w / 2, -h / 2], [w / 2, h / 2], [-w / 2, h / 2]])
        return Polygon(self.pose.apply(corners))


def overlap_fraction(a: Window, b: Window) -> float:
    """Intersection area over the smaller window area."""
    pa, pb = a.polygon(), b.polygon()
    return pa.intersection(pb).area / min(pa.area, pb.area)


def sample_submap(terrain: Terrain, window: Window, n_points: int, noise_sigma: float,
                  seed: int, id: int = 0) -> Submap:
    rng = np.random.default_rng(seed)
    w, h = window.size
    local = rng.uniform([-w / 2, -h / 2], [w / 2, h / 2], size=(n_points, 2))
    world = window.pose.apply(local)
    z = terrain(world) + noise_sigma * rng.standard_normal(n_points)
    pose = WorldPose(window.pose, 0.0)
    return Submap(id, PointCloud(np.column_stack([local, z])), pose)


@dataclass(frozen=True)
class GroundTruthPair:
    submap_q: Submap
    submap_d: Submap
    true_transform: Se2Transform
    overlap_fraction: float
    window_q: Window = None
    window_d: Window = None
    seeds: dict = field(default_factory=dict)

    def record(self) -> dict:
        t = self.true_transform
        return {"theta": t.theta, "tx": t.tx, "ty": t.ty,
                "overlap_fraction": self.overlap_fraction, "seeds": dict(self.seeds)}


def sample_pair(terrain: Terrain, window_q: Window, window_d: Window, n_points: int = 5000,
                noise_sigma: float = 0.02, seed: int = 0, require_overlap: bool = True,
                ids: tuple = (0, 1)) -> GroundTruthPair:
    """Sample a query/database submap pair and the exact transform between their frames.

    ``true_transform`` maps query-local coordinates into database-local coordinates.
    """
    frac = overlap_fraction(window_q, window_d)
    if require_overlap and frac <= 0:
        raise NoOverlap("requested windows are disjoint")
    seq = np.random.SeedSequence(seed)
    sq, sd = (int(s.generate_state(1)[0]) for s in seq.spawn(2))
    q = sample_submap(terrain, window_q, n_points, noise_sigma, sq, ids[0])
    d = sample_submap(terrain, window_d, n_points, noise_sigma, sd, ids[1])
    T = window_d.pose.inverse().compose(window_q.pose)
    return GroundTruthPair(q, d, T, frac, window_q, window_d,
                           {"terrain": terrain.spec.seed, "pair": seed})


def window_for_overlap(window_d: Window, overlap: float, yaw: float, direction: float = 0.0) -> Window:
    """Place a query window with the given yaw so its overlap with ``window_d`` is ``overlap``.

    The query centre is moved away from the database centre along ``direction``
    (radians); the distance is found by bisection.
    """
    if not 0 < overlap <= 1:
        raise ValueError("overlap must be in (0, 1]")
    u = np.array([math.cos(direction), math.sin(direction)])
    c0 = np.asarray(window_d.center, dtype=float)

    def at(dist):
        return Window(tuple(c0 + dist * u), yaw, window_d.size)

    if overlap_fraction(at(0.0), window_d) < overlap:
        raise ValueError(f"overlap {overlap} unreachable at yaw {yaw}")
    lo, hi = 0.0, float(np.hypot(*window_d.size)) * 2
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if overlap_fraction(at(mid), window_d) >= overlap:
            lo = mid
        else:
            hi = mid
    return at(lo)


def random_pair(seed: int, spec: TerrainSpec = None, window: float = 4.0, n_points: int = 5000,
                min_overlap: float = 0.4, max_overlap: float = 0.8) -> GroundTruthPair:
    """Seeded overlapping pair on a fresh terrain: random yaw, direction and overlap."""
    spec = spec or TerrainSpec()
    spec = TerrainSpec(**{**spec.__dict__, "seed": seed})
    terrain = generate_terrain(spec)
    rng = np.random.default_rng([seed, 0xA1])
    ex, ey = spec.extent
    win_d = Window((ex / 2, ey / 2), float(rng.uniform(-math.pi, math.pi)), (window, window))
    yaw_q = float(rng.uniform(-math.pi, math.pi))
    target = float(rng.uniform(min_overlap, max_overlap))
    direction = float(rng.uniform(-math.pi, math.pi))
    win_q = window_for_overlap(win_d, target, yaw_q, direction)
    return sample_pair(terrain, win_q, win_d, n_points, spec.noise_sigma, seed=seed)


def flat_submap(n_points: int = 2000, size: float = 4.0, z: float = 0.0, seed: int = 0,
                id: int = 0) -> Submap:
    rng = np.random.default_rng(seed)
    xy = rng.uniform(-size / 2, size / 2, size=(n_points, 2))
    return Submap(id, PointCloud(np.column_stack([xy, np.full(n_points, z)])),
                  WorldPose(Se2Transform.identity()))


def gaussian_blob_map(shape=(64, 64), center=(32.0, 32.0), width=5.0, amplitude=1.0,
                      variance=1e-4, prior_var=1.0, resolution=0.03, origin=(0.0, 0.0)):
    """A gradient map whose ``grad`` channel is a single Gaussian blob.

    ``center`` is ``(col, row)``; ``variance`` may be a scalar or a raster.
    """
    from .raster import GradientMap

    rows, cols = np.mgrid[0:shape[0], 0:shape[1]].astype(float)
    grad = amplitude * np.exp(-((cols - center[0]) ** 2 + (rows - center[1]) ** 2) / (2 * width**2))
    var = np.broadcast_to(np.asarray(variance, dtype=float), shape).copy()
    return GradientMap(origin=tuple(origin), resolution=resolution, grad=grad, var=var, prior_var=prior_var)
