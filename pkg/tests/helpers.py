"""Map builders shared by the feature and registration tests."""
import numpy as np

from terrain_loop.geometry import Se2Transform
from terrain_loop.raster import GradientMap


def smooth_field(seed=0, n=12, scale=0.6):
    """A smooth analytic scalar field on the plane (sum of random cosines plus blobs)."""
    rng = np.random.default_rng(seed)
    freqs = rng.normal(scale=1 / scale, size=(n, 2))
    phases = rng.uniform(0, 2 * np.pi, n)
    centers = rng.uniform(-2, 2, size=(25, 2))
    widths = rng.uniform(0.12, 0.3, 25)

    def f(xy):
        xy = np.atleast_2d(xy)
        z = np.cos(xy @ freqs.T + phases).sum(axis=1) / np.sqrt(n)
        for c, w in zip(centers, widths):
            z = z + 1.5 * np.exp(-((xy - c) ** 2).sum(axis=1) / (2 * w * w))
        return np.abs(z)
    return f


def map_from_field(f, frame: Se2Transform, size=3.0, resolution=0.03, var=1e-3, prior_var=1.0):
    """Rasterize ``f`` on a square local grid whose local coordinates map to the world through ``frame``."""
    n = int(round(size / resolution))
    origin = (-size / 2 + resolution / 2, -size / 2 + resolution / 2)
    rows, cols = np.mgrid[0:n, 0:n]
    local = np.column_stack([origin[0] + resolution * cols.ravel(), origin[1] + resolution * rows.ravel()])
    grad = f(frame.apply(local)).reshape(n, n)
    return GradientMap(origin, resolution, grad, np.full((n, n), var), prior_var)
