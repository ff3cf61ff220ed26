"""Gaussian Process elevation model with derivative inference.

The squared-exponential kernel is ``sigma_k * exp(-|a - b|^2 / s)`` where the
denominator ``s`` depends on the parameterization knob:

* ``"literal"``  (default): ``s = 2 * l_k``, so ``l_k`` is a squared length (m^2);
* ``"squared"``: ``s = 2 * l_k**2``, the textbook form with ``l_k`` in metres.

Spatial gradients of the posterior mean come from differentiating the
cross-covariance ``K(x, X)`` with respect to the query ``x`` and reusing the
same ``(K + sigma_z^2 I)^-1 z`` weights as the mean.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg as sla
from scipy.optimize import minimize

from .errors import DegenerateData, FactorizationFailure, NonConvergence
from .ingest import PointCloud

log = logging.getLogger(__name__)

PARAMETERIZATIONS = ("literal", "squared")

# Optimizer bounds, expressed for the literal parameterization.
L_K_BOUNDS = (1e-4, 10.0)
SIGMA_Z_BOUNDS = (1e-3, 1.0)
SIGMA_K_BOUNDS = (1e-10, 1e4)

_CHUNK_ELEMENTS = 4_000_000


@dataclass(frozen=True)
class Hyperparams:
    sigma_k: float
    l_k: float
    sigma_z: float
    parameterization: str = "literal"

    def __post_init__(self):
        if not (self.sigma_k > 0 and self.l_k > 0 and self.sigma_z >= 0):
            raise ValueError(f"invalid hyperparameters {self}")
        if self.parameterization not in PARAMETERIZATIONS:
            raise ValueError(f"unknown kernel parameterization {self.parameterization!r}")

    @property
    def denominator(self) -> float:
        """The ``s`` in ``exp(-d^2 / s)``."""
        if self.parameterization == "literal":
            return 2.0 * self.l_k
        return 2.0 * self.l_k**2

    def as_dict(self) -> dict:
        return {"sigma_k": self.sigma_k, "l_k": self.l_k, "sigma_z": self.sigma_z,
                "parameterization": self.parameterization}


def default_length(parameterization: str = "literal") -> float:
    """Initial ``l_k`` matching a 0.1 m length-scale."""
    return 0.01 if parameterization == "literal" else 0.1


def _l_bounds(parameterization):
    if parameterization == "literal":
        return L_K_BOUNDS
    return tuple(math.sqrt(b) for b in L_K_BOUNDS)


# --------------------------------------------------------------------------- kernel

def kernel(a, b, hyper: Hyperparams, mode: str = "value") -> float:
    """Kernel value or its derivative with respect to the first argument."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    d = a - b
    k = hyper.sigma_k * math.exp(-float(d @ d) / hyper.denominator)
    if mode == "value":
        return k
    if mode == "ddx_a":
        return -2.0 * d[0] / hyper.denominator * k
    if mode == "ddy_a":
        return -2.0 * d[1] / hyper.denominator * k
    raise ValueError(f"unknown kernel mode {mode!r}")


def _sqdist(A, B):
    dx = A[:, 0:1] - B[None, :, 0]
    dy = A[:, 1:2] - B[None, :, 1]
    return dx, dy, dx * dx + dy * dy


def kernel_matrix(A, B, hyper: Hyperparams) -> np.ndarray:
    _, _, d2 = _sqdist(np.asarray(A, float), np.asarray(B, float))
    return hyper.sigma_k * np.exp(-d2 / hyper.denominator)


# --------------------------------------------------------------------------- model

@dataclass(frozen=True, eq=False)
class GpModel:
    train_xy: np.ndarray
    train_z: np.ndarray
    z_offset: float
    chol: np.ndarray
    alpha: np.ndarray
    hyper: Hyperparams
    jitter: float = 0.0

    @property
    def n(self) -> int:
        return self.train_xy.shape[0]


def _cholesky_with_jitter(K: np.ndarray) -> tuple[np.ndarray, float]:
    n = K.shape[0]
    try:
        return sla.cholesky(K, lower=True, check_finite=False), 0.0
    except np.linalg.LinAlgError:
        pass
    scale = np.trace(K) / n
    jitter = 1e-10 * scale
    while jitter <= 1e-4 * scale * (1 + 1e-9):
        try:
            L = sla.cholesky(K + jitter * np.eye(n), lower=True, check_finite=False)
            log.debug("cholesky needed jitter %.3g", jitter)
            return L, jitter
        except np.linalg.LinAlgError:
            jitter *= 10.0
    raise FactorizationFailure(f"Cholesky failed with jitter up to {1e-4 * scale:.3g}")


def train(cloud: PointCloud, hyper: Hyperparams) -> GpModel:
    """Factorize ``K(X, X) + sigma_z^2 I`` on the mean-subtracted elevations."""
    xy = np.array(cloud.xy, dtype=float)
    z = np.array(cloud.z, dtype=float)
    if xy.shape[0] == 0:
        empty = np.zeros((0, 0))
        return GpModel(np.zeros((0, 2)), np.zeros(0), 0.0, empty, np.zeros(0), hyper)
    z_offset = float(z.mean())
    zc = z - z_offset
    K = kernel_matrix(xy, xy, hyper)
    K[np.diag_indices_from(K)] += hyper.sigma_z**2
    L, jitter = _cholesky_with_jitter(K)
    alpha = sla.cho_solve((L, True), zc, check_finite=False)
    for arr in (xy, zc, L, alpha):
        arr.setflags(write=False)
    return GpModel(xy, zc, z_offset, L, alpha, hyper, jitter)


def _chunks(n_query, n_train):
    step = max(1, _CHUNK_ELEMENTS // max(n_train, 1))
    for start in range(0, n_query, step):
        yield slice(start, min(start + step, n_query))


def predict(model: GpModel, xy, mean=True, variance=True, gradient=True) -> dict:
    """Vectorized posterior inference at query points ``xy`` of shape (M, 2).

    Returns a dict with any of ``mean``, ``var``, ``dzdx``, ``dzdy``.
    """
    q = np.atleast_2d(np.asarray(xy, dtype=float))
    m = q.shape[0]
    hyper = model.hyper
    out = {}
    if mean:
        out["mean"] = np.full(m, model.z_offset)
    if variance:
        out["var"] = np.full(m, hyper.sigma_k)
    if gradient:
        out["dzdx"] = np.zeros(m)
        out["dzdy"] = np.zeros(m)
    if model.n == 0:
        return out
    X = model.train_xy
    s = hyper.denominator
    for sl in _chunks(m, model.n):
        dx, dy, d2 = _sqdist(q[sl], X)
        Kq = hyper.sigma_k * np.exp(-d2 / s)
        if mean:
            out["mean"][sl] += Kq @ model.alpha
        if gradient:
            # d/dq of exp(-|q - x|^2 / s) is -2 (q - x) / s times the kernel
            out["dzdx"][sl] = (-2.0 / s) * ((dx * Kq) @ model.alpha)
            out["dzdy"][sl] = (-2.0 / s) * ((dy * Kq) @ model.alpha)
        if variance:
            v = sla.solve_triangular(model.chol, Kq.T, lower=True, check_finite=False)
            out["var"][sl] = np.maximum(hyper.sigma_k - np.einsum("ij,ij->j", v, v), 0.0)
    return out


def infer_elevation(model: GpModel, q) -> tuple[float, float]:
    r = predict(model, [q], gradient=False)
    return float(r["mean"][0]), float(r["var"][0])


def infer_gradient(model: GpModel, q) -> tuple[float, float]:
    r = predict(model, [q], mean=False, variance=False)
    return float(r["dzdx"][0]), float(r["dzdy"][0])


# --------------------------------------------------------------------------- hyperparameters

def log_marginal_likelihood(xy, z, hyper: Hyperparams, gradient: bool = False):
    """Log evidence of zero-mean targets ``z``; optionally the gradient in log-parameters.

    The gradient is ordered ``(log sigma_k, log l_k, log sigma_z)``.
    """
    xy = np.asarray(xy, float)
    z = np.asarray(z, float)
    n = z.shape[0]
    _, _, d2 = _sqdist(xy, xy)
    Kf = hyper.sigma_k * np.exp(-d2 / hyper.denominator)
    K = Kf.copy()
    K[np.diag_indices_from(K)] += hyper.sigma_z**2
    L, _ = _cholesky_with_jitter(K)
    alpha = sla.cho_solve((L, True), z, check_finite=False)
    lml = -0.5 * z @ alpha - np.log(np.diag(L)).sum() - 0.5 * n * math.log(2 * math.pi)
    if not gradient:
        return lml
    Kinv, info = sla.lapack.dpotri(L, lower=1)
    if info != 0:
        raise FactorizationFailure("inverse from Cholesky factor failed")
    Kinv = np.tril(Kinv) + np.tril(Kinv, -1).T
    W = np.outer(alpha, alpha) - Kinv
    if hyper.parameterization == "literal":
        dK_dlogl = Kf * d2 / (2.0 * hyper.l_k)
    else:
        dK_dlogl = Kf * d2 / hyper.l_k**2
    g = np.array([
        0.5 * np.einsum("ij,ij->", W, Kf),
        0.5 * np.einsum("ij,ij->", W, dK_dlogl),
        0.5 * np.trace(W) * 2.0 * hyper.sigma_z**2,
    ])
    return lml, g


def initial_hyperparams(cloud: PointCloud, sigma_z: float = 0.02,
                        parameterization: str = "literal", l_k: Optional[float] = None) -> Hyperparams:
    var = float(np.var(cloud.z)) if cloud.count else 0.0
    return Hyperparams(
        sigma_k=max(var, 1e-8),
        l_k=default_length(parameterization) if l_k is None else l_k,
        sigma_z=sigma_z,
        parameterization=parameterization,
    )


def fit_hyperparameters(cloud: PointCloud, init: Optional[Hyperparams] = None, *,
                        n_starts: int = 3, max_iter: int = 100, rtol: float = 1e-6,
                        max_points: Optional[int] = None, seed: int = 0,
                        strict: bool = False) -> Hyperparams:
    """Maximize the log marginal likelihood from ``init`` (or the data-driven default).

    Multi-start L-BFGS-B in log-parameter space.  Starts are ``init`` and
    ``init`` with the length parameter scaled down and up.  The result never
    has lower evidence than ``init``.  If ``max_points`` is set the evidence
    is evaluated on a seeded random subset of that size.
    """
    if cloud.count < 3:
        raise ValueError("need at least 3 points to fit hyperparameters")
    xy, z = cloud.xy, cloud.z
    if np.ptp(z) == 0 and np.all(np.ptp(xy, axis=0) == 0):
        raise DegenerateData("all points identical")
    if max_points is not None and cloud.count > max_points:
        idx = np.sort(np.random.default_rng(seed).choice(cloud.count, max_points, replace=False))
        xy, z = xy[idx], z[idx]
    z = z - z.mean()
    if init is None:
        init = initial_hyperparams(cloud)
    param = init.parameterization
    lb = _l_bounds(param)
    bounds_log = [
        (math.log(SIGMA_K_BOUNDS[0]), math.log(SIGMA_K_BOUNDS[1])),
        (math.log(lb[0]), math.log(lb[1])),
        (math.log(SIGMA_Z_BOUNDS[0]), math.log(SIGMA_Z_BOUNDS[1])),
    ]

    def unpack(theta):
        return Hyperparams(*(float(v) for v in np.exp(theta)), parameterization=param)

    def objective(theta):
        try:
            lml, g = log_marginal_likelihood(xy, z, unpack(theta), gradient=True)
        except Exception:
            return 1e25, np.zeros(3)
        return -lml, -g

    init_lml = log_marginal_likelihood(xy, z, init)
    best, best_lml = init, init_lml
    length_factor = 4.0 if param == "literal" else 2.0
    theta0 = np.log([init.sigma_k, init.l_k, max(init.sigma_z, SIGMA_Z_BOUNDS[0])])
    starts = [theta0]
    for f in (1.0 / length_factor, length_factor)[: max(n_starts - 1, 0)]:
        starts.append(theta0 + np.array([0.0, math.log(f), 0.0]))
    converged = False
    for th in starts:
        th = np.clip(th, [b[0] for b in bounds_log], [b[1] for b in bounds_log])
        res = minimize(objective, th, jac=True, method="L-BFGS-B", bounds=bounds_log,
                       options={"maxiter": max_iter, "ftol": rtol})
        converged |= bool(res.success)
        cand = unpack(res.x)
        cand_lml = -float(res.fun)
        if cand_lml > best_lml:
            best, best_lml = cand, cand_lml
    if not converged:
        msg = "hyperparameter optimization did not converge"
        if strict:
            raise NonConvergence(msg, best=best)
        log.warning("%s; using best-so-far %s", msg, best)
    return best
