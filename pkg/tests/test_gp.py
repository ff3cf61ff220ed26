import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from terrain_loop import gp
from terrain_loop.errors import DegenerateData, NonConvergence
from terrain_loop.gp import Hyperparams
from terrain_loop.ingest import PointCloud

from conftest import random_cloud
from oracles import dense_gp


@pytest.mark.parametrize("param,l_k,denom", [("literal", 0.01, 0.02), ("squared", 0.1, 0.02),
                                              ("literal", 0.5, 1.0), ("squared", 2.0, 8.0)])
def test_kernel_denominator(param, l_k, denom):
    h = Hyperparams(1.0, l_k, 0.01, param)
    assert h.denominator == pytest.approx(denom, rel=1e-15)
    assert gp.kernel((0, 0), (0.1, 0), h) == pytest.approx(math.exp(-0.01 / denom))


def test_kernel_derivative_modes_match_finite_difference():
    h = Hyperparams(2.0, 0.03, 0.01)
    a, b, eps = np.array([0.1, 0.2]), np.array([0.15, 0.05]), 1e-6
    fd_x = (gp.kernel(a + [eps, 0], b, h) - gp.kernel(a - [eps, 0], b, h)) / (2 * eps)
    fd_y = (gp.kernel(a + [0, eps], b, h) - gp.kernel(a - [0, eps], b, h)) / (2 * eps)
    assert gp.kernel(a, b, h, "ddx_a") == pytest.approx(fd_x, rel=1e-6)
    assert gp.kernel(a, b, h, "ddy_a") == pytest.approx(fd_y, rel=1e-6)


def test_invalid_hyperparams():
    with pytest.raises(ValueError):
        Hyperparams(0.0, 0.01, 0.01)
    with pytest.raises(ValueError):
        Hyperparams(1.0, 0.01, 0.01, "cubic")


@given(st.integers(1, 30), st.integers(0, 10_000), st.sampled_from(["literal", "squared"]))
def test_matches_dense_oracle(n, seed, param):
    rng = np.random.default_rng(seed)
    cloud = random_cloud(n, seed)
    h = Hyperparams(float(rng.uniform(0.01, 1)), float(rng.uniform(0.05, 0.4)), float(rng.uniform(0.01, 0.1)), param)
    model = gp.train(cloud, h)
    q = rng.uniform(-0.2, 1.2, size=(7, 2))
    r = gp.predict(model, q)
    m, v, gx, gy = dense_gp(cloud.xy, cloud.z, q, h.sigma_k, h.denominator, h.sigma_z)
    for got, want in ((r["mean"], m), (r["var"], np.maximum(v, 0)), (r["dzdx"], gx), (r["dzdy"], gy)):
        np.testing.assert_allclose(got, want, atol=1e-9, rtol=0)


def test_single_point_inputs_agree_with_batch():
    cloud = random_cloud(20, 3)
    model = gp.train(cloud, Hyperparams(0.05, 0.02, 0.02))
    q = (0.4, 0.6)
    r = gp.predict(model, [q])
    assert gp.infer_elevation(model, q) == (r["mean"][0], r["var"][0])
    assert gp.infer_gradient(model, q) == (r["dzdx"][0], r["dzdy"][0])


def test_empty_model_returns_prior():
    model = gp.train(PointCloud(np.zeros((0, 3))), Hyperparams(0.3, 0.01, 0.02))
    r = gp.predict(model, [(0, 0), (5, 5)])
    np.testing.assert_array_equal(r["var"], [0.3, 0.3])
    np.testing.assert_array_equal(r["dzdx"], [0, 0])


def test_chunked_prediction_matches_unchunked(monkeypatch):
    cloud = random_cloud(50, 1)
    model = gp.train(cloud, Hyperparams(0.05, 0.02, 0.02))
    q = np.random.default_rng(0).uniform(0, 1, (333, 2))
    whole = gp.predict(model, q)
    monkeypatch.setattr(gp, "_CHUNK_ELEMENTS", 50 * 7)
    parts = gp.predict(model, q)
    for k in whole:
        np.testing.assert_allclose(whole[k], parts[k], rtol=0, atol=1e-14)


def test_duplicate_points_use_noise_then_jitter():
    pts = np.array([[0.5, 0.5, 1.0]] * 5)
    model = gp.train(PointCloud(pts), Hyperparams(1.0, 0.01, 0.0))
    assert model.jitter > 0
    mean, _ = gp.infer_elevation(model, (0.5, 0.5))
    assert mean == pytest.approx(1.0)


def test_gradient_of_elevation_offset_is_zero():
    cloud = random_cloud(40, 5)
    h = Hyperparams(0.05, 0.02, 0.02)
    q = np.random.default_rng(1).uniform(0, 1, (20, 2))
    a = gp.predict(gp.train(cloud, h), q)
    b = gp.predict(gp.train(cloud.translated(dz=123.4), h), q)
    np.testing.assert_allclose(a["dzdx"], b["dzdx"], atol=1e-12)
    np.testing.assert_allclose(a["mean"] + 123.4, b["mean"], atol=1e-9)
    np.testing.assert_array_equal(a["var"], b["var"])


@pytest.mark.parametrize("param", ["literal", "squared"])
def test_lml_gradient_matches_finite_difference(param):
    cloud = random_cloud(40, 2)
    z = cloud.z - cloud.z.mean()
    theta = np.log([0.05, 0.02 if param == "literal" else 0.15, 0.03])
    f = lambda th: gp.log_marginal_likelihood(cloud.xy, z, Hyperparams(*np.exp(th), parameterization=param))
    _, g = gp.log_marginal_likelihood(cloud.xy, z, Hyperparams(*np.exp(theta), parameterization=param), True)
    eps = 1e-6
    fd = [(f(theta + eps * e) - f(theta - eps * e)) / (2 * eps) for e in np.eye(3)]
    np.testing.assert_allclose(g, fd, rtol=1e-5, atol=1e-6)


def test_lml_matches_dense_formula():
    cloud = random_cloud(25, 4)
    z = cloud.z - cloud.z.mean()
    h = Hyperparams(0.07, 0.03, 0.02)
    K = gp.kernel_matrix(cloud.xy, cloud.xy, h) + h.sigma_z**2 * np.eye(25)
    want = -0.5 * z @ np.linalg.solve(K, z) - 0.5 * np.linalg.slogdet(K)[1] - 12.5 * math.log(2 * math.pi)
    assert gp.log_marginal_likelihood(cloud.xy, z, h) == pytest.approx(want, rel=1e-10)


def test_fit_improves_evidence_and_recovers_scale():
    # draw from a known GP: l_k = 0.02 (0.2 m length-scale), sigma_k = 0.04, sigma_z = 0.01
    from terrain_loop.synth import sample_gp
    truth = Hyperparams(0.04, 0.02, 0.01)
    xy = np.random.default_rng(7).uniform(0, 2, (300, 2))
    z = sample_gp(xy, truth, seed=7)
    cloud = PointCloud(np.column_stack([xy, z]))
    init = gp.initial_hyperparams(cloud)
    fit = gp.fit_hyperparameters(cloud, init)
    zc = z - z.mean()
    assert gp.log_marginal_likelihood(xy, zc, fit) >= gp.log_marginal_likelihood(xy, zc, init)
    assert 0.005 < fit.l_k < 0.08
    assert 0.003 < fit.sigma_z < 0.03
    assert isinstance(fit.l_k, float)


def test_fit_subset_is_seeded():
    cloud = random_cloud(200, 9)
    a = gp.fit_hyperparameters(cloud, max_points=60, seed=3)
    b = gp.fit_hyperparameters(cloud, max_points=60, seed=3)
    assert a == b


def test_fit_rejects_degenerate():
    with pytest.raises(DegenerateData):
        gp.fit_hyperparameters(PointCloud(np.ones((5, 3))))
    with pytest.raises(ValueError):
        gp.fit_hyperparameters(random_cloud(2))


def test_fit_strict_nonconvergence_carries_best():
    cloud = random_cloud(60, 1)
    with pytest.raises(NonConvergence) as exc:
        gp.fit_hyperparameters(cloud, max_iter=1, strict=True)
    assert isinstance(exc.value.best, Hyperparams)
