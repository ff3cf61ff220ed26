import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from terrain_loop import gp, raster
from terrain_loop.errors import RasterTooLarge
from terrain_loop.gp import Hyperparams
from terrain_loop.raster import GradientMap, bilinear, pixel_to_world, render, world_to_pixel

from conftest import random_cloud
from oracles import naive_bilinear


@pytest.fixture(scope="module")
def model():
    return gp.train(random_cloud(80, 11), Hyperparams(0.05, 0.01, 0.02))


def test_raster_shape_exact_multiples():
    assert raster.raster_shape((0, 3.0, 0, 1.5), 0.03) == (50, 100)
    assert raster.raster_shape((0, 3.01, 0, 0.001), 0.03) == (1, 101)


def test_render_matches_pointwise_inference(model):
    gmap = render(model, (0, 0.3, 0, 0.21), 0.03, with_elevation=True)
    assert (gmap.height, gmap.width) == (7, 10)
    assert gmap.origin == pytest.approx((0.015, 0.015))
    assert gmap.prior_var == model.hyper.sigma_k
    for row, col in [(0, 0), (3, 7), (6, 9)]:
        x, y = pixel_to_world(gmap, (col, row))
        gx, gy = gp.infer_gradient(model, (x, y))
        mean, var = gp.infer_elevation(model, (x, y))
        assert gmap.grad[row, col] == pytest.approx(math.hypot(gx, gy), abs=1e-12)
        assert gmap.var[row, col] == pytest.approx(var, abs=1e-12)
        assert gmap.elev[row, col] == pytest.approx(mean, abs=1e-12)


def test_render_rejects_bad_inputs(model):
    with pytest.raises(RasterTooLarge):
        render(model, (0, 10, 0, 10), 0.03, max_pixels=1000)
    with pytest.raises(ValueError):
        render(model, (0, 1, 0, 1), 0.0)
    with pytest.raises(ValueError):
        render(model, (0, 0, 0, 1), 0.03)


@given(st.floats(-100, 100), st.floats(-100, 100), st.floats(0.001, 2), st.floats(-50, 50), st.floats(-50, 50))
def test_pixel_world_round_trip(ox, oy, res, x, y):
    g = GradientMap((ox, oy), res, np.zeros((2, 2)), np.zeros((2, 2)), 1.0)
    back = pixel_to_world(g, world_to_pixel(g, [x, y]))
    np.testing.assert_allclose(back, [x, y], atol=1e-9)


@given(st.floats(-1, 8), st.floats(-1, 6), st.integers(0, 1000))
def test_bilinear_matches_oracle(c, r, seed):
    arr = np.random.default_rng(seed).normal(size=(6, 8))
    vals, inside = bilinear(arr, [(c, r)])
    want = naive_bilinear(arr, c, r)
    if want is None:
        assert not inside[0] and np.isnan(vals[0])
    else:
        assert inside[0]
        assert vals[0] == pytest.approx(want, abs=1e-12)


def test_bilinear_hits_pixel_values_exactly():
    arr = np.arange(12.0).reshape(3, 4)
    rows, cols = np.mgrid[0:3, 0:4]
    vals, inside = bilinear(arr, np.column_stack([cols.ravel(), rows.ravel()]))
    assert inside.all()
    np.testing.assert_array_equal(vals, arr.ravel())


def test_sample_bilinear_out_of_bounds():
    g = GradientMap((0, 0), 1.0, np.ones((3, 3)), np.ones((3, 3)), 1.0)
    assert raster.sample_bilinear(g, "grad", (1.5, 1.5)) == 1.0
    assert raster.sample_bilinear(g, "grad", (5, 5)) is None


def test_raster_export_round_trip(tmp_path, model):
    gmap = render(model, (0, 0.3, 0, 0.3), 0.03)
    paths = raster.save_map(gmap, tmp_path / "m")
    assert [p.name for p in paths] == ["m_grad.f32", "m_var.f32"]
    assert paths[0].stat().st_size == 4 * gmap.width * gmap.height
    back = raster.load_map(tmp_path / "m")
    np.testing.assert_array_equal(back.grad, gmap.grad.astype(np.float32))
    assert back.origin == pytest.approx(gmap.origin)
    assert back.prior_var == gmap.prior_var


def test_pgm_preview(tmp_path):
    g = GradientMap((0, 0), 0.1, np.array([[0.0, 1.0, 2.0]]), np.ones((1, 3)), 1.0)
    pgm = raster.write_pgm(g, "grad", tmp_path / "p")
    data = pgm.read_bytes()
    assert data.startswith(b"P5\n3 1\n65535\n")
    assert np.frombuffer(data[-6:], ">u2").tolist() == [0, 32768, 65535]
    assert (tmp_path / "p.pgm.json").exists()
