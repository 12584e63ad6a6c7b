import numpy as np
import pytest

from w1bench import benchmark as bm
from w1bench import minfunnel as mf
from w1bench import plotting
from w1bench.errors import DimensionError


def test_surface_of_true_potential_matches_grid(tmp_path):
    pair = bm.generate_pair(2, 4, seed=1)
    values = plotting.plot_surface(pair, pair.funnel, tmp_path / "s.svg", resolution=30)
    gx, gy, direct = plotting.surface_grid(pair, pair.funnel, 30)
    np.testing.assert_array_equal(values, direct)
    assert direct[0, 0] == pytest.approx(pair.funnel([gx[0, 0], gy[0, 0]]))


def test_rays_start_at_centers_or_box(tmp_path):
    pair = bm.generate_pair(2, 16, seed=2)
    lo, hi = plotting.plot_rays(pair, tmp_path / "r.svg", n_rays=200)
    B = pair.box_halfwidth
    to_center = np.min(np.linalg.norm(lo[:, None] - pair.funnel.centers[None], axis=2), axis=1)
    on_box = np.isclose(np.max(np.abs(lo), axis=1), B)
    assert np.all((to_center < 1e-9) | on_box)
    assert np.all(np.abs(hi) <= B + 1e-12)
    u = pair.funnel
    np.testing.assert_allclose(u(hi) - u(lo), np.linalg.norm(hi - lo, axis=1), atol=1e-9)


def test_surface_and_rays_need_2d(tmp_path):
    pair = bm.generate_pair(3, 4, seed=0)
    with pytest.raises(DimensionError):
        plotting.plot_rays(pair, tmp_path / "r.svg")
    with pytest.raises(DimensionError):
        plotting.plot_surface(pair, pair.funnel, tmp_path / "s.svg")


def test_pca_projection_keeps_two_components(tmp_path):
    pair = bm.generate_pair(5, 4, seed=0)
    px, py = plotting.plot_pca(pair, tmp_path / "c.svg", n=300)
    assert px.shape == (300, 2) and py.shape == (300, 2)
    assert (tmp_path / "c.svg").read_text().lstrip().startswith("<?xml")
    with pytest.raises(DimensionError):
        plotting.plot_pca(bm.generate_pair(1, 2, seed=0), tmp_path / "x.svg")


def test_ray_segment_geometry_matches_truncation():
    pair = bm.generate_pair(2, 4, seed=5)
    rng = np.random.default_rng(0)
    lo, hi = plotting.ray_segments(pair, 20, rng)
    X = pair.base.sample(20, 2, pair.box_halfwidth, np.random.default_rng(0))
    for x, a, b in zip(X, lo, hi):
        x0, x1 = mf.truncate_ray(mf.transport_ray(pair.funnel, x), pair.box_halfwidth)
        np.testing.assert_allclose(a, x0, atol=1e-12)
        np.testing.assert_allclose(b, x1, atol=1e-12)
