import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from raybos.raygen import (
    AngularRadiance,
    BundleSpec,
    UniformRadiance,
    emit_rays,
    ray_rng,
    sample_aperture_points,
)


def test_bundle_spec_validation():
    with pytest.raises(ValueError):
        BundleSpec(rays_per_source=0)
    with pytest.raises(ValueError):
        BundleSpec(sampling="halton")


def test_single_ray_goes_through_lens_centre():
    pts = sample_aperture_points((0.1, 0.2, 0.3), 0.005, BundleSpec(rays_per_source=1))
    np.testing.assert_array_equal(pts, [[0.1, 0.2, 0.3]])


@given(st.integers(2, 400), st.sampled_from(["stratified", "uniform-random"]), st.integers(0, 2**31))
def test_points_lie_in_disk_plane(n, mode, seed):
    center = np.array([0.01, -0.02, 0.5])
    pts = sample_aperture_points(center, 0.004, BundleSpec(n, mode, seed), ray_rng(seed, 3))
    assert pts.shape == (n, 3)
    assert np.all(np.hypot(pts[:, 0] - center[0], pts[:, 1] - center[1]) <= 0.004 * (1 + 1e-12))
    np.testing.assert_allclose(pts[:, 2], 0.5, atol=0)


@given(st.integers(2, 100))
def test_tilted_axis_disk(n):
    axis = np.array([1.0, 1.0, 0.0]) / math.sqrt(2)
    pts = sample_aperture_points((0, 0, 0), 1.0, BundleSpec(n), ray_rng(0, 0), axis=axis)
    np.testing.assert_allclose(pts @ axis, 0.0, atol=1e-14)
    assert np.all(np.linalg.norm(pts, axis=1) <= 1 + 1e-12)


def test_stratified_centroid_and_uniform_area():
    pts = sample_aperture_points((0, 0, 0), 1.0, BundleSpec(10_000), ray_rng(0, 0))
    assert np.abs(pts[:, :2].mean(axis=0)).max() < 1e-3
    # equal-area map: fraction inside r = 0.5 is one quarter
    frac = np.mean(np.hypot(pts[:, 0], pts[:, 1]) < 0.5)
    assert frac == pytest.approx(0.25, abs=0.005)


def test_stratified_non_square_count_uses_distinct_cells():
    pts = sample_aperture_points((0, 0, 0), 1.0, BundleSpec(50), ray_rng(1, 1))
    assert len(np.unique(pts.round(12), axis=0)) == 50


def test_rng_keyed_by_seed_source_stream():
    a = ray_rng(1, 2, 0).random(4)
    np.testing.assert_array_equal(a, ray_rng(1, 2, 0).random(4))
    assert not np.array_equal(a, ray_rng(1, 3, 0).random(4))
    assert not np.array_equal(a, ray_rng(1, 2, 1).random(4))
    assert not np.array_equal(a, ray_rng(2, 2, 0).random(4))


@given(st.integers(1, 1000))
def test_uniform_radiance_sums_to_one(n):
    w = UniformRadiance()(np.zeros((n, 3)))
    assert w.sum() == pytest.approx(1.0, rel=1e-12)
    assert np.all(w == w[0])


def test_angular_radiance():
    dirs = np.array([[1.0, 0, 0], [0, 1.0, 0], [-1.0, 0, 0]])
    flat = AngularRadiance(lambda th: np.ones_like(th))(dirs)
    np.testing.assert_allclose(flat, UniformRadiance()(dirs))
    fwd = AngularRadiance(lambda th: np.cos(th / 2) ** 2)(dirs)
    np.testing.assert_allclose(fwd, np.array([1.0, 0.5, 0.0]) / 3, atol=1e-16)
    with pytest.raises(ValueError):
        AngularRadiance(lambda th: -np.ones_like(th))(dirs)


def test_central_ray_angle_for_off_axis_dot():
    # dot 10 mm off axis, lens 980 mm away: atan(10/980)
    rays = emit_rays([0.01, 0.0, 0.0], [[0.0, 0.0, 0.98]])
    ang = math.degrees(math.acos(rays.directions[0] @ [0.0, 0.0, 1.0]))
    assert ang == pytest.approx(0.5846, abs=1e-3)
    assert ang == pytest.approx(math.degrees(math.atan(10 / 980)), rel=1e-12)


@given(st.integers(1, 200), st.integers(0, 1000))
def test_straight_rays_reach_aperture_points(n, seed):
    src = np.array([0.003, -0.002, 0.0])
    pts = sample_aperture_points((0, 0, 0.8), 0.0048, BundleSpec(n, seed=seed), ray_rng(seed, 0))
    rays = emit_rays(src, pts)
    np.testing.assert_allclose(np.linalg.norm(rays.directions, axis=1), 1.0, atol=1e-15)
    t = (pts[:, 2] - rays.origins[:, 2]) / rays.directions[:, 2]
    np.testing.assert_allclose(rays.origins + t[:, None] * rays.directions, pts, atol=1e-12)
    assert rays.radiance.sum() == pytest.approx(1.0)


def test_emit_rays_errors():
    with pytest.raises(ValueError):
        emit_rays([0, 0, 0], [[1, 1, 1]], wavelength=0.0)
    with pytest.raises(ValueError):
        emit_rays([0, 0, 0], [[0, 0, 0]])
