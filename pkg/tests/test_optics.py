import math

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from raybos.optics import (
    Aperture,
    LensElement,
    Mirror,
    SphericalSurface,
    ThinLensIdeal,
    axis_crossing,
    intersect_sphere,
    paraxial_image_distance,
    propagate_chain,
    reflect,
    refract,
)
from raybos.status import RayStatus

Z = np.array([0.0, 0.0, 1.0])
unit3 = st.tuples(st.floats(-1, 1), st.floats(-1, 1), st.floats(-1, 1)).map(np.array).filter(
    lambda v: np.linalg.norm(v) > 0.1).map(lambda v: v / np.linalg.norm(v))


def incident(theta_deg):
    th = math.radians(theta_deg)
    return np.array([math.sin(th), 0.0, math.cos(th)])


# -- Snell's law ------------------------------------------------------------------

def test_snell_30deg_air_to_glass():
    t, tir = refract(incident(30.0), -Z, 1.0, 1.5)
    assert not tir
    assert math.degrees(math.asin(t[0])) == pytest.approx(19.4712, abs=1e-4)
    assert np.linalg.norm(t) == pytest.approx(1.0, abs=1e-15)


def test_total_internal_reflection():
    _, tir = refract(incident(60.0), -Z, 1.5, 1.0)
    assert tir
    _, tir = refract(incident(41.0), -Z, 1.5, 1.0)
    assert not tir
    _, tir = refract(incident(42.0), -Z, 1.5, 1.0)
    assert tir


def test_normal_orientation_irrelevant():
    a, _ = refract(incident(25.0), -Z, 1.0, 1.33)
    b, _ = refract(incident(25.0), Z, 1.0, 1.33)
    np.testing.assert_allclose(a, b, atol=1e-15)


def test_normal_incidence_undeviated():
    t, _ = refract(Z, -Z, 1.0, 1.7)
    np.testing.assert_allclose(t, Z, atol=1e-15)


@given(unit3, unit3, st.floats(1.0, 2.0), st.floats(1.0, 2.0))
def test_snell_invariants(d, n, n_i, n_f):
    assume(abs(d @ n) > 1e-3)
    t, tir = refract(d, n, n_i, n_f)
    if tir:
        assert n_i > n_f and np.all(np.isnan(t))
        return
    assert np.linalg.norm(t) == pytest.approx(1.0, abs=1e-12)
    # tangential component of n*d is conserved and t stays in the plane of incidence
    np.testing.assert_allclose(n_i * np.cross(d, n), n_f * np.cross(t, n), atol=1e-12)
    assert abs(np.dot(np.cross(d, n), t)) < 1e-12
    # transmitted ray continues across the surface
    assert np.sign(t @ n) == np.sign(d @ n)


@given(unit3, unit3, st.floats(1.0, 2.0), st.floats(1.0, 2.0))
def test_snell_reciprocity(d, n, n_i, n_f):
    assume(abs(d @ n) > 1e-3)
    t, tir = refract(d, n, n_i, n_f)
    assume(not tir)
    back, tir2 = refract(-t, n, n_f, n_i)
    assert not tir2
    np.testing.assert_allclose(back, -d, atol=1e-10)


@given(unit3, unit3)
def test_reflect_invariants(d, n):
    r = reflect(d, n)
    assert np.linalg.norm(r) == pytest.approx(1.0, abs=1e-12)
    assert r @ n == pytest.approx(-(d @ n), abs=1e-12)
    np.testing.assert_allclose(reflect(r, n), d, atol=1e-12)


def test_reflect_cases():
    np.testing.assert_allclose(reflect(incident(30.0), -Z), [0.5, 0, -math.cos(math.radians(30))], atol=1e-15)
    np.testing.assert_allclose(reflect(Z, Z), -Z)


# -- surface intersection ----------------------------------------------------------

def test_sphere_vertex_hit():
    s = SphericalSurface((0, 0, 1.0), 0.5, 0.2)
    p, nrm, hit = intersect_sphere(np.array([0.0, 0, 0]), Z, s)
    assert hit
    np.testing.assert_allclose(p, [0, 0, 1.0])
    np.testing.assert_allclose(nrm, -Z)


def test_sphere_off_axis_hit_on_cap():
    R = 0.5
    s = SphericalSurface((0, 0, 0), R, 0.3)
    p, nrm, hit = intersect_sphere(np.array([0.1, 0, -1.0]), Z, s)
    assert hit
    sag = R - math.sqrt(R * R - 0.01)
    np.testing.assert_allclose(p, [0.1, 0, sag], atol=1e-15)
    assert nrm @ Z < 0


def test_concave_surface_sag_sign():
    s = SphericalSurface((0, 0, 0), -0.5, 0.3)
    p, _, hit = intersect_sphere(np.array([0.1, 0, -1.0]), Z, s)
    assert hit and p[2] < 0


def test_sphere_miss_outside_aperture():
    s = SphericalSurface((0, 0, 0), 0.5, 0.1)
    _, _, hit = intersect_sphere(np.array([0.2, 0, -1.0]), Z, s)
    assert not hit
    _, _, hit = intersect_sphere(np.array([0.0, 0, 1.0]), Z, s)
    assert not hit


def test_plane_at_45_degrees():
    axis = np.array([0.0, 1.0, 1.0]) / math.sqrt(2)
    s = SphericalSurface((0, 0, 0), math.inf, 1.0, axis=tuple(axis))
    p, nrm, hit = intersect_sphere(np.array([0.0, 0.2, -1.0]), Z, s)
    assert hit
    np.testing.assert_allclose(p, [0, 0.2, -0.2], atol=1e-15)
    np.testing.assert_allclose(nrm, -axis, atol=1e-15)


def test_surface_validation():
    with pytest.raises(ValueError):
        SphericalSurface((0, 0, 0), 0.05, 0.1)
    with pytest.raises(ValueError):
        SphericalSurface((0, 0, 0), 1.0, 0.0)


def test_flat_mirror():
    m = Mirror(SphericalSurface((0, 0, 1.0), math.inf, 0.5))
    o, d, st = m.propagate([[0.1, 0, 0]], [incident(10.0)])
    assert st[0] == RayStatus.OK
    np.testing.assert_allclose(d[0], incident(10.0) * [1, 1, -1], atol=1e-15)
    assert o[0, 2] == pytest.approx(1.0)


def test_concave_mirror_focus():
    # spherical mirror, paraxial focus at R/2
    m = Mirror(SphericalSurface((0, 0, 1.0), -2.0, 0.2))
    o, d, _ = m.propagate([[1e-5, 0, 0]], [Z])
    assert axis_crossing(o, d)[0] == pytest.approx(1.0 - 1.0, abs=1e-8)


# -- stops and ideal lens ----------------------------------------------------------

def test_aperture_from_f_number():
    a = Aperture.from_f_number((0, 0, 0), Z, 0.105, 11.0)
    assert a.radius == pytest.approx(4.7727e-3, rel=1e-4)


def test_aperture_edge():
    a = Aperture((0, 0, 0), Z, 0.01)
    _, _, st = a.propagate([[0.01 * 0.9999, 0, -1], [0.01 * 1.0001, 0, -1], [0, 0, 1]], [Z, Z, Z])
    np.testing.assert_array_equal(st, [RayStatus.OK, RayStatus.BLOCKED_APERTURE, RayStatus.BLOCKED_APERTURE])
    _, _, st = a.propagate([[0, 0, -1]], [[1.0, 0, 0]])
    assert st[0] == RayStatus.BLOCKED_APERTURE
    with pytest.raises(ValueError):
        Aperture((0, 0, 0), Z, 0.0)


@given(st.floats(-0.004, 0.004), st.floats(-0.004, 0.004), st.floats(-0.01, 0.01))
def test_thin_lens_images_point_exactly(hx, hy, y0):
    f, so = 0.105, 0.98
    lens = ThinLensIdeal((0, 0, 0), Z, f, 0.05)
    src = np.array([0.0, y0, -so])
    d = np.array([hx, hy, 0.0]) - src
    o, d, st = lens.propagate(src[None], (d / np.linalg.norm(d))[None])
    assert st[0] == RayStatus.OK
    si = 1 / (1 / f - 1 / so)
    t = (si - o[0, 2]) / d[0, 2]
    np.testing.assert_allclose(o[0] + t * d[0], [0, -y0 * si / so, si], atol=1e-13)


def test_chain_identity_and_blocking():
    o = np.array([[0.0, 0.0, -1.0], [0.02, 0.0, -1.0]])
    d = np.array([Z, Z])
    o2, d2, st = propagate_chain(o, d, [])
    np.testing.assert_array_equal(o2, o)
    assert np.all(st == 0)
    chain = [Aperture((0, 0, 0), Z, 0.01), ThinLensIdeal((0, 0, 0), Z, 0.1, 0.05)]
    o2, d2, st = propagate_chain(o, d, chain)
    np.testing.assert_array_equal(st, [RayStatus.OK, RayStatus.BLOCKED_APERTURE])
    np.testing.assert_array_equal(o2[1], o[1])


def test_chain_composes_like_sequential_calls():
    a = ThinLensIdeal((0, 0, 0), Z, 0.1, 0.05)
    b = ThinLensIdeal((0, 0, 0.05), Z, 0.2, 0.05)
    o = np.array([[0.003, -0.002, -0.5]])
    d = np.array([[0.0, 0.01, 1.0]]) / np.linalg.norm([0, 0.01, 1])
    oc, dc, _ = propagate_chain(o, d, [a, b])
    o1, d1, _ = a.propagate(o, d)
    o2, d2, _ = b.propagate(o1, d1)
    np.testing.assert_allclose(oc, o2)
    np.testing.assert_allclose(dc, d2)


# -- thick lens ---------------------------------------------------------------------

def test_lens_axial_ray_undeviated():
    lens = LensElement((0, 0, 0), 0.1, -0.1, 0.005, 1.5, 0.04)
    o, d, st = lens.propagate([[0, 0, -0.05]], [Z])
    assert st[0] == 0
    np.testing.assert_allclose(d[0], Z, atol=1e-15)
    np.testing.assert_allclose(o[0], [0, 0, 0.005], atol=1e-15)


def test_lens_paraxial_focus_matches_thick_lensmaker():
    R, t, n = 0.1, 0.005, 1.5
    f = 1 / ((n - 1) * (2 / R - (n - 1) * t / (n * R * R)))
    bfd = f * (1 - (n - 1) * t / (n * R))
    lens = LensElement((0, 0, 0), R, -R, t, n, 0.04)
    o, d, _ = lens.propagate([[1e-5, 0, -0.05]], [Z])
    assert axis_crossing(o, d)[0] - t == pytest.approx(bfd, abs=1e-8)
    assert paraxial_image_distance([lens], (0, 0, -1e6), (0, 0, t)) == pytest.approx(bfd, rel=1e-6)


@pytest.mark.parametrize("s_o", [0.3, 1.0, 10.0])
def test_lens_finite_conjugate_matches_ray_transfer(s_o):
    R, t, n = 0.1, 0.005, 1.5
    # reduced-angle paraxial transfer: start on axis with unit slope
    y, nu = s_o, 1.0
    nu -= y * (n - 1) / R
    y += t / n * nu
    nu -= y * (n - 1) / R
    expected = -y / nu
    lens = LensElement((0, 0, 0), R, -R, t, n, 0.04)
    got = paraxial_image_distance([lens], (0, 0, -s_o), (0, 0, t), height=1e-7)
    assert got == pytest.approx(expected, rel=1e-6)


def test_lens_spherical_aberration_undercorrected():
    lens = LensElement((0, 0, 0), 0.1, -0.1, 0.005, 1.5, 0.04)
    zs = [axis_crossing(*lens.propagate([[h, 0, -0.05]], [Z])[:2])[0] for h in (1e-4, 0.006, 0.012, 0.018)]
    assert all(a > b for a, b in zip(zs, zs[1:]))


def test_lens_validation_and_tir_blocking():
    with pytest.raises(ValueError):
        LensElement((0, 0, 0), 0.1, -0.1, 0.0, 1.5, 0.04)
    lens = LensElement((0, 0, 0), 0.1, -0.1, 0.005, 1.5, 0.04)
    _, _, st = lens.propagate([[0.05, 0, -0.05]], [Z])
    assert st[0] == RayStatus.BLOCKED_MISS
