"""Sequential optics: spherical and planar surfaces, lenses, mirrors, stops.

Every element exposes ``propagate(origins, directions) -> (origins,
directions, status)`` on ``(N, 3)`` arrays.  Rays with a non-zero status are
blocked and their geometry is left as it was when they were stopped.

Signed radius convention: a positive radius of curvature puts the centre of
curvature downstream of the vertex (along ``axis``); ``math.inf`` is a plane.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .status import RayStatus

_EPS = 1e-12


def _unit(v):
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def _dot(a, b):
    return np.sum(a * b, axis=-1)


def reflect(direction, normal):
    """Mirror ``direction`` about the plane with unit ``normal``: ``d - 2 (d.n) n``."""
    d = np.asarray(direction, dtype=float)
    n = np.asarray(normal, dtype=float)
    return d - 2.0 * _dot(d, n)[..., None] * n


def refract(direction, normal, n_i, n_f):
    """Vector Snell refraction.

    The normal may point either way; it is flipped internally to face the
    incident ray.  Returns ``(transmitted, tir)`` where ``tir`` flags total
    internal reflection (the transmitted direction is NaN there).
    """
    d = np.asarray(direction, dtype=float)
    n = np.asarray(normal, dtype=float)
    cos_i = -_dot(d, n)
    flip = cos_i < 0
    n = np.where(flip[..., None], -n, n)
    cos_i = np.abs(cos_i)
    eta = np.asarray(n_i, dtype=float) / np.asarray(n_f, dtype=float)
    k = 1.0 - eta**2 * (1.0 - cos_i**2)
    tir = k < 0
    cos_t = np.sqrt(np.where(tir, 0.0, k))
    e = eta[..., None] if eta.ndim else eta
    t = e * d + (eta * cos_i - cos_t)[..., None] * n
    t = np.where(tir[..., None], np.nan, t)
    if t.ndim == 1:
        return t, bool(tir)
    return t, tir


@dataclass(frozen=True)
class SphericalSurface:
    vertex: tuple
    radius: float
    aperture_radius: float
    n_before: float = 1.0
    n_after: float = 1.0
    axis: tuple = (0.0, 0.0, 1.0)

    def __post_init__(self):
        if not self.aperture_radius > 0:
            raise ValueError("aperture radius must be positive")
        if math.isfinite(self.radius) and abs(self.radius) <= self.aperture_radius:
            raise ValueError("|radius of curvature| must exceed the aperture radius")
        object.__setattr__(self, "vertex", tuple(float(v) for v in self.vertex))
        object.__setattr__(self, "axis", tuple(_unit(self.axis)))

    @property
    def planar(self) -> bool:
        return not math.isfinite(self.radius)


def intersect_sphere(origins, directions, surface: SphericalSurface):
    """Nearest forward hit of rays on a spherical cap (or plane).

    Returns ``(points, normals, hit)``; normals are unit vectors facing the
    incoming ray.  Hits outside the clear aperture are misses.
    """
    single = np.asarray(origins).ndim == 1
    o = np.atleast_2d(np.asarray(origins, dtype=float))
    d = np.atleast_2d(np.asarray(directions, dtype=float))
    axis = np.asarray(surface.axis)
    vertex = np.asarray(surface.vertex)

    if surface.planar:
        denom = d @ axis
        with np.errstate(divide="ignore", invalid="ignore"):
            t = ((vertex - o) @ axis) / denom
        ok = (np.abs(denom) > _EPS) & (t > _EPS)
        normals = np.broadcast_to(-axis, o.shape).copy()
    else:
        R = surface.radius
        c = vertex + R * axis
        # advance distant origins toward the sphere first; |oc|^2 - R^2 loses
        # all precision when |oc| >> R
        shift = np.maximum(_dot(c - o, d) - 2.0 * abs(R), 0.0)
        oc = o + shift[:, None] * d - c
        b = _dot(d, oc)
        disc = b * b - (_dot(oc, oc) - R * R)
        root = np.sqrt(np.maximum(disc, 0.0))
        t_best = np.full(len(o), np.inf)
        for t_cand in (shift - b - root, shift - b + root):
            p = o + t_cand[:, None] * d
            on_cap = ((p - c) @ axis) * R < 0
            good = (disc >= 0) & (t_cand > _EPS) & on_cap & (t_cand < t_best)
            t_best = np.where(good, t_cand, t_best)
        t = t_best
        ok = np.isfinite(t)
        t = np.where(ok, t, 0.0)
        normals = (o + t[:, None] * d - c) / R

    t = np.where(ok, t, 0.0)
    points = o + t[:, None] * d
    rel = points - vertex
    radial = rel - (rel @ axis)[:, None] * axis
    hit = ok & (np.linalg.norm(radial, axis=1) <= surface.aperture_radius)
    facing = _dot(normals, d) > 0
    normals = np.where(facing[:, None], -normals, normals)
    if single:
        return points[0], normals[0], bool(hit[0])
    return points, normals, hit


class OpticalElement:
    def propagate(self, origins, directions):
        raise NotImplementedError

    @property
    def entrance(self) -> tuple[np.ndarray, float, np.ndarray]:
        """``(center, radius, axis)`` of the disk rays should be aimed at."""
        raise NotImplementedError


class Aperture(OpticalElement):
    """Circular stop: passes rays whose forward hit on the plane lies within ``radius``."""

    def __init__(self, center, normal, radius: float):
        if not radius > 0:
            raise ValueError("aperture radius must be positive")
        self.center = np.asarray(center, dtype=float)
        self.normal = _unit(normal)
        self.radius = float(radius)

    @classmethod
    def from_f_number(cls, center, normal, focal_length: float, f_number: float) -> Aperture:
        """Stop of radius ``f / (2 f#)``."""
        return cls(center, normal, focal_length / (2.0 * f_number))

    @property
    def entrance(self):
        return self.center, self.radius, self.normal

    def propagate(self, origins, directions):
        o = np.atleast_2d(origins)
        d = np.atleast_2d(directions)
        denom = d @ self.normal
        with np.errstate(divide="ignore", invalid="ignore"):
            t = ((self.center - o) @ self.normal) / denom
        forward = (np.abs(denom) > _EPS) & (t > 0)
        p = o + np.where(forward, t, 0.0)[:, None] * d
        inside = np.linalg.norm(p - self.center, axis=1) <= self.radius
        status = np.where(forward & inside, RayStatus.OK, RayStatus.BLOCKED_APERTURE).astype(np.int8)
        return o.copy(), d.copy(), status


def apply_aperture(origins, directions, aperture: Aperture):
    return aperture.propagate(origins, directions)


def _refract_at(surface, o, d, status):
    live = status == RayStatus.OK
    p, nrm, hit = intersect_sphere(o[live], d[live], surface)
    ids = np.flatnonzero(live)
    status[ids[~hit]] = RayStatus.BLOCKED_MISS
    ids_hit = ids[hit]
    d_new, tir = refract(d[ids_hit], nrm[hit], surface.n_before, surface.n_after)
    status[ids_hit[tir]] = RayStatus.BLOCKED_TIR
    ok = ids_hit[~tir]
    o[ok] = p[hit][~tir]
    d[ok] = d_new[~tir]


class LensElement(OpticalElement):
    """Thick singlet with two spherical (or planar) surfaces.

    ``position`` is the front vertex; the back vertex sits ``thickness``
    downstream along ``axis``.  TIR at either surface blocks the ray.
    """

    def __init__(self, position, R1: float, R2: float, thickness: float, n_glass: float,
                 diameter: float, n_ambient: float = 1.0, axis=(0.0, 0.0, 1.0)):
        if not thickness > 0:
            raise ValueError("lens thickness must be positive")
        axis = _unit(axis)
        position = np.asarray(position, dtype=float)
        self.axis = axis
        self.thickness = float(thickness)
        self.n_glass = float(n_glass)
        self.diameter = float(diameter)
        self.n_ambient = float(n_ambient)
        self.front = SphericalSurface(position, R1, diameter / 2, n_ambient, n_glass, axis)
        self.back = SphericalSurface(position + thickness * axis, R2, diameter / 2, n_glass, n_ambient, axis)

    @property
    def center(self) -> np.ndarray:
        return np.asarray(self.front.vertex) + 0.5 * self.thickness * self.axis

    @property
    def entrance(self):
        return np.asarray(self.front.vertex), self.diameter / 2, self.axis

    def propagate(self, origins, directions):
        o = np.atleast_2d(np.asarray(origins, dtype=float)).copy()
        d = np.atleast_2d(np.asarray(directions, dtype=float)).copy()
        status = np.zeros(len(o), dtype=np.int8)
        _refract_at(self.front, o, d, status)
        _refract_at(self.back, o, d, status)
        return o, d, status


def propagate_through_lens(origins, directions, lens: LensElement):
    return lens.propagate(origins, directions)


class Mirror(OpticalElement):
    """Reflective spherical or planar surface."""

    def __init__(self, surface: SphericalSurface):
        self.surface = surface

    @property
    def entrance(self):
        return np.asarray(self.surface.vertex), self.surface.aperture_radius, np.asarray(self.surface.axis)

    def propagate(self, origins, directions):
        o = np.atleast_2d(np.asarray(origins, dtype=float)).copy()
        d = np.atleast_2d(np.asarray(directions, dtype=float)).copy()
        p, nrm, hit = intersect_sphere(o, d, self.surface)
        status = np.where(hit, RayStatus.OK, RayStatus.BLOCKED_MISS).astype(np.int8)
        o[hit] = p[hit]
        d[hit] = _unit(reflect(d[hit], nrm[hit]))
        return o, d, status


class ThinLensIdeal(OpticalElement):
    """Aberration-free thin lens acting on ray slopes: ``s' = s - h / f``.

    Every ray from an object point at distance ``s_o`` meets the conjugate
    point at ``s_i = 1 / (1/f - 1/s_o)`` exactly, for any pupil height.
    """

    def __init__(self, center, axis, focal_length: float, diameter: float):
        if focal_length == 0:
            raise ValueError("focal length must be non-zero")
        self.center = np.asarray(center, dtype=float)
        self.axis = _unit(axis)
        self.focal_length = float(focal_length)
        self.diameter = float(diameter)

    @property
    def entrance(self):
        return self.center, self.diameter / 2, self.axis

    def propagate(self, origins, directions):
        o = np.atleast_2d(np.asarray(origins, dtype=float))
        d = np.atleast_2d(np.asarray(directions, dtype=float))
        a = self.axis
        da = d @ a
        with np.errstate(divide="ignore", invalid="ignore"):
            t = ((self.center - o) @ a) / da
        forward = (da > _EPS) & (t > 0)
        p = o + np.where(forward, t, 0.0)[:, None] * d
        rel = p - self.center
        h = rel - (rel @ a)[:, None] * a
        inside = np.linalg.norm(h, axis=1) <= self.diameter / 2
        ok = forward & inside
        slope = (d - da[:, None] * a) / np.where(ok, da, 1.0)[:, None]
        new_d = _unit(a + slope - h / self.focal_length)
        o_out = np.where(ok[:, None], p, o)
        d_out = np.where(ok[:, None], new_d, d)
        status = np.where(ok, RayStatus.OK, RayStatus.BLOCKED_MISS).astype(np.int8)
        return o_out, d_out, status


def propagate_chain(origins, directions, elements):
    """Apply ``elements`` in order; a ray stops at the first element that blocks it."""
    o = np.atleast_2d(np.asarray(origins, dtype=float)).copy()
    d = np.atleast_2d(np.asarray(directions, dtype=float)).copy()
    status = np.zeros(len(o), dtype=np.int8)
    for element in elements:
        live = np.flatnonzero(status == RayStatus.OK)
        if not len(live):
            break
        o2, d2, s2 = element.propagate(o[live], d[live])
        ok = s2 == RayStatus.OK
        o[live[ok]] = o2[ok]
        d[live[ok]] = d2[ok]
        status[live[~ok]] = s2[~ok]
    return o, d, status


def axis_crossing(origins, directions, axis_point=(0.0, 0.0, 0.0), axis=(0.0, 0.0, 1.0)) -> np.ndarray:
    """Axial coordinate where meridional rays cross the optical axis.

    Rays are assumed to lie in a plane containing the axis; the crossing is
    found from the radial offset and its rate of change.
    """
    o = np.atleast_2d(origins) - np.asarray(axis_point)
    d = np.atleast_2d(directions)
    a = _unit(axis)
    h = o - (o @ a)[:, None] * a
    dh = d - (d @ a)[:, None] * a
    t = -_dot(h, dh) / _dot(dh, dh)
    return (o + t[:, None] * d) @ a


def paraxial_image_distance(elements, object_point, reference_point, axis=(0.0, 0.0, 1.0), height: float = 1e-6) -> float:
    """Distance from ``reference_point`` (along ``axis``) to the paraxial image of an on-axis object point.

    A single ray leaving ``object_point`` toward a point ``height`` off axis
    on the first element's entrance plane is traced through the chain.
    """
    center, _, _ = elements[0].entrance
    e1 = np.cross(_unit(axis), [0.0, 1.0, 0.0])
    if np.linalg.norm(e1) < 0.5:
        e1 = np.cross(_unit(axis), [1.0, 0.0, 0.0])
    target = center + height * _unit(e1)
    d = _unit(target - np.asarray(object_point, dtype=float))
    o, d, status = propagate_chain(np.asarray(object_point, dtype=float)[None], d[None], elements)
    if status[0] != RayStatus.OK:
        raise ValueError("paraxial ray was blocked by the optical train")
    z = axis_crossing(o, d, reference_point, axis)[0]
    return float(z)
