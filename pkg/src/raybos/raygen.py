"""Ray bundles from point sources toward the entrance aperture."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

SAMPLING_MODES = ("stratified", "uniform-random")


@dataclass(frozen=True)
class BundleSpec:
    rays_per_source: int = 10_000
    sampling: str = "stratified"
    seed: int = 0

    def __post_init__(self):
        if self.rays_per_source < 1:
            raise ValueError("rays_per_source must be >= 1")
        if self.sampling not in SAMPLING_MODES:
            raise ValueError(f"unknown sampling mode {self.sampling!r}; expected one of {SAMPLING_MODES}")


@dataclass(eq=False)
class RayBundle:
    """Structure-of-arrays ray set: ``origins`` and ``directions`` are ``(N, 3)``."""

    origins: np.ndarray
    directions: np.ndarray
    radiance: np.ndarray
    wavelength: float = 500e-9

    def __len__(self):
        return len(self.origins)

    def copy(self) -> RayBundle:
        return RayBundle(self.origins.copy(), self.directions.copy(), self.radiance.copy(), self.wavelength)


def ray_rng(seed: int, source_index: int, stream: int = 0) -> np.random.Generator:
    """Philox generator keyed by ``(seed, source_index, stream)``.

    Ray ``j`` of a bundle always consumes the ``j``-th draw of this stream, so
    the key fully determines every ray regardless of how sources are split
    across workers.
    """
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, source_index, stream])))


def _concentric_disk(a: np.ndarray, b: np.ndarray):
    """Shirley-Chiu map of ``[-1, 1]^2`` onto the unit disk."""
    r = np.where(np.abs(a) > np.abs(b), a, b)
    with np.errstate(divide="ignore", invalid="ignore"):
        phi = np.where(
            np.abs(a) > np.abs(b),
            (math.pi / 4) * (b / a),
            (math.pi / 2) - (math.pi / 4) * (a / b),
        )
    phi = np.where((a == 0) & (b == 0), 0.0, phi)
    return r * np.cos(phi), r * np.sin(phi)


def _orthonormal_basis(axis):
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    helper = np.array([1.0, 0.0, 0.0]) if abs(axis[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = helper - (helper @ axis) * axis
    e1 /= np.linalg.norm(e1)
    return e1, np.cross(axis, e1)


def sample_aperture_points(lens_center, lens_radius: float, spec: BundleSpec, rng=None, axis=(0.0, 0.0, 1.0)):
    """Points on the disk of radius ``lens_radius`` normal to ``axis``.

    Stratified mode jitters a square lattice and maps it onto the disk with
    the concentric mapping; when ``rays_per_source`` is not a perfect square
    a random subset of the covering lattice cells is used.  A one-ray bundle
    is the disk centre.
    """
    if not lens_radius > 0:
        raise ValueError("lens radius must be positive")
    if rng is None:
        rng = ray_rng(spec.seed, 0)
    n = spec.rays_per_source
    if n == 1:
        return np.asarray(lens_center, dtype=float)[None, :].copy()
    if spec.sampling == "stratified":
        m = math.ceil(math.sqrt(n))
        cells = np.arange(m * m) if m * m == n else np.sort(rng.permutation(m * m)[:n])
        jitter = rng.random((n, 2))
        sx = ((cells % m) + jitter[:, 0]) / m
        sy = ((cells // m) + jitter[:, 1]) / m
    else:
        sx, sy = rng.random(n), rng.random(n)
    dx, dy = _concentric_disk(2 * sx - 1, 2 * sy - 1)
    e1, e2 = _orthonormal_basis(axis)
    return (
        np.asarray(lens_center, dtype=float)
        + lens_radius * dx[:, None] * e1
        + lens_radius * dy[:, None] * e2
    )


class UniformRadiance:
    """Isotropic source: each of the N rays carries 1/N."""

    def __call__(self, directions: np.ndarray) -> np.ndarray:
        n = len(directions)
        return np.full(n, 1.0 / n)


class AngularRadiance:
    """Weights from a scattering-angle function.

    ``weight_fn`` maps the angle (radians) between the illumination direction
    and each ray to a relative weight; the bundle mean is 1/N per unit weight,
    so an angle-independent ``weight_fn = 1`` reproduces :class:`UniformRadiance`.
    This is where a Mie phase function would be plugged in.
    """

    def __init__(self, weight_fn, illumination_dir=(1.0, 0.0, 0.0)):
        self.weight_fn = weight_fn
        d = np.asarray(illumination_dir, dtype=float)
        self.illumination_dir = d / np.linalg.norm(d)

    def __call__(self, directions: np.ndarray) -> np.ndarray:
        cos = np.clip(directions @ self.illumination_dir, -1.0, 1.0)
        w = np.asarray(self.weight_fn(np.arccos(cos)), dtype=float)
        if np.any(w < 0):
            raise ValueError("radiance weights must be non-negative")
        return w / len(directions)


def emit_rays(source, aperture_points, wavelength: float = 500e-9, radiance_model=None) -> RayBundle:
    """Rays from ``source`` through each aperture point."""
    if not wavelength > 0:
        raise ValueError("wavelength must be positive")
    pts = np.atleast_2d(np.asarray(aperture_points, dtype=float))
    src = np.asarray(source, dtype=float)
    d = pts - src
    length = np.linalg.norm(d, axis=1)
    if np.any(length == 0):
        raise ValueError("source coincides with an aperture point")
    d /= length[:, None]
    model = radiance_model or UniformRadiance()
    origins = np.broadcast_to(src, d.shape).copy()
    return RayBundle(origins, d, model(d), wavelength)
