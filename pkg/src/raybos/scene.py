"""Light sources and variable-density media.

Density volumes are voxel grids: node ``(i, j, k)`` sits at the voxel centre
``origin + (index + 0.5) * spacing`` and the volume occupies the box
``[origin, origin + dims * spacing]``.  Positions inside the outer half voxel
are clamped to the boundary nodes when interpolating.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

#: Gladstone-Dale constant of air, m^3/kg (0.226 cm^3/g).
K_AIR = 2.26e-4
#: Sea-level air density used to scale non-dimensional density fields, kg/m^3.
RHO_AIR = 1.225

_VOLUME_MAGIC = "GVOL1"


class VolumeFormatError(ValueError):
    """Raised when a GVOL file cannot be parsed."""


def gladstone_dale(rho, K: float = K_AIR):
    """Refractive index ``n = K * rho + 1`` from gas density.

    Works on scalars and arrays alike.  Negative densities are rejected.
    """
    if K <= 0:
        raise ValueError(f"Gladstone-Dale constant must be positive, got {K}")
    rho_arr = np.asarray(rho, dtype=float)
    if np.any(rho_arr < 0):
        raise ValueError("density must be non-negative")
    n = K * rho_arr + 1.0
    return float(n) if n.ndim == 0 else n


#: Ambient index of air at 1.225 kg/m^3.
N_AIR = gladstone_dale(RHO_AIR, K_AIR)


@dataclass(frozen=True, eq=False)
class DensityVolume:
    """Gridded density in kg/m^3, indexed ``rho[ix, iy, iz]``."""

    rho: np.ndarray
    spacing: tuple[float, float, float]
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        rho = np.asarray(self.rho)
        if rho.ndim != 3:
            raise ValueError(f"density grid must be 3-D, got shape {rho.shape}")
        if min(rho.shape) < 2:
            raise ValueError(f"density grid needs >= 2 nodes per axis, got {rho.shape}")
        if any(not (s > 0) for s in self.spacing):
            raise ValueError(f"spacing must be positive, got {self.spacing}")
        if not np.all(np.isfinite(rho)):
            raise ValueError("density grid contains non-finite values")
        if np.any(rho < 0):
            raise ValueError("density grid contains negative values")
        rho.setflags(write=False)
        object.__setattr__(self, "rho", rho)
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))
        object.__setattr__(self, "origin", tuple(float(o) for o in self.origin))

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(self.rho.shape)

    @property
    def extent(self) -> np.ndarray:
        return np.asarray(self.dims) * np.asarray(self.spacing)

    @property
    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        lo = np.asarray(self.origin, dtype=float)
        return lo, lo + self.extent

    def node_coords(self, axis: int) -> np.ndarray:
        """World coordinates of the nodes along one axis."""
        return self.origin[axis] + (np.arange(self.dims[axis]) + 0.5) * self.spacing[axis]

    @classmethod
    def centered(cls, rho, spacing, center=(0.0, 0.0, 0.0)) -> DensityVolume:
        """Volume whose bounding box is centred on ``center``."""
        rho = np.asarray(rho)
        ext = np.asarray(rho.shape) * np.asarray(spacing, dtype=float)
        origin = np.asarray(center, dtype=float) - ext / 2
        return cls(rho, tuple(spacing), tuple(origin))


class RefractiveField:
    """Common interface of gridded and analytic refractive-index fields.

    ``sample`` returns ``(n, grad_n, inside)`` for an ``(N, 3)`` array of
    points.  Points outside the bounding box get the ambient index and a zero
    gradient, with ``inside`` False.
    """

    lo: np.ndarray
    hi: np.ndarray
    n_ambient: float

    def sample(self, points):
        raise NotImplementedError

    @property
    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return self.lo, self.hi

    @property
    def default_step(self) -> float:
        return float(np.min(self.hi - self.lo)) / 100.0

    def contains(self, p: np.ndarray) -> np.ndarray:
        tol = 1e-9 * float(np.max(self.hi - self.lo))
        return np.all((p >= self.lo - tol) & (p <= self.hi + tol), axis=-1)


class GriddedField(RefractiveField):
    """Refractive index on a voxel grid with precomputed node gradients."""

    def __init__(self, n, spacing, origin, K: float = K_AIR, n_ambient: float = N_AIR):
        n = np.asarray(n, dtype=float)
        if n.ndim != 3 or min(n.shape) < 2:
            raise ValueError(f"index grid must be 3-D with >= 2 nodes per axis, got {n.shape}")
        self.n = n
        self.spacing = np.asarray(spacing, dtype=float)
        self.origin = np.asarray(origin, dtype=float)
        self.dims = np.asarray(n.shape)
        self.K = K
        self.n_ambient = float(n_ambient)
        # np.gradient: central differences inside, first-order one-sided at the faces
        gx, gy, gz = np.gradient(n, *self.spacing, edge_order=1)
        self.grad = np.stack([gx, gy, gz], axis=-1)
        self.lo = self.origin.copy()
        self.hi = self.origin + self.dims * self.spacing
        # [n, dn/dx, dn/dy, dn/dz] per node, flattened for single-gather lookups
        self._packed = np.concatenate([n[..., None], self.grad], axis=-1).reshape(-1, 4)
        self._strides = np.array([n.shape[1] * n.shape[2], n.shape[2], 1])

    @property
    def default_step(self) -> float:
        return float(np.min(self.spacing)) / 2.0

    def sample(self, points):
        p = np.atleast_2d(np.asarray(points, dtype=float))
        inside = self.contains(p)
        f = (p - self.origin) / self.spacing - 0.5
        f = np.clip(f, 0.0, self.dims - 1)
        i0 = np.minimum(np.floor(f).astype(np.intp), self.dims - 2)
        t = f - i0
        base = i0 @ self._strides
        s0, s1, s2 = self._strides
        tx, ty, tz = t[:, 0:1], t[:, 1:2], t[:, 2:3]
        v = self._packed
        c00 = v[base] * (1 - tz) + v[base + s2] * tz
        c01 = v[base + s1] * (1 - tz) + v[base + s1 + s2] * tz
        c10 = v[base + s0] * (1 - tz) + v[base + s0 + s2] * tz
        c11 = v[base + s0 + s1] * (1 - tz) + v[base + s0 + s1 + s2] * tz
        c0 = c00 * (1 - ty) + c01 * ty
        c1 = c10 * (1 - ty) + c11 * ty
        out = c0 * (1 - tx) + c1 * tx
        n = np.where(inside, out[:, 0], self.n_ambient)
        grad = np.where(inside[:, None], out[:, 1:], 0.0)
        return n, grad, inside


class AnalyticField(RefractiveField):
    """Closed-form index field restricted to an axis-aligned box.

    Subclasses implement ``index`` and ``gradient`` on ``(N, 3)`` arrays.
    """

    def __init__(self, lo, hi, n_ambient: float = N_AIR):
        self.lo = np.asarray(lo, dtype=float)
        self.hi = np.asarray(hi, dtype=float)
        if np.any(self.hi <= self.lo):
            raise ValueError("analytic field box must have positive extent")
        self.n_ambient = float(n_ambient)

    def index(self, p: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def gradient(self, p: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def sample(self, points):
        p = np.atleast_2d(np.asarray(points, dtype=float))
        inside = self.contains(p)
        n = np.where(inside, self.index(p), self.n_ambient)
        grad = np.where(inside[:, None], self.gradient(p), 0.0)
        return n, grad, inside


class LinearIndexField(AnalyticField):
    """``n(p) = n0 + g . (p - ref)`` inside the box."""

    def __init__(self, n0, gradient, lo, hi, ref=(0.0, 0.0, 0.0), n_ambient=None):
        super().__init__(lo, hi, n0 if n_ambient is None else n_ambient)
        self.n0 = float(n0)
        self.g = np.asarray(gradient, dtype=float)
        self.ref = np.asarray(ref, dtype=float)

    def index(self, p):
        return self.n0 + (p - self.ref) @ self.g

    def gradient(self, p):
        return np.broadcast_to(self.g, p.shape).copy()


class GaussianIndexField(AnalyticField):
    """``n = n_base + amplitude * exp(-r^2 / width^2)``.

    ``r`` is measured from ``center`` over the axes flagged in ``axes``, so
    ``axes=(1, 1, 0)`` gives a column that is uniform along z.
    """

    def __init__(self, n_base, amplitude, width, center, lo, hi, axes=(1, 1, 1), n_ambient=None):
        super().__init__(lo, hi, n_base if n_ambient is None else n_ambient)
        self.n_base = float(n_base)
        self.amplitude = float(amplitude)
        self.width = float(width)
        self.center = np.asarray(center, dtype=float)
        self.axes = np.asarray(axes, dtype=float)

    def _delta(self, p):
        return (p - self.center) * self.axes

    def index(self, p):
        d = self._delta(p)
        return self.n_base + self.amplitude * np.exp(-np.sum(d * d, axis=-1) / self.width**2)

    def gradient(self, p):
        d = self._delta(p)
        e = self.amplitude * np.exp(-np.sum(d * d, axis=-1) / self.width**2)
        return (-2.0 / self.width**2) * e[:, None] * d


def build_refractive_field(vol: DensityVolume, K: float = K_AIR, n_ambient: float = N_AIR) -> GriddedField:
    """Convert a density volume to a gridded index field via Gladstone-Dale."""
    n = gladstone_dale(np.asarray(vol.rho, dtype=float), K)
    return GriddedField(n, vol.spacing, vol.origin, K=K, n_ambient=n_ambient)


def sample_field(field: RefractiveField, p):
    """Index and gradient at a single point or an ``(N, 3)`` batch.

    For a single 3-vector returns ``(n, grad, inside)`` as scalars/3-vectors.
    """
    p = np.asarray(p, dtype=float)
    n, grad, inside = field.sample(p)
    if p.ndim == 1:
        return float(n[0]), grad[0], bool(inside[0])
    return n, grad, inside


def stack_2d_slice(slice_2d, nz: int, dz: float, spacing_xy, center=(0.0, 0.0, 0.0)) -> DensityVolume:
    """Repeat a 2-D ``rho[ix, iy]`` slice ``nz`` times along z.

    The resulting volume has depth ``nz * dz`` and is centred on ``center``.
    """
    if nz < 2:
        raise ValueError(f"need at least 2 slices, got {nz}")
    slice_2d = np.asarray(slice_2d)
    if slice_2d.ndim != 2:
        raise ValueError("slice must be 2-D")
    rho = np.repeat(slice_2d[:, :, None], nz, axis=2)
    return DensityVolume.centered(rho, (spacing_xy[0], spacing_xy[1], dz), center)


def linear_slice(shape, spacing, rho0: float, gradient) -> np.ndarray:
    """Density slice ``rho0 + gx * x + gy * y`` on a grid centred at the origin."""
    x = (np.arange(shape[0]) + 0.5 - shape[0] / 2) * spacing[0]
    y = (np.arange(shape[1]) + 0.5 - shape[1] / 2) * spacing[1]
    return rho0 + gradient[0] * x[:, None] + gradient[1] * y[None, :]


def gaussian_slice(shape, spacing, rho0: float, amplitude: float, width: float, center=(0.0, 0.0)) -> np.ndarray:
    """Density slice ``rho0 + amplitude * exp(-r^2 / width^2)`` centred at the origin."""
    x = (np.arange(shape[0]) + 0.5 - shape[0] / 2) * spacing[0] - center[0]
    y = (np.arange(shape[1]) + 0.5 - shape[1] / 2) * spacing[1] - center[1]
    r2 = x[:, None] ** 2 + y[None, :] ** 2
    return rho0 + amplitude * np.exp(-r2 / width**2)


# ---------------------------------------------------------------------------
# Sources


@dataclass(frozen=True, eq=False)
class DotPattern:
    """Random dots on a BOS target plane; each dot renders as a point source."""

    target_plane_z: float
    dot_positions: np.ndarray
    dot_physical_diameter: float
    density_spec: float

    def __post_init__(self):
        if not self.density_spec > 0:
            raise ValueError("dot density must be positive")
        pos = np.asarray(self.dot_positions, dtype=float).reshape(-1, 2)
        pos.setflags(write=False)
        object.__setattr__(self, "dot_positions", pos)

    def __len__(self):
        return len(self.dot_positions)

    @property
    def sources(self) -> np.ndarray:
        """Dot centres as 3-D points."""
        z = np.full((len(self), 1), self.target_plane_z)
        return np.hstack([self.dot_positions, z])


@dataclass(frozen=True, eq=False)
class ParticleField:
    """Tracer particles seeded in a volume (PIV sources)."""

    positions: np.ndarray
    diameters: np.ndarray
    volume_lo: np.ndarray | None = None
    volume_hi: np.ndarray | None = None

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float).reshape(-1, 3)
        diam = np.broadcast_to(np.asarray(self.diameters, dtype=float), (len(pos),)).copy()
        if self.volume_lo is not None and self.volume_hi is not None:
            lo, hi = np.asarray(self.volume_lo), np.asarray(self.volume_hi)
            if np.any((pos < lo) | (pos > hi)):
                raise ValueError("particle positions fall outside the seeded volume")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "diameters", diam)

    def __len__(self):
        return len(self.positions)

    @property
    def sources(self) -> np.ndarray:
        return self.positions


def expected_dot_count(extent, density_spec: float, magnification: float, pixel_pitch: float) -> int:
    """Number of dots for a target ``extent`` at ``density_spec`` dots per 32x32 px."""
    area_px = (extent[0] * magnification / pixel_pitch) * (extent[1] * magnification / pixel_pitch)
    return int(round(density_spec * area_px / 1024.0))


def generate_dot_pattern(
    extent,
    density_spec: float,
    magnification: float,
    pixel_pitch: float,
    seed: int,
    target_z: float = 0.0,
    center=(0.0, 0.0),
    dot_diameter: float = 0.0,
    count: int | None = None,
) -> DotPattern:
    """Uniform random dots over a rectangle of the target plane.

    The count follows from the areal density measured in sensor pixels unless
    ``count`` overrides it.  Dots are i.i.d. uniform with no minimum spacing.
    """
    if not density_spec > 0:
        raise ValueError("dot density must be positive")
    w, h = float(extent[0]), float(extent[1])
    if w <= 0 or h <= 0:
        raise ValueError(f"target extent must be positive, got {extent}")
    if count is None:
        count = expected_dot_count((w, h), density_spec, magnification, pixel_pitch)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, 0xD075])))
    uv = rng.random((count, 2))
    pos = np.column_stack([(uv[:, 0] - 0.5) * w + center[0], (uv[:, 1] - 0.5) * h + center[1]])
    return DotPattern(target_z, pos, dot_diameter, density_spec)


# ---------------------------------------------------------------------------
# GVOL files


def save_density_volume(vol: DensityVolume, path) -> None:
    """Write ``vol`` as a GVOL file (text header + little-endian float32, x fastest)."""
    nx, ny, nz = vol.dims
    header = " ".join(
        [_VOLUME_MAGIC, str(nx), str(ny), str(nz)]
        + [repr(float(v)) for v in (*vol.spacing, *vol.origin)]
    )
    data = np.asarray(vol.rho, dtype="<f4").ravel(order="F")
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii") + b"\n")
        fh.write(data.tobytes())


def load_density_volume(path) -> DensityVolume:
    """Read a GVOL file written by :func:`save_density_volume`."""
    raw = Path(path).read_bytes()
    nl = raw.find(b"\n")
    if nl < 0:
        raise VolumeFormatError(f"{path}: missing header line")
    try:
        tokens = raw[:nl].decode("ascii").split()
    except UnicodeDecodeError as exc:
        raise VolumeFormatError(f"{path}: header is not ASCII") from exc
    if len(tokens) != 10 or tokens[0] != _VOLUME_MAGIC:
        raise VolumeFormatError(f"{path}: malformed header {raw[:nl][:80]!r}")
    try:
        dims = tuple(int(t) for t in tokens[1:4])
        spacing = tuple(float(t) for t in tokens[4:7])
        origin = tuple(float(t) for t in tokens[7:10])
    except ValueError as exc:
        raise VolumeFormatError(f"{path}: bad header field ({exc})") from exc
    if min(dims) < 2:
        raise VolumeFormatError(f"{path}: dimensions must be >= 2, got {dims}")
    if not all(math.isfinite(v) for v in spacing + origin) or min(spacing) <= 0:
        raise VolumeFormatError(f"{path}: invalid spacing/origin")
    count = dims[0] * dims[1] * dims[2]
    payload = raw[nl + 1:]
    if len(payload) != 4 * count:
        raise VolumeFormatError(
            f"{path}: expected {count} float32 records ({4 * count} bytes), found {len(payload)} bytes"
        )
    rho = np.frombuffer(payload, dtype="<f4").reshape(dims, order="F").astype(np.float32)
    if not np.all(np.isfinite(rho)):
        raise VolumeFormatError(f"{path}: non-finite density values")
    try:
        return DensityVolume(rho, spacing, origin)
    except ValueError as exc:
        raise VolumeFormatError(f"{path}: {exc}") from exc
