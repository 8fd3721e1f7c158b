"""BOS displacement theory, ray-traced dot displacements and field comparison."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class BosParams:
    M: float
    Z_D: float
    K: float
    n0: float
    L_z: float

    def __post_init__(self):
        for name in ("M", "Z_D", "K", "n0", "L_z"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")

    @property
    def scale(self) -> float:
        """Displacement per unit path-averaged density gradient, m per (kg/m^4)."""
        return self.M * self.Z_D * self.K * self.L_z / self.n0


@dataclass(eq=False)
class DisplacementField:
    """Two-component displacement on a regular grid.

    ``dx``/``dy``/``mask`` have shape ``(len(y), len(x))``; ``mask`` is True on
    valid nodes.
    """

    x: np.ndarray
    y: np.ndarray
    dx: np.ndarray
    dy: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        for axis in (self.x, self.y):
            if axis.ndim != 1 or (len(axis) > 1 and np.any(np.diff(axis) <= 0)):
                raise ValueError("grid axes must be strictly increasing 1-D arrays")
        shape = (len(self.y), len(self.x))
        self.dx = np.asarray(self.dx, dtype=float).reshape(shape)
        self.dy = np.asarray(self.dy, dtype=float).reshape(shape)
        self.mask = np.asarray(self.mask, dtype=bool).reshape(shape) & np.isfinite(self.dx) & np.isfinite(self.dy)

    @property
    def magnitude(self) -> np.ndarray:
        return np.hypot(self.dx, self.dy)

    def scaled(self, factor: float) -> DisplacementField:
        return DisplacementField(self.x * factor, self.y * factor, self.dx * factor, self.dy * factor, self.mask)


def theoretical_displacement(x, y, grad_rho, params: BosParams) -> DisplacementField:
    """Small-angle BOS displacement ``M Z_D K / n0 * grad(rho)_avg * L_z`` at each node.

    ``grad_rho`` has shape ``(len(y), len(x), 2)`` and holds the path-averaged
    (here: slice) density gradient in kg/m^4.
    """
    g = np.asarray(grad_rho, dtype=float)
    if not np.all(np.isfinite(g)):
        raise ValueError("density gradient must be finite")
    d = params.scale * g
    return DisplacementField(x, y, d[..., 0], d[..., 1], np.ones(d.shape[:2], dtype=bool))


@dataclass(eq=False)
class ScatteredDisplacements:
    positions: np.ndarray
    displacements: np.ndarray
    mask: np.ndarray

    def __len__(self):
        return len(self.positions)

    @classmethod
    def concatenate(cls, parts) -> ScatteredDisplacements:
        parts = list(parts)
        if not parts:
            return cls(np.empty((0, 2)), np.empty((0, 2)), np.empty(0, dtype=bool))
        return cls(
            np.concatenate([p.positions for p in parts]),
            np.concatenate([p.displacements for p in parts]),
            np.concatenate([p.mask for p in parts]),
        )


def measure_dot_displacements(ref_hits, grad_hits) -> ScatteredDisplacements:
    """Per-dot ``mean(grad hits) - mean(ref hits)`` at the mean reference hit.

    Both arguments are sequences (one entry per dot) of ``(k, 2)`` hit arrays.
    Dots with no surviving rays in either trace are masked.
    """
    if len(ref_hits) != len(grad_hits):
        raise ValueError("reference and gradient traces must cover the same dots")
    n = len(ref_hits)
    pos = np.full((n, 2), np.nan)
    disp = np.full((n, 2), np.nan)
    mask = np.zeros(n, dtype=bool)
    for i, (r, g) in enumerate(zip(ref_hits, grad_hits)):
        r = np.asarray(r, dtype=float).reshape(-1, 2)
        g = np.asarray(g, dtype=float).reshape(-1, 2)
        if len(r) == 0 or len(g) == 0:
            continue
        pos[i] = r.mean(axis=0)
        disp[i] = g.mean(axis=0) - pos[i]
        mask[i] = True
    return ScatteredDisplacements(pos, disp, mask)


@dataclass(frozen=True, eq=False)
class GridSpec:
    """Output nodes plus the bin size used to average scattered dots.

    Bin centres sit on the lattice ``x[0] + k * bin_size[0]`` (likewise in y).
    """

    x: np.ndarray
    y: np.ndarray
    bin_size: tuple[float, float]

    @classmethod
    def regular(cls, extent, node_spacing: float, bin_size: float, center=(0.0, 0.0)) -> GridSpec:
        """Nodes every ``node_spacing`` inside a centred rectangle, bins of ``bin_size``."""
        axes = []
        for ext, c in zip(extent, center):
            n = int(math.floor(ext / node_spacing))
            axes.append(c + (np.arange(n) - (n - 1) / 2) * node_spacing)
        return cls(axes[0], axes[1], (bin_size, bin_size))


def _resample_weights(nodes, first_center, bin_size, n_bins):
    f = (nodes - first_center) / bin_size
    if n_bins == 1:
        zeros = np.zeros(len(nodes), dtype=np.intp)
        return zeros, zeros, np.zeros(len(nodes))
    f = np.clip(f, 0.0, n_bins - 1)
    i0 = np.minimum(np.floor(f).astype(np.intp), n_bins - 2)
    return i0, i0 + 1, f - i0


def grid_displacements(scattered: ScatteredDisplacements, spec: GridSpec, min_dots: int = 4) -> DisplacementField:
    """Bin-average scattered displacements, then resample bilinearly onto ``spec``.

    Empty bins carry no weight; a node is masked when all four surrounding
    bins are empty.
    """
    valid = np.asarray(scattered.mask, dtype=bool)
    if valid.sum() < min_dots:
        raise ValueError(f"need at least {min_dots} valid dots, got {int(valid.sum())}")
    pos = scattered.positions[valid]
    disp = scattered.displacements[valid]
    bx, by = spec.bin_size
    x, y = np.asarray(spec.x, float), np.asarray(spec.y, float)
    nbx = int(math.floor((x[-1] - x[0]) / bx + 1e-9)) + 1
    nby = int(math.floor((y[-1] - y[0]) / by + 1e-9)) + 1
    ix = np.rint((pos[:, 0] - x[0]) / bx).astype(np.intp)
    iy = np.rint((pos[:, 1] - y[0]) / by).astype(np.intp)
    inside = (ix >= 0) & (ix < nbx) & (iy >= 0) & (iy < nby)
    flat = iy[inside] * nbx + ix[inside]
    count = np.bincount(flat, minlength=nbx * nby).reshape(nby, nbx)
    sx = np.bincount(flat, weights=disp[inside, 0], minlength=nbx * nby).reshape(nby, nbx)
    sy = np.bincount(flat, weights=disp[inside, 1], minlength=nbx * nby).reshape(nby, nbx)
    occupied = count > 0
    with np.errstate(invalid="ignore", divide="ignore"):
        mx = np.where(occupied, sx / count, 0.0)
        my = np.where(occupied, sy / count, 0.0)

    x0, x1, tx = _resample_weights(x, x[0], bx, nbx)
    y0, y1, ty = _resample_weights(y, y[0], by, nby)
    num_x = np.zeros((len(y), len(x)))
    num_y = np.zeros_like(num_x)
    wsum = np.zeros_like(num_x)
    for yi, wy in ((y0, 1 - ty), (y1, ty)):
        for xi, wx in ((x0, 1 - tx), (x1, tx)):
            w = wy[:, None] * wx[None, :] * occupied[np.ix_(yi, xi)]
            num_x += w * mx[np.ix_(yi, xi)]
            num_y += w * my[np.ix_(yi, xi)]
            wsum += w
    mask = wsum > 0
    with np.errstate(invalid="ignore", divide="ignore"):
        dx = np.where(mask, num_x / wsum, np.nan)
        dy = np.where(mask, num_y / wsum, np.nan)
    return DisplacementField(x, y, dx, dy, mask)


def compare_fields(a: DisplacementField, b: DisplacementField) -> dict:
    """Error metrics of ``b`` against ``a`` over their joint mask.

    ``rms_error`` and ``peak_abs_error`` use the vector difference magnitude.
    ``pearson_correlation`` pools both components after removing each
    component's mean, so it is insensitive to constant offsets and defined
    even when one component is identically zero.
    """
    if a.dx.shape != b.dx.shape or not (np.allclose(a.x, b.x) and np.allclose(a.y, b.y)):
        raise ValueError("fields must share the same grid")
    joint = a.mask & b.mask
    if not joint.any():
        raise ValueError("fields have no valid nodes in common")
    ea = np.stack([a.dx[joint], a.dy[joint]])
    eb = np.stack([b.dx[joint], b.dy[joint]])
    diff = np.hypot(*(eb - ea))
    ca = ea - ea.mean(axis=1, keepdims=True)
    cb = eb - eb.mean(axis=1, keepdims=True)
    denom = math.sqrt(float(np.sum(ca * ca)) * float(np.sum(cb * cb)))
    corr = float(np.sum(ca * cb)) / denom if denom > 0 else float("nan")
    return {
        "rms_error": float(np.sqrt(np.mean(diff**2))),
        "peak_abs_error": float(diff.max()),
        "pearson_correlation": corr,
        "peak_a": float(np.hypot(*ea).max()),
        "peak_b": float(np.hypot(*eb).max()),
        "nodes": int(joint.sum()),
    }


def write_displacement_csv(path, field: DisplacementField) -> None:
    """One node per row: ``x,y,dx,dy,mask`` in SI units."""
    X, Y = np.meshgrid(field.x, field.y)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "dx", "dy", "mask"])
        for row in zip(X.ravel(), Y.ravel(), field.dx.ravel(), field.dy.ravel(), field.mask.ravel()):
            w.writerow([repr(float(row[0])), repr(float(row[1])), repr(float(row[2])), repr(float(row[3])), int(row[4])])


def read_displacement_csv(path) -> DisplacementField:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    xs = np.array([float(r["x"]) for r in rows])
    ys = np.array([float(r["y"]) for r in rows])
    x, y = np.unique(xs), np.unique(ys)
    shape = (len(y), len(x))
    get = lambda key, t: np.array([t(r[key]) for r in rows]).reshape(shape)  # noqa: E731
    return DisplacementField(x, y, get("dx", float), get("dy", float), get("mask", int).astype(bool))


def write_metrics_csv(path, metrics: dict) -> None:
    """Header row plus a single row of values."""
    keys = list(metrics)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(keys)
        w.writerow([metrics[k] for k in keys])
