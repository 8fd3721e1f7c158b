"""Ray integration through graded-index media.

Fermat's ray equation ``d/ds (n dx/ds) = grad n`` is integrated with
Sharma's fourth-order Runge-Kutta scheme.  With ``T = n dx/ds`` and the
parameter ``t`` defined by ``dt = ds / n`` the equation becomes
``d^2 R / dt^2 = D(R)`` with ``D = n grad n``, so a step of ``dt`` covers a
path length of roughly ``n * dt``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .raygen import RayBundle
from .scene import GriddedField
from .status import RayStatus


@dataclass(frozen=True)
class StepParams:
    delta_xi: float | None = None  # None -> field.default_step
    max_steps: int = 100_000

    def __post_init__(self):
        if self.delta_xi is not None and not self.delta_xi > 0:
            raise ValueError("delta_xi must be positive")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")


def d_function(field, R) -> np.ndarray:
    """``D = n * grad(n)``; zero outside the field box."""
    R = np.asarray(R, dtype=float)
    n, grad, _ = field.sample(R)
    D = n[:, None] * grad
    return D[0] if R.ndim == 1 else D


def rk4_step(R, T, field, delta_xi):
    """One Sharma RK4 step for a batch of rays.

    ``delta_xi`` may be a scalar or a per-ray array (used for truncated
    boundary steps).
    """
    R = np.asarray(R, dtype=float)
    T = np.asarray(T, dtype=float)
    h = np.asarray(delta_xi, dtype=float)
    if h.ndim == 1:
        h = h[:, None]
    A = d_function(field, R) * h
    B = d_function(field, R + (0.5 * T + 0.125 * A) * h) * h
    C = d_function(field, R + (T + 0.5 * B) * h) * h
    R_next = R + (T + (A + 2.0 * B) / 6.0) * h
    T_next = T + (A + 4.0 * B + C) / 6.0
    return R_next, T_next


def _slab(origins, vectors, lo, hi):
    """Parametric slab interval for ``origins + t * vectors`` (vectors need not be unit)."""
    o = np.atleast_2d(origins)
    v = np.atleast_2d(vectors)
    parallel = v == 0
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        inv = 1.0 / v
        t_a = (lo - o) * inv
        t_b = (hi - o) * inv
    t_lo = np.where(parallel, -np.inf, np.minimum(t_a, t_b))
    t_hi = np.where(parallel, np.inf, np.maximum(t_a, t_b))
    outside_slab = parallel & ((o < lo) | (o > hi))
    t_near = t_lo.max(axis=1)
    t_far = t_hi.min(axis=1)
    hit = (t_near <= t_far) & ~outside_slab.any(axis=1)
    return t_near, t_far, hit


def aabb_intersect(origins, directions, lo, hi):
    """Entry/exit parameters of rays against an axis-aligned box.

    Returns ``(t_near, t_far, hit)``.  ``t_near`` is clamped to 0 for rays that
    start inside the box; boxes entirely behind the origin are misses.
    """
    single = np.asarray(origins).ndim == 1
    t_near, t_far, hit = _slab(origins, directions, np.asarray(lo, float), np.asarray(hi, float))
    hit &= t_far >= 0
    t_near = np.maximum(t_near, 0.0)
    if single:
        return float(t_near[0]), float(t_far[0]), bool(hit[0])
    return t_near, t_far, hit


def _trace_compiled(rays: RayBundle, field, h: float, max_steps: int):
    from . import _kernels

    out = rays.copy()
    status = np.zeros(len(rays), dtype=np.int8)
    tol = 1e-9 * float(np.max(field.hi - field.lo))
    grid = _kernels.grid_tuple(field.dims, field.origin, field.spacing, field.lo, field.hi, tol, field.n_ambient)
    _kernels.trace_gridded(
        np.ascontiguousarray(rays.origins), np.ascontiguousarray(rays.directions), field._packed.reshape(-1),
        grid, float(h), int(max_steps), out.origins, out.directions, status,
    )
    return out, status


def trace_through_volume(rays: RayBundle, field, params: StepParams | None = None, history=None,
                         backend: str = "auto"):
    """Bend a ray bundle through ``field``.

    Rays advance in a straight line to the box entry, take RK4 steps while
    inside and finish with a truncated step that lands on the exit face.  The
    outgoing direction is ``T / |T|``.  Rays that miss the box are returned
    unchanged.

    Returns ``(bundle, status)``.  If ``history`` is a list, one
    ``(xi, R, T)`` tuple of per-ray arrays is appended for the entry point
    and after every step (intended for single-ray debugging).

    ``backend="auto"`` uses the compiled per-ray loop for gridded fields when
    no history is requested; ``"numpy"`` forces the vectorised reference path.
    """
    if backend not in ("auto", "numpy", "compiled"):
        raise ValueError(f"unknown backend {backend!r}")
    params = params or StepParams()
    h = params.delta_xi or field.default_step
    gridded = isinstance(field, GriddedField)
    if backend == "compiled" and (not gridded or history is not None):
        raise ValueError("the compiled backend needs a GriddedField and no history")
    if backend != "numpy" and gridded and history is None:
        return _trace_compiled(rays, field, h, params.max_steps)
    lo, hi = field.bounds
    o, d = rays.origins, rays.directions
    out = rays.copy()
    status = np.zeros(len(rays), dtype=np.int8)

    t0, t1, hit = aabb_intersect(o, d, lo, hi)
    active = np.flatnonzero(hit & (t1 > t0))
    R = o[active] + t0[active, None] * d[active]
    n, _, _ = field.sample(R)
    T = n[:, None] * d[active]
    xi = np.zeros(len(active))
    if history is not None:
        history.append((xi.copy(), R.copy(), T.copy()))

    steps = 0
    while len(active):
        if steps >= params.max_steps:
            status[active] = RayStatus.LOST
            break
        R1, T1 = rk4_step(R, T, field, h)
        finite = np.isfinite(R1).all(axis=1) & np.isfinite(T1).all(axis=1)
        leaving = ~field.contains(R1) & finite
        step_len = np.full(len(active), h)
        if leaving.any():
            _, s, _ = _slab(R[leaving], R1[leaving] - R[leaving], lo, hi)
            s = np.clip(s, 0.0, 1.0)
            R_exit, T_exit = rk4_step(R[leaving], T[leaving], field, h * s)
            R1[leaving], T1[leaving] = R_exit, T_exit
            step_len[leaving] = h * s
            ids = active[leaving]
            out.origins[ids] = R_exit
            out.directions[ids] = T_exit / np.linalg.norm(T_exit, axis=1)[:, None]
        xi = xi + step_len
        if history is not None:
            history.append((xi.copy(), R1.copy(), T1.copy()))
        status[active[~finite]] = RayStatus.INVALID
        keep = finite & ~leaving
        active, R, T, xi = active[keep], R1[keep], T1[keep], xi[keep]
        steps += 1
    return out, status
