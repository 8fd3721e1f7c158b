"""Self-contained validation suites.

Each suite returns a plain dict: ``suite``, ``passed``, ``runtime`` and a list
of ``checks`` (name, value, limit, passed), plus an optional ``table``.  The
dicts serialise to JSON unchanged.
"""

from __future__ import annotations

import math
import time

import numpy as np

from ..grin import rk4_step
from ..optics import LensElement, axis_crossing, refract
from ..scene import GaussianIndexField, K_AIR
from ..sensor import SensorModel, accumulate_spot, diffraction_diameter
from . import presets
from .pipeline import bos_run


def _check(name, value, limit, passed) -> dict:
    return {"name": name, "value": value, "limit": limit, "passed": bool(passed)}


def _snell_angle(theta_deg, n_i, n_f):
    th = math.radians(theta_deg)
    d = np.array([math.sin(th), 0.0, math.cos(th)])
    t, tir = refract(d, np.array([0.0, 0.0, -1.0]), n_i, n_f)
    return t, bool(np.asarray(tir).ravel()[0])


def suite_snell(cases: int = 100_000, seed: int = 0) -> dict:
    t, tir = _snell_angle(30.0, 1.0, 1.5)
    theta_f = math.degrees(math.asin(math.hypot(t[0], t[1])))
    _, tir_60 = _snell_angle(60.0, 1.5, 1.0)
    _, tir_30 = _snell_angle(30.0, 1.0, 1.5)

    rng = np.random.default_rng(seed)
    d = rng.normal(size=(cases, 3))
    d /= np.linalg.norm(d, axis=1)[:, None]
    nrm = rng.normal(size=(cases, 3))
    nrm /= np.linalg.norm(nrm, axis=1)[:, None]
    n_i = rng.uniform(1.0, 2.0, cases)
    n_f = rng.uniform(1.0, 2.0, cases)
    t, tir = refract(d, nrm, n_i, n_f)
    ok = ~tir
    resid = n_i[ok, None] * np.cross(d[ok], nrm[ok]) - n_f[ok, None] * np.cross(t[ok], nrm[ok])
    worst = float(np.abs(resid).max())
    checks = [
        _check("theta_f_deg", theta_f, 19.4712, abs(theta_f - 19.4712) < 5e-5),
        _check("tir_1.5_to_1.0_at_60deg", tir_60, True, tir_60),
        _check("no_tir_1.0_to_1.5_at_30deg", not tir_30, True, not tir_30),
        _check("tangential_invariant_max", worst, 1e-12, worst < 1e-12),
    ]
    return {"suite": "snell", "checks": checks, "random_cases": cases, "tir_cases": int(tir.sum())}


def _gaussian_ray(h: float, length: float, field):
    steps = int(round(length / h))
    R = np.array([[0.3, 0.0, -3.0]])
    n, _, _ = field.sample(R)
    T = n[:, None] * np.array([[0.0, 0.0, 1.0]])
    for _ in range(steps):
        R, T = rk4_step(R, T, field, h)
    return R[0], T[0]


def suite_rk4_convergence(h: float = 0.2, length: float = 6.0, levels: int = 3) -> dict:
    """Fixed-length integration at h, h/2, h/4 through ``n = 1 + 0.01 exp(-r^2)``."""
    field = GaussianIndexField(1.0, 0.01, 1.0, (0.0, 0.0, 0.0), (-10, -10, -10), (10, 10, 10))
    sols = [_gaussian_ray(h / 2**k, length, field) for k in range(levels + 2)]
    ref = sols[-1][0]
    table = [{"delta_xi": h / 2**k, "error": float(np.linalg.norm(sols[k][0] - ref))} for k in range(levels)]
    d1 = np.linalg.norm(sols[0][0] - sols[1][0])
    d2 = np.linalg.norm(sols[1][0] - sols[2][0])
    order = float(math.log2(d1 / d2))

    R = np.array([[0.3, 0.0, -3.0]])
    n, _, _ = field.sample(R)
    T = n[:, None] * np.array([[0.0, 0.0, 1.0]])
    drift = 0.0
    for _ in range(1000):
        R, T = rk4_step(R, T, field, 0.006)
        n, _, _ = field.sample(R)
        drift = max(drift, abs(float(np.linalg.norm(T[0]) / n[0]) - 1.0))
    checks = [
        _check("richardson_order", order, 3.5, order >= 3.5),
        _check("eikonal_drift_1000_steps", drift, 1e-6, drift < 1e-6),
    ]
    return {"suite": "rk4-convergence", "checks": checks, "table": table}


def suite_lens_focus(R: float = 0.1, thickness: float = 0.005, n_glass: float = 1.5, diameter: float = 0.04) -> dict:
    """Biconvex singlet: paraxial effective focal length and back focus, marginal focus sign."""
    lens = LensElement((0.0, 0.0, 0.0), R, -R, thickness, n_glass, diameter)
    # lensmaker with thickness term; R1 = R, R2 = -R
    power = (n_glass - 1.0) * (2.0 / R - (n_glass - 1.0) * thickness / (n_glass * R * R))
    f_lensmaker = 1.0 / power
    bfd = f_lensmaker * (1.0 - (n_glass - 1.0) * thickness / (n_glass * R))
    back_vertex = thickness

    def trace(height):
        o, d, st = lens.propagate(np.array([[height, 0.0, -0.05]]), np.array([[0.0, 0.0, 1.0]]))
        if st[0] != 0:
            raise RuntimeError(f"ray at height {height} was blocked by the lens")
        return o, d

    h = 1e-5
    o, d = trace(h)
    efl = h / -(d[0, 0] / d[0, 2])
    paraxial = float(axis_crossing(o, d)[0]) - back_vertex
    marginal = float(axis_crossing(*trace(0.9 * diameter / 2))[0]) - back_vertex
    err = abs(efl - f_lensmaker) / f_lensmaker
    checks = [
        _check("efl_vs_lensmaker_rel", err, 0.02, err < 0.02),
        _check("back_focal_distance_error_m", abs(paraxial - bfd), 1e-6, abs(paraxial - bfd) < 1e-6),
        _check("marginal_focus_shorter", marginal < paraxial, True, marginal < paraxial),
    ]
    return {"suite": "lens-focus", "checks": checks, "efl_m": efl, "lensmaker_f_m": f_lensmaker,
            "paraxial_bfd_m": paraxial, "marginal_bfd_m": marginal}


def suite_energy(spots: int = 200, seed: int = 0) -> dict:
    sensor = SensorModel.on_axis(0.0, 64, 64, 10e-6)
    d_tau = diffraction_diameter(presets.F_NUMBER, presets.MAGNIFICATION, 500e-9)
    rng = np.random.default_rng(seed)
    worst_energy = 0.0
    worst_centroid = 0.0
    rows, cols = np.mgrid[0:64, 0:64] + 0.5
    for _ in range(spots):
        uv = rng.uniform(-100e-6, 100e-6, 2)
        e = rng.uniform(0.1, 10.0)
        img = accumulate_spot(sensor.blank(), uv[None], d_tau, e, sensor)
        total = img.sum()
        worst_energy = max(worst_energy, abs(total - e) / e)
        c = np.array([(img * cols).sum(), (img * rows).sum()]) / total
        worst_centroid = max(worst_centroid, float(np.abs(c - sensor.to_pixels(uv)).max()))
    checks = [
        _check("energy_rel_error", worst_energy, 1e-6, worst_energy < 1e-6),
        _check("centroid_error_px", worst_centroid, 1e-3, worst_centroid < 1e-3),
    ]
    return {"suite": "energy", "checks": checks, "d_tau_m": d_tau, "spots": spots}


def eq9_displacement_px(gradient: float = 10.0, L_z: float = 0.01) -> float:
    """Small-angle BOS displacement of the reference layout in pixels."""
    n0 = 1.0 + K_AIR * 1.225
    return presets.MAGNIFICATION * presets.Z_D * K_AIR / n0 * gradient * L_z / 10e-6


def suite_bos_uniform(dots: int = 200, rays: int = 10_000, seed: int = 0, threads: int = 1) -> dict:
    cfg = presets.reference_layout(presets.linear_density(), rays=rays, dots=dots, seed=seed, run={"threads": threads})
    res = bos_run(cfg, write=False)
    disp = res.scattered.displacements[res.scattered.mask] / 10e-6
    expected = eq9_displacement_px()
    mean = float(disp[:, 0].mean())
    rel = abs(abs(mean) - expected) / expected
    consistent = bool(np.all(np.sign(disp[:, 0]) == np.sign(mean)))
    checks = [
        _check("mean_displacement_rel_error", rel, 0.05, rel < 0.05),
        _check("sign_consistent", consistent, True, consistent),
    ]
    return {"suite": "bos-uniform", "checks": checks, "mean_dx_px": mean, "expected_px": expected,
            "metrics": res.metrics}


def suite_bos_blob(rays: int = 2000, seed: int = 0, threads: int = 1) -> dict:
    cfg = presets.reference_layout(presets.gaussian_density(), rays=rays, seed=seed, run={"threads": threads})
    m = bos_run(cfg, write=False).metrics
    checks = [
        _check("pearson_correlation", m["pearson_correlation"], 0.95, m["pearson_correlation"] > 0.95),
        _check("traced_peak_le_theory_peak_px", m["peak_b_px"], m["peak_a_px"], m["peak_b_px"] <= m["peak_a_px"]),
    ]
    return {"suite": "bos-blob", "checks": checks, "metrics": m}


SUITES = {
    "snell": suite_snell,
    "rk4-convergence": suite_rk4_convergence,
    "lens-focus": suite_lens_focus,
    "energy": suite_energy,
    "bos-uniform": suite_bos_uniform,
    "bos-blob": suite_bos_blob,
}


def validate(suite: str, **kwargs) -> dict:
    if suite not in SUITES:
        raise KeyError(f"unknown suite {suite!r}; choose from {', '.join(SUITES)}")
    t0 = time.perf_counter()
    result = SUITES[suite](**kwargs)
    result["runtime"] = time.perf_counter() - t0
    result["passed"] = all(c["passed"] for c in result["checks"])
    return result
