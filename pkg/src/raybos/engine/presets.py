"""Ready-made experiment configs.

The reference BOS layout: f = 105 mm at f/11, magnification 0.12, 10 um
pixels, 20 dots per 32x32 px, a 32 x 32 x 10 mm density volume 0.25 m in
front of the target.  With an ideal 105 mm lens, M = 0.12 puts the target
0.98 m from the lens, so the volume-to-lens distance is 0.73 m.
"""

from __future__ import annotations

import copy

FOCAL_LENGTH = 0.105
F_NUMBER = 11.0
MAGNIFICATION = 0.12
Z_D = 0.25
OBJECT_DISTANCE = FOCAL_LENGTH * (1.0 + 1.0 / MAGNIFICATION)

REFERENCE_LAYOUT = {
    "scene": {
        "source": "dots",
        "dots": {"density": 20.0, "diameter": 1e-4},
        "K": 2.26e-4,
        "density": None,
    },
    "geometry": {"Z_D": Z_D, "Z_A": OBJECT_DISTANCE - Z_D, "L_x": 0.032, "L_y": 0.032, "L_z": 0.01},
    "optics": [
        {"type": "aperture", "offset": 0.0, "focal_length": FOCAL_LENGTH, "f_number": F_NUMBER},
        {"type": "thin_lens", "offset": 0.0, "focal_length": FOCAL_LENGTH, "diameter": 0.05},
    ],
    "sensor": {
        "width": 384,
        "height": 384,
        "pitch": 10e-6,
        "bit_depth": 16,
        "gain": "auto",
        "distance": "auto",
        "wavelength": 500e-9,
        "f_number": F_NUMBER,
        "diffraction_pi_factor": True,
    },
    "bundle": {"rays_per_source": 10_000, "sampling": "stratified", "seed": 0},
    "run": {"threads": 1, "deterministic": True, "chunk_sources": 8},
    "bos": {"node_spacing_px": 8, "bin_size_px": 16},
}


def reference_layout(density=None, *, rays: int | None = None, dots: int | None = None, seed: int | None = None,
           sensor_px: int | None = None, **sections) -> dict:
    """Deep copy of the reference-layout config with optional overrides.

    ``sections`` are merged one level deep, e.g. ``run={"threads": 4}``.
    """
    cfg = copy.deepcopy(REFERENCE_LAYOUT)
    cfg["scene"]["density"] = density
    if rays is not None:
        cfg["bundle"]["rays_per_source"] = rays
    if dots is not None:
        cfg["scene"]["dots"]["count"] = dots
    if seed is not None:
        cfg["bundle"]["seed"] = seed
    if sensor_px is not None:
        cfg["sensor"]["width"] = cfg["sensor"]["height"] = sensor_px
    for key, val in sections.items():
        if isinstance(val, dict) and isinstance(cfg.get(key), dict):
            cfg[key].update(val)
        else:
            cfg[key] = val
    return cfg


def uniform_density(rho: float = 1.225, shape=(32, 32, 2)) -> dict:
    return {"type": "uniform", "rho": rho, "shape": list(shape)}


def linear_density(gradient=(10.0, 0.0), rho0: float = 1.225, shape=(32, 32, 2)) -> dict:
    return {"type": "linear", "rho0": rho0, "gradient": list(gradient), "shape": list(shape)}


def gaussian_density(amplitude: float = 0.3, width: float = 0.004, rho0: float = 1.225, shape=(128, 128, 2)) -> dict:
    return {"type": "gaussian", "rho0": rho0, "amplitude": amplitude, "width": width, "shape": list(shape)}
