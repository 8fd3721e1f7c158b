"""Experiment configuration: JSON tree -> ready-to-trace objects.

Layout along +z: the dot target (or particle volume) sits at ``z = 0``, the
density volume is centred at ``z = Z_D`` and the lens plane is at
``z = Z_D + Z_A``.  Optical element ``offset`` values are measured from the
lens plane; the sensor sits ``distance`` behind it (``"auto"`` = in focus on
the target plane).  Keys starting with ``_`` are comments and ignored.
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..bos import BosParams, GridSpec
from ..grin import StepParams
from ..optics import (
    Aperture,
    LensElement,
    Mirror,
    SphericalSurface,
    ThinLensIdeal,
    paraxial_image_distance,
    propagate_chain,
)
from ..raygen import BundleSpec
from ..scene import (
    K_AIR,
    RHO_AIR,
    DensityVolume,
    GriddedField,
    ParticleField,
    build_refractive_field,
    gaussian_slice,
    generate_dot_pattern,
    gladstone_dale,
    linear_slice,
    load_density_volume,
    stack_2d_slice,
)
from ..sensor import SensorModel, diffraction_diameter, intersect_sensor
from ..status import RayStatus

# Settings that never change traced results; excluded from the config hash.
_RUN_ONLY_KEYS = ("threads", "out", "executor")


class ConfigError(ValueError):
    pass


DEFAULTS = {
    "scene": {"source": "dots", "K": K_AIR, "density": None},
    "geometry": {"Z_D": 0.25, "Z_A": 0.73, "L_x": 0.032, "L_y": 0.032, "L_z": 0.01},
    "optics": [],
    "sensor": {
        "width": 384,
        "height": 384,
        "pitch": 10e-6,
        "bit_depth": 16,
        "gain": "auto",
        "distance": "auto",
        "wavelength": 500e-9,
        "diffraction_pi_factor": True,
    },
    "bundle": {"rays_per_source": 10_000, "sampling": "stratified", "seed": 0},
    "trace": {"delta_xi": None, "max_steps": 100_000},
    "run": {
        "threads": 1,
        "deterministic": True,
        "out": "out",
        "executor": "thread",
        "chunk_sources": 8,
        "write_images": True,
    },
    "bos": {"node_spacing_px": 8, "bin_size_px": 16},
}


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, val in override.items():
        if key.startswith("_"):
            continue
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


def with_defaults(config: dict) -> dict:
    return _merge(DEFAULTS, config)


def load_config(path) -> dict:
    """Read a JSON config; relative file references resolve against its directory."""
    path = Path(path)
    try:
        cfg = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    cfg.setdefault("_base_dir", str(path.resolve().parent))
    return cfg


def config_hash(config: dict) -> str:
    cfg = {k: v for k, v in config.items() if not k.startswith("_")}
    run = {k: v for k, v in cfg.get("run", {}).items() if k not in _RUN_ONLY_KEYS}
    cfg["run"] = run
    blob = json.dumps(cfg, sort_keys=True, default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass
class Geometry:
    Z_D: float
    Z_A: float
    L_x: float
    L_y: float
    L_z: float

    @property
    def lens_z(self) -> float:
        return self.Z_D + self.Z_A


@dataclass(eq=False)
class Experiment:
    config: dict
    geometry: Geometry
    sources: np.ndarray
    source_kind: str
    field: GriddedField | None
    n_ambient: float
    K: float
    elements: list
    sensor: SensorModel
    bundle: BundleSpec
    wavelength: float
    d_tau: float
    magnification: tuple[float, float]
    step: StepParams
    run: dict

    @property
    def hash(self) -> str:
        return config_hash(self.config)

    @property
    def entrance(self):
        return self.elements[0].entrance

    def bos_params(self) -> BosParams:
        M = 0.5 * (abs(self.magnification[0]) + abs(self.magnification[1]))
        return BosParams(M=M, Z_D=self.geometry.Z_D, K=self.K, n0=self.n_ambient, L_z=self.geometry.L_z)

    def grid_spec(self) -> GridSpec:
        b = self.config["bos"]
        pitch = self.sensor.pitch
        return GridSpec.regular(self.sensor.size, b["node_spacing_px"] * pitch, b["bin_size_px"] * pitch)


def _positive(section: dict, *keys):
    for key in keys:
        val = section.get(key)
        if not isinstance(val, (int, float)) or not val > 0:
            raise ConfigError(f"{key} must be a positive number, got {val!r}")


def _build_optics(items, lens_z: float):
    elements = []
    for i, item in enumerate(items):
        kind = item.get("type")
        z = lens_z + float(item.get("offset", 0.0))
        center = np.array([0.0, 0.0, z])
        axis = np.array([0.0, 0.0, 1.0])
        try:
            if kind == "aperture":
                if "radius" in item:
                    elements.append(Aperture(center, axis, item["radius"]))
                else:
                    elements.append(Aperture.from_f_number(center, axis, item["focal_length"], item["f_number"]))
            elif kind == "thin_lens":
                elements.append(ThinLensIdeal(center, axis, item["focal_length"], item["diameter"]))
            elif kind == "lens":
                R1 = float(item["R1"]) if item.get("R1") is not None else math.inf
                R2 = float(item["R2"]) if item.get("R2") is not None else math.inf
                t = float(item["thickness"])
                # offset locates the lens centre; the front vertex sits half a thickness upstream
                elements.append(LensElement(center - 0.5 * t * axis, R1, R2, t, item["n_glass"],
                                            item["diameter"], item.get("n_ambient", 1.0)))
            elif kind == "mirror":
                radius = float(item["radius"]) if item.get("radius") is not None else math.inf
                mirror_axis = item.get("axis", [0.0, 0.0, 1.0])
                elements.append(Mirror(SphericalSurface(center, radius, item["diameter"] / 2, axis=mirror_axis)))
            else:
                raise ConfigError(f"optics[{i}]: unknown element type {kind!r}")
        except KeyError as exc:
            raise ConfigError(f"optics[{i}] ({kind}): missing key {exc}") from exc
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"optics[{i}] ({kind}): {exc}") from exc
    return elements


def _build_volume(spec: dict, geom: Geometry, base_dir: Path) -> DensityVolume | None:
    if spec is None:
        return None
    kind = spec.get("type")
    center = (0.0, 0.0, geom.Z_D)
    if kind == "gvol":
        path = Path(spec["path"])
        if not path.is_absolute():
            path = base_dir / path
        if not path.exists():
            raise ConfigError(f"density volume {path} does not exist")
        vol = load_density_volume(path)
        if spec.get("center", False):
            vol = DensityVolume.centered(vol.rho, vol.spacing, center)
        return vol
    nx, ny, nz = spec.get("shape", [32, 32, 2])
    spacing = (geom.L_x / nx, geom.L_y / ny)
    dz = geom.L_z / nz
    rho0 = float(spec.get("rho0", spec.get("rho", RHO_AIR)))
    if kind == "uniform":
        slc = np.full((nx, ny), rho0)
    elif kind == "linear":
        slc = linear_slice((nx, ny), spacing, rho0, spec.get("gradient", [0.0, 0.0]))
    elif kind == "gaussian":
        slc = gaussian_slice((nx, ny), spacing, rho0, spec["amplitude"], spec["width"], spec.get("center", (0.0, 0.0)))
    else:
        raise ConfigError(f"unknown density type {kind!r}")
    try:
        return stack_2d_slice(slc, nz, dz, spacing, center)
    except ValueError as exc:
        raise ConfigError(f"density volume: {exc}") from exc


def _signed_magnification(elements, sensor: SensorModel, lens_z: float, delta: float = 1e-4):
    """Image-plane offset per unit object offset, along x and y, from traced rays."""
    center, radius, _ = elements[0].entrance
    out = []
    for axis in (0, 1):
        src = np.zeros(3)
        src[axis] = delta
        ring = np.array([[1, 0], [-1, 0], [0, 1], [0, -1]]) * 1e-3 * radius
        pts = center + np.column_stack([ring, np.zeros(4)])
        d = pts - src
        d /= np.linalg.norm(d, axis=1)[:, None]
        o, d, status = propagate_chain(np.tile(src, (4, 1)), d, elements)
        uv, hit = intersect_sensor(o, d, sensor)
        if not (np.all(status == RayStatus.OK) and hit.all()):
            raise ConfigError("could not determine magnification: paraxial rays blocked")
        out.append(float(uv[:, axis].mean()) / delta)
    return tuple(out)


def _sensor_distance(elements, lens_z: float) -> float:
    """Lens plane to in-focus image of the on-axis target point."""
    try:
        z = paraxial_image_distance(elements, np.zeros(3), np.array([0.0, 0.0, lens_z]))
    except ValueError as exc:
        raise ConfigError(f"cannot focus sensor: {exc}") from exc
    if not z > 0:
        raise ConfigError("optical train forms no real image of the target")
    return z


def build_experiment(config: dict) -> Experiment:
    """Validate ``config`` and construct the scene, optics and sensor."""
    cfg = with_defaults(config)
    base_dir = Path(config.get("_base_dir", "."))

    g = cfg["geometry"]
    _positive(g, "Z_D", "Z_A", "L_x", "L_y", "L_z")
    geom = Geometry(*(float(g[k]) for k in ("Z_D", "Z_A", "L_x", "L_y", "L_z")))

    if not cfg["optics"]:
        raise ConfigError("optics must list at least one element")
    elements = _build_optics(cfg["optics"], geom.lens_z)

    s = cfg["sensor"]
    _positive(s, "pitch", "wavelength")
    if s["distance"] == "auto":
        distance = _sensor_distance(elements, geom.lens_z)
    else:
        distance = float(s["distance"])
        if not distance > 0:
            raise ConfigError("sensor distance must be positive")
    sensor = SensorModel.on_axis(geom.lens_z + distance, int(s["width"]), int(s["height"]),
                                 float(s["pitch"]), int(s["bit_depth"]))
    magnification = _signed_magnification(elements, sensor, geom.lens_z)
    M = 0.5 * (abs(magnification[0]) + abs(magnification[1]))

    if "spot_diameter" in s:
        d_tau = float(s["spot_diameter"])
    else:
        f_number = s.get("f_number")
        if f_number is None:
            stops = [it for it in cfg["optics"] if it.get("type") == "aperture" and "f_number" in it]
            if not stops:
                raise ConfigError("sensor.f_number (or an aperture with f_number) is required")
            f_number = stops[0]["f_number"]
        M_d = M if s.get("magnification", "auto") == "auto" else float(s["magnification"])
        d_tau = diffraction_diameter(float(f_number), M_d, float(s["wavelength"]), bool(s["diffraction_pi_factor"]))

    sc = cfg["scene"]
    K = float(sc["K"])
    if not K > 0:
        raise ConfigError("Gladstone-Dale constant K must be positive")
    n_ambient = float(sc.get("n_ambient") or gladstone_dale(RHO_AIR, K))
    vol = _build_volume(sc.get("density"), geom, base_dir)
    field = build_refractive_field(vol, K, n_ambient) if vol is not None else None

    b = cfg["bundle"]
    try:
        bundle = BundleSpec(int(b["rays_per_source"]), b["sampling"], int(b["seed"]))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    kind = sc.get("source", "dots")
    if kind == "dots":
        d = sc.get("dots", {})
        extent = d.get("extent") or [w / M for w in sensor.size]
        try:
            pattern = generate_dot_pattern(
                extent, float(d.get("density", 20.0)), M, sensor.pitch, int(d.get("seed", bundle.seed)),
                dot_diameter=float(d.get("diameter", 0.0)), count=d.get("count"),
            )
        except ValueError as exc:
            raise ConfigError(f"dot pattern: {exc}") from exc
        sources = pattern.sources
    elif kind == "particles":
        p = sc.get("particles", {})
        if "positions" not in p:
            raise ConfigError("particles.positions is required")
        particles = ParticleField(p["positions"], p.get("diameters", 1e-6))
        sources = particles.sources
    else:
        raise ConfigError(f"scene.source must be 'dots' or 'particles', got {kind!r}")

    t = cfg["trace"]
    step = StepParams(t.get("delta_xi"), int(t.get("max_steps", 100_000)))

    run = cfg["run"]
    if int(run["threads"]) < 1:
        raise ConfigError("run.threads must be >= 1")
    if run["executor"] not in ("thread", "process"):
        raise ConfigError("run.executor must be 'thread' or 'process'")

    cfg["_base_dir"] = str(base_dir)
    return Experiment(
        config=cfg, geometry=geom, sources=sources, source_kind=kind, field=field,
        n_ambient=n_ambient, K=K, elements=elements, sensor=sensor, bundle=bundle,
        wavelength=float(s["wavelength"]), d_tau=d_tau, magnification=magnification,
        step=step, run=run,
    )
