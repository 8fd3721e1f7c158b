"""Rendering and BOS runs over chunks of sources.

Sources are split into fixed-size chunks whose composition depends only on
the config, never on the worker count.  Each chunk is traced into private
buffers; in deterministic mode the buffers are summed in chunk order, which
makes the output bit-identical for any number of workers.
"""

from __future__ import annotations

import csv
import json
import logging
import multiprocessing
import time
from collections import Counter
from concurrent.futures import FIRST_COMPLETED, ProcessPoolExecutor, ThreadPoolExecutor, wait
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..bos import (
    ScatteredDisplacements,
    compare_fields,
    grid_displacements,
    measure_dot_displacements,
    theoretical_displacement,
    write_displacement_csv,
    write_metrics_csv,
)
from ..grin import trace_through_volume
from ..optics import propagate_chain
from ..raygen import RayBundle, emit_rays, ray_rng, sample_aperture_points
from ..sensor import accumulate_spot, gain_for_peak, intersect_sensor, quantize, write_pgm
from ..status import BLOCKED_CODES, LOST_CODES, RayStatus
from .config import Experiment, build_experiment

log = logging.getLogger(__name__)


@dataclass
class RunReport:
    emitted: int = 0
    blocked: dict = field(default_factory=dict)
    lost: int = 0
    landed: int = 0
    wall_time: float = 0.0
    config_hash: str = ""
    info: dict = field(default_factory=dict)

    def add_status(self, status: np.ndarray) -> None:
        counts = Counter(np.asarray(status).tolist())
        self.emitted += len(status)
        self.landed += counts.get(RayStatus.OK, 0)
        self.lost += sum(counts.get(c, 0) for c in LOST_CODES)
        for code in BLOCKED_CODES:
            if counts.get(code):
                key = RayStatus(code).label
                self.blocked[key] = self.blocked.get(key, 0) + counts[code]

    def merge(self, other: RunReport) -> None:
        self.emitted += other.emitted
        self.landed += other.landed
        self.lost += other.lost
        for k, v in other.blocked.items():
            self.blocked[k] = self.blocked.get(k, 0) + v

    @property
    def balanced(self) -> bool:
        return self.emitted == sum(self.blocked.values()) + self.lost + self.landed

    def to_dict(self) -> dict:
        return asdict(self)

    def write(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True, default=float))


# ---------------------------------------------------------------------------
# per-source tracing


def source_bundle(exp: Experiment, index: int, source=None) -> RayBundle:
    """Ray bundle of source ``index``, keyed by ``(seed, index)``."""
    center, radius, axis = exp.entrance
    rng = ray_rng(exp.bundle.seed, index)
    pts = sample_aperture_points(center, radius, exp.bundle, rng=rng, axis=axis)
    src = exp.sources[index] if source is None else source
    return emit_rays(src, pts, exp.wavelength)


def trace_bundle(exp: Experiment, rays: RayBundle, with_field: bool = True):
    """Volume -> optics -> sensor.  Returns ``(uv, status)``."""
    status = np.zeros(len(rays), dtype=np.int8)
    if with_field and exp.field is not None:
        rays, status = trace_through_volume(rays, exp.field, exp.step)
    live = np.flatnonzero(status == RayStatus.OK)
    o, d, s_optics = propagate_chain(rays.origins[live], rays.directions[live], exp.elements)
    status[live] = s_optics
    uv = np.full((len(rays), 2), np.nan)
    ok = live[s_optics == RayStatus.OK]
    uv_ok, hit = intersect_sensor(o[s_optics == RayStatus.OK], d[s_optics == RayStatus.OK], exp.sensor)
    uv[ok[hit]] = uv_ok[hit]
    status[ok[~hit]] = RayStatus.SENSOR_MISS
    return uv, status


@dataclass
class ChunkResult:
    images: dict
    reports: dict
    hits: dict  # variant -> list of per-source (k, 2) arrays


def _trace_chunk(exp: Experiment, indices, variants, want_image: bool, want_hits: bool) -> ChunkResult:
    bundles = [source_bundle(exp, int(i)) for i in indices]
    sizes = [len(b) for b in bundles]
    rays = RayBundle(
        np.concatenate([b.origins for b in bundles]),
        np.concatenate([b.directions for b in bundles]),
        np.concatenate([b.radiance for b in bundles]),
        exp.wavelength,
    )
    splits = np.cumsum(sizes)[:-1]
    result = ChunkResult({}, {}, {})
    for variant in variants:
        uv, status = trace_bundle(exp, rays, with_field=(variant == "grad"))
        report = RunReport()
        report.add_status(status)
        result.reports[variant] = report
        landed = status == RayStatus.OK
        if want_image:
            img = exp.sensor.blank()
            accumulate_spot(img, uv[landed], exp.d_tau, rays.radiance[landed], exp.sensor)
            result.images[variant] = img
        if want_hits:
            result.hits[variant] = [u[l] for u, l in zip(np.split(uv, splits), np.split(landed, splits))]
    return result


_WORKER_EXP: Experiment | None = None


def _init_worker(exp):
    global _WORKER_EXP
    _WORKER_EXP = exp


def _worker(args):
    return _trace_chunk(_WORKER_EXP, *args)


def _map_chunks(exp: Experiment, chunks, variants, want_image, want_hits):
    """Yield chunk results: in chunk order when deterministic, else as completed."""
    workers = int(exp.run["threads"])
    deterministic = bool(exp.run["deterministic"])
    if workers == 1:
        for idx in chunks:
            yield _trace_chunk(exp, idx, variants, want_image, want_hits)
        return
    if exp.run["executor"] == "process":
        pool = ProcessPoolExecutor(workers, mp_context=multiprocessing.get_context("fork"),
                                   initializer=_init_worker, initargs=(exp,))
        submit = lambda idx: pool.submit(_worker, (idx, variants, want_image, want_hits))  # noqa: E731
    else:
        pool = ThreadPoolExecutor(workers)
        submit = lambda idx: pool.submit(_trace_chunk, exp, idx, variants, want_image, want_hits)  # noqa: E731
    window = 2 * workers
    with pool:
        pending = []
        it = iter(chunks)
        for idx in it:
            pending.append(submit(idx))
            if len(pending) >= window:
                break
        while pending:
            if deterministic:
                fut = pending.pop(0)
                res = fut.result()
            else:
                done, _ = wait(pending, return_when=FIRST_COMPLETED)
                fut = done.pop()
                pending.remove(fut)
                res = fut.result()
            nxt = next(it, None)
            if nxt is not None:
                pending.append(submit(nxt))
            yield res


def _chunks(n: int, size: int):
    return [np.arange(s, min(s + size, n)) for s in range(0, n, size)]


def _run(exp: Experiment, variants, want_image: bool, want_hits: bool):
    images = {v: exp.sensor.blank() for v in variants} if want_image else {}
    reports = {v: RunReport(config_hash=exp.hash) for v in variants}
    scattered = []
    chunks = _chunks(len(exp.sources), int(exp.run["chunk_sources"]))
    for res in _map_chunks(exp, chunks, variants, want_image, want_hits):
        for v in variants:
            reports[v].merge(res.reports[v])
            if want_image:
                images[v] += res.images[v]
        if want_hits:
            scattered.append(measure_dot_displacements(res.hits["ref"], res.hits["grad"]))
    return images, reports, scattered


def calibrate_gain(exp: Experiment, fraction: float = 0.9) -> float:
    """Gain that puts a single in-focus reference dot at ``fraction`` of full scale.

    The reference dot is placed so that its image centre falls on a pixel
    centre, which maximises the peak.
    """
    mx, my = exp.magnification
    half = 0.5 * exp.sensor.pitch
    src = np.array([half / mx, half / my, 0.0])
    rays = source_bundle(exp, 0, source=src)
    uv, status = trace_bundle(exp, rays, with_field=False)
    ok = status == RayStatus.OK
    img = exp.sensor.blank()
    accumulate_spot(img, uv[ok], exp.d_tau, rays.radiance[ok], exp.sensor)
    return gain_for_peak(float(img.max()), exp.sensor.bit_depth, fraction)


def _resolve_gain(exp: Experiment) -> float:
    gain = exp.config["sensor"].get("gain", "auto")
    if gain == "auto":
        return calibrate_gain(exp)
    gain = float(gain)
    if not gain > 0:
        raise ValueError("sensor gain must be positive")
    return gain


def _geometry_info(exp: Experiment) -> dict:
    return {
        "sources": int(len(exp.sources)),
        "rays_per_source": exp.bundle.rays_per_source,
        "magnification": list(exp.magnification),
        "sensor_distance": float(exp.sensor.center[2] - exp.geometry.lens_z),
        "lens_z": exp.geometry.lens_z,
        "d_tau": exp.d_tau,
        "threads": int(exp.run["threads"]),
        "deterministic": bool(exp.run["deterministic"]),
    }


def _prepare(config_or_exp) -> Experiment:
    return config_or_exp if isinstance(config_or_exp, Experiment) else build_experiment(config_or_exp)


def render(config, out_dir=None):
    """Render the configured scene (through the density field, if any).

    Writes ``image.pgm`` and ``report.json`` to ``out_dir`` (default
    ``run.out``) and returns ``(counts, report)``.
    """
    exp = _prepare(config)
    t0 = time.perf_counter()
    images, reports, _ = _run(exp, ["grad"], want_image=True, want_hits=False)
    gain = _resolve_gain(exp)
    counts = quantize(images["grad"], exp.sensor.bit_depth, gain)
    report = reports["grad"]
    report.wall_time = time.perf_counter() - t0
    report.info = _geometry_info(exp) | {"gain": gain, "peak_value": float(images["grad"].max())}
    out = Path(out_dir or exp.run["out"])
    out.mkdir(parents=True, exist_ok=True)
    write_pgm(out / "image.pgm", counts, maxval=exp.sensor.full_scale)
    report.write(out / "report.json")
    log.info("rendered %d rays (%d landed) in %.2fs", report.emitted, report.landed, report.wall_time)
    return counts, report


def theory_field(exp: Experiment, spec=None, samples: int = 64):
    """Small-angle BOS displacement on the sensor grid.

    Each grid node is mapped back to the target plane through the signed
    magnification; the density gradient is averaged along the chief ray from
    that target point to the entrance centre.
    """
    spec = spec or exp.grid_spec()
    mx, my = exp.magnification
    U, V = np.meshgrid(spec.x, spec.y)
    target = np.column_stack([U.ravel() / mx, V.ravel() / my, np.zeros(U.size)])
    center, _, _ = exp.entrance
    d = center - target
    d /= np.linalg.norm(d, axis=1)[:, None]
    lo, hi = exp.field.bounds
    z = np.linspace(lo[2], hi[2], samples + 1)
    z = 0.5 * (z[1:] + z[:-1])
    grad = np.zeros((len(target), 2))
    for zi in z:
        p = target + ((zi - target[:, 2]) / d[:, 2])[:, None] * d
        _, g, _ = exp.field.sample(p)
        grad += g[:, :2]
    grad_rho = (grad / samples / exp.K).reshape(U.shape + (2,))
    th = theoretical_displacement(spec.x, spec.y, grad_rho, exp.bos_params())
    # apparent object shift is opposite to the deflection; the sign of the
    # magnification carries it onto the sensor axes
    th.dx *= -np.sign(mx)
    th.dy *= -np.sign(my)
    return th


@dataclass
class BosResult:
    scattered: ScatteredDisplacements
    measured: object
    theory: object
    metrics: dict
    reports: dict
    images: dict


def bos_run(config, out_dir=None, write: bool = True) -> BosResult:
    """Trace every dot with and without the density field and compare with theory."""
    exp = _prepare(config)
    if exp.field is None:
        raise ValueError("bos_run needs scene.density")
    t0 = time.perf_counter()
    want_image = bool(exp.run.get("write_images", True)) and write
    images, reports, parts = _run(exp, ["ref", "grad"], want_image=want_image, want_hits=True)
    scattered = ScatteredDisplacements.concatenate(parts)
    spec = exp.grid_spec()
    measured = grid_displacements(scattered, spec)
    theory = theory_field(exp, spec)
    metrics = compare_fields(theory, measured)
    pitch = exp.sensor.pitch
    metrics |= {k + "_px": metrics[k] / pitch for k in ("rms_error", "peak_abs_error", "peak_a", "peak_b")}
    valid = scattered.mask
    metrics["dots"] = int(valid.sum())
    metrics["mean_dx_px"] = float(scattered.displacements[valid, 0].mean() / pitch)
    metrics["mean_dy_px"] = float(scattered.displacements[valid, 1].mean() / pitch)
    metrics["config_hash"] = exp.hash
    wall = time.perf_counter() - t0
    for r in reports.values():
        r.wall_time = wall
        r.info = _geometry_info(exp)
    if write:
        out = Path(out_dir or exp.run["out"])
        out.mkdir(parents=True, exist_ok=True)
        if want_image:
            gain = _resolve_gain(exp)
            for v, img in images.items():
                write_pgm(out / f"{v}.pgm", quantize(img, exp.sensor.bit_depth, gain), maxval=exp.sensor.full_scale)
        write_displacement_csv(out / "measured.csv", measured)
        write_displacement_csv(out / "theory.csv", theory)
        write_metrics_csv(out / "metrics.csv", metrics)
        with open(out / "dots.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["u", "v", "du", "dv", "mask"])
            for p, dsp, m in zip(scattered.positions, scattered.displacements, scattered.mask):
                w.writerow([repr(float(p[0])), repr(float(p[1])), repr(float(dsp[0])), repr(float(dsp[1])), int(m)])
        Path(out / "report.json").write_text(json.dumps(
            {k: r.to_dict() for k, r in reports.items()}, indent=2, sort_keys=True, default=float))
    return BosResult(scattered, measured, theory, metrics, reports, images)


def trace_debug(config, dot: int, ray: int, with_field: bool = True) -> list[dict]:
    """Step-by-step record of one ray: emission, volume steps, optics exit, sensor hit."""
    exp = _prepare(config)
    if not 0 <= dot < len(exp.sources):
        raise IndexError(f"dot index {dot} out of range (0..{len(exp.sources) - 1})")
    bundle = source_bundle(exp, dot)
    if not 0 <= ray < len(bundle):
        raise IndexError(f"ray index {ray} out of range (0..{len(bundle) - 1})")
    rays = RayBundle(bundle.origins[ray:ray + 1], bundle.directions[ray:ray + 1],
                     bundle.radiance[ray:ray + 1], bundle.wavelength)
    rows = [_row("source", None, rays.origins[0], rays.directions[0])]
    status = np.zeros(1, dtype=np.int8)
    if with_field and exp.field is not None:
        history = []
        rays, status = trace_through_volume(rays, exp.field, exp.step, history=history)
        for k, (xi, R, T) in enumerate(history):
            if len(xi):
                stage = "entry" if k == 0 else "step"
                rows.append(_row(stage, xi[0], R[0], T[0]))
        if len(history) > 1:
            rows[-1]["stage"] = "exit"
    if status[0] == RayStatus.OK:
        o, d, s = propagate_chain(rays.origins, rays.directions, exp.elements)
        status[0] = s[0]
        if s[0] == RayStatus.OK:
            rows.append(_row("optics", None, o[0], d[0]))
            uv, hit = intersect_sensor(o, d, exp.sensor)
            if hit[0]:
                t = ((exp.sensor.center - o[0]) @ exp.sensor.normal) / (d[0] @ exp.sensor.normal)
                rows.append(_row("sensor", None, o[0] + t * d[0], d[0]))
            else:
                status[0] = RayStatus.SENSOR_MISS
    rows.append({"stage": "status:" + RayStatus(int(status[0])).label})
    return rows


def _row(stage, xi, R, T) -> dict:
    return {"stage": stage, "xi": "" if xi is None else float(xi),
            "x": float(R[0]), "y": float(R[1]), "z": float(R[2]),
            "tx": float(T[0]), "ty": float(T[1]), "tz": float(T[2])}


TRACE_COLUMNS = ["stage", "xi", "x", "y", "z", "tx", "ty", "tz"]
