"""Camera sensor: plane intersection, diffraction spots, quantization, PGM output.

Sensor-plane coordinates ``(u, v)`` are metres from the sensor centre along
its in-plane basis.  Pixel ``(row, col)`` covers
``u / pitch + W / 2 in [col, col + 1)`` and ``v / pitch + H / 2 in [row, row + 1)``.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

import numpy as np
from scipy.special import erf

VALID_BIT_DEPTHS = (8, 10, 12, 16)

# Half-width of the spot support in Gaussian sigmas; the truncated 2-D energy
# fraction is below 1e-7 at 5.5 sigma.
SUPPORT_SIGMAS = 5.5

_SQRT2 = math.sqrt(2.0)


@dataclass(frozen=True, eq=False)
class SensorModel:
    center: np.ndarray
    normal: np.ndarray
    u_axis: np.ndarray
    v_axis: np.ndarray
    width: int
    height: int
    pitch: float
    bit_depth: int = 16
    gain: float = 1.0

    def __post_init__(self):
        if not self.pitch > 0:
            raise ValueError("pixel pitch must be positive")
        if self.bit_depth not in VALID_BIT_DEPTHS:
            raise ValueError(f"bit depth must be one of {VALID_BIT_DEPTHS}, got {self.bit_depth}")
        if self.width < 1 or self.height < 1:
            raise ValueError("sensor resolution must be positive")
        for name in ("center", "normal", "u_axis", "v_axis"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))

    @classmethod
    def on_axis(cls, z: float, width: int, height: int, pitch: float, bit_depth: int = 16, gain: float = 1.0):
        """Sensor normal to +z at ``z`` with ``u`` along +x and ``v`` along +y."""
        return cls(np.array([0.0, 0.0, z]), np.array([0.0, 0.0, 1.0]), np.array([1.0, 0.0, 0.0]),
                   np.array([0.0, 1.0, 0.0]), width, height, pitch, bit_depth, gain)

    @property
    def full_scale(self) -> int:
        return 2**self.bit_depth - 1

    @property
    def size(self) -> tuple[float, float]:
        return self.width * self.pitch, self.height * self.pitch

    def blank(self) -> np.ndarray:
        """Zeroed float64 accumulation buffer, shape ``(height, width)``."""
        return np.zeros((self.height, self.width))

    def to_pixels(self, uv) -> np.ndarray:
        """Continuous ``(col, row)`` coordinates of sensor-plane points."""
        uv = np.asarray(uv, dtype=float)
        return uv / self.pitch + np.array([self.width / 2, self.height / 2])


def intersect_sensor(origins, directions, sensor: SensorModel):
    """Forward line-plane intersection; returns ``(uv, hit)``."""
    single = np.asarray(origins).ndim == 1
    o = np.atleast_2d(np.asarray(origins, dtype=float))
    d = np.atleast_2d(np.asarray(directions, dtype=float))
    denom = d @ sensor.normal
    with np.errstate(divide="ignore", invalid="ignore"):
        t = ((sensor.center - o) @ sensor.normal) / denom
    hit = (np.abs(denom) > 1e-12) & (t > 0)
    p = o + np.where(hit, t, 0.0)[:, None] * d - sensor.center
    uv = np.column_stack([p @ sensor.u_axis, p @ sensor.v_axis])
    uv[~hit] = np.nan
    if single:
        return uv[0], bool(hit[0])
    return uv, hit


def diffraction_diameter(f_number: float, magnification: float, wavelength: float, pi_factor: bool = True) -> float:
    """Diffraction spot diameter ``2.44 (pi) f# (M + 1) lambda``.

    ``pi_factor=False`` drops the factor of pi, giving the usual
    ``2.44 f# (M + 1) lambda`` Airy-disk form.
    """
    if not (f_number > 0 and magnification >= 0 and wavelength > 0):
        raise ValueError("f-number and wavelength must be positive, magnification non-negative")
    d = 2.44 * f_number * (magnification + 1.0) * wavelength
    return d * math.pi if pi_factor else d


def _pixel_weights(center_px: np.ndarray, sigma_px: float, half: float):
    start = np.floor(center_px - half).astype(np.int64)
    k = int(math.ceil(2 * half)) + 1
    edges = start[:, None] + np.arange(k + 1)
    cdf = erf((edges - center_px[:, None]) / (_SQRT2 * sigma_px))
    return start, 0.5 * np.diff(cdf, axis=1)


def accumulate_spot(img: np.ndarray, centers, d_tau: float, energy, sensor: SensorModel,
                    support_sigmas: float = SUPPORT_SIGMAS, chunk: int = 16384,
                    backend: str = "compiled") -> np.ndarray:
    """Add pixel-integrated Gaussian spots to ``img`` in place.

    Each spot has ``sigma = d_tau / 4`` (``d_tau`` is the 1/e^2 diameter) and is
    integrated over every pixel of its support window with erf differences.
    Parts of a spot that fall outside the frame are dropped.  ``backend``
    picks the compiled per-spot loop or the vectorised numpy reference.
    """
    if backend not in ("compiled", "numpy"):
        raise ValueError(f"unknown backend {backend!r}")
    centers = np.atleast_2d(np.asarray(centers, dtype=float))
    energy = np.broadcast_to(np.asarray(energy, dtype=float), (len(centers),))
    if np.any(energy < 0):
        raise ValueError("spot energy must be non-negative")
    keep = np.isfinite(centers).all(axis=1)
    centers, energy = centers[keep], energy[keep]
    sigma_px = d_tau / 4.0 / sensor.pitch
    half = support_sigmas * sigma_px
    if backend == "compiled" and img.dtype == np.float64 and img.flags.c_contiguous:
        from . import _kernels

        _kernels.deposit_spots(img, sensor.to_pixels(centers), np.ascontiguousarray(energy), sigma_px, half)
        return img
    H, W = img.shape
    flat = img.reshape(-1)
    for lo in range(0, len(centers), chunk):
        px = sensor.to_pixels(centers[lo:lo + chunk])
        e = energy[lo:lo + chunk]
        x0, wx = _pixel_weights(px[:, 0], sigma_px, half)
        y0, wy = _pixel_weights(px[:, 1], sigma_px, half)
        k = wx.shape[1]
        cols = x0[:, None] + np.arange(k)
        rows = y0[:, None] + np.arange(k)
        vals = (e[:, None, None] * wy[:, :, None]) * wx[:, None, :]
        valid = ((rows >= 0) & (rows < H))[:, :, None] & ((cols >= 0) & (cols < W))[:, None, :]
        idx = rows[:, :, None] * W + cols[:, None, :]
        flat += np.bincount(idx[valid], weights=vals[valid], minlength=H * W)
    return img


def quantize(img: np.ndarray, bit_depth: int = 16, gain: float = 1.0) -> np.ndarray:
    """``round(gain * value)`` clamped to ``[0, 2**bit_depth - 1]``."""
    if not gain > 0:
        raise ValueError("gain must be positive")
    if bit_depth not in VALID_BIT_DEPTHS:
        raise ValueError(f"bit depth must be one of {VALID_BIT_DEPTHS}")
    counts = np.clip(np.rint(gain * np.asarray(img, dtype=float)), 0, 2**bit_depth - 1)
    return counts.astype(np.uint8 if bit_depth <= 8 else np.uint16)


def gain_for_peak(peak_value: float, bit_depth: int = 16, fraction: float = 0.9) -> float:
    """Gain that maps ``peak_value`` to ``fraction`` of full scale."""
    if not peak_value > 0:
        raise ValueError("reference peak must be positive")
    return fraction * (2**bit_depth - 1) / peak_value


def write_pgm(path, counts: np.ndarray, maxval: int | None = None, plain: bool = False) -> None:
    """Write a binary (P5) or plain (P2) PGM.

    Samples wider than 8 bits are stored big-endian, as the format requires.
    """
    counts = np.asarray(counts)
    if counts.ndim != 2:
        raise ValueError("PGM images are 2-D")
    if maxval is None:
        maxval = 255 if counts.dtype == np.uint8 else 65535
    if not 0 < maxval < 65536:
        raise ValueError("PGM maxval must be in 1..65535")
    h, w = counts.shape
    if plain:
        lines = [f"P2\n{w} {h}\n{maxval}\n"]
        lines += [" ".join(str(int(v)) for v in row) + "\n" for row in counts]
        with open(path, "w", encoding="ascii") as fh:
            fh.writelines(lines)
        return
    dtype = "u1" if maxval < 256 else ">u2"
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n{maxval}\n".encode("ascii"))
        fh.write(np.asarray(counts, dtype=dtype).tobytes())


def read_pgm(path) -> np.ndarray:
    """Read a P5 or P2 PGM into a ``(height, width)`` integer array."""
    with open(path, "rb") as fh:
        buf = fh.read()
    m = re.match(rb"(P[25])\s+(?:#.*\s+)*(\d+)\s+(?:#.*\s+)*(\d+)\s+(?:#.*\s+)*(\d+)\s", buf)
    if m is None:
        raise ValueError(f"{path}: not a PGM file")
    magic, w, h, maxval = m.group(1), int(m.group(2)), int(m.group(3)), int(m.group(4))
    if magic == b"P2":
        vals = np.array(buf[m.end():].split(), dtype=np.int64)
        return vals.reshape(h, w).astype(np.uint16 if maxval > 255 else np.uint8)
    dtype = np.dtype("u1") if maxval < 256 else np.dtype(">u2")
    data = np.frombuffer(buf, dtype=dtype, count=w * h, offset=m.end())
    return data.reshape(h, w).astype(dtype.newbyteorder("="))
