"""Ray-traced synthetic BOS/PIV image generation.

Light from dot patterns or particles is bent through gradient-index density
volumes, passed through an optical train and deposited on a virtual sensor as
diffraction-limited spots.  The ``bos`` module compares ray-traced dot
displacements against small-angle BOS theory.
"""

from . import bos, grin, optics, raygen, scene, sensor
from .engine import bos_run, build_experiment, load_config, render, trace_debug
from .status import RayStatus

__version__ = "0.1.0"

__all__ = [
    "RayStatus",
    "bos",
    "bos_run",
    "build_experiment",
    "grin",
    "load_config",
    "optics",
    "raygen",
    "render",
    "scene",
    "sensor",
    "trace_debug",
]
