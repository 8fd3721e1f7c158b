"""Per-ray outcome codes shared by the tracing stages."""

from enum import IntEnum


class RayStatus(IntEnum):
    OK = 0
    BLOCKED_APERTURE = 1
    BLOCKED_MISS = 2
    BLOCKED_TIR = 3
    SENSOR_MISS = 4
    LOST = 5
    INVALID = 6

    @property
    def label(self) -> str:
        return self.name.lower()


BLOCKED_CODES = (
    RayStatus.BLOCKED_APERTURE,
    RayStatus.BLOCKED_MISS,
    RayStatus.BLOCKED_TIR,
    RayStatus.SENSOR_MISS,
)
LOST_CODES = (RayStatus.LOST, RayStatus.INVALID)
