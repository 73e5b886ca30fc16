from dataclasses import dataclass
from enum import Enum

from src.errors import ConfigurationError, RangeError


class ScheduleMode(str, Enum):
    CONSTANT = "constant"
    LINEAR = "linear"


@dataclass(frozen=True)
class SSLWeightSchedule:
    """Weight of the SSL term in multi-task training"""

    initial_weight: float = 1.0
    mode: ScheduleMode = ScheduleMode.CONSTANT
    final_weight: float = 0.0
    total_steps: int = 0

    def __post_init__(self):
        try:
            object.__setattr__(self, "mode", ScheduleMode(self.mode))
        except ValueError:
            raise ConfigurationError(f"schedule mode must be 'constant' or 'linear', got '{self.mode}'") from None
        if self.initial_weight < 0 or self.final_weight < 0:
            raise RangeError("SSL weights must be non-negative")
        if self.total_steps < 0:
            raise RangeError(f"total_steps must be >= 0, got {self.total_steps}")


def ssl_weight(schedule: SSLWeightSchedule, step: int) -> float:
    if not 0 <= step <= schedule.total_steps:
        raise RangeError(f"step {step} outside [0, {schedule.total_steps}]")
    if schedule.mode is ScheduleMode.CONSTANT or schedule.total_steps == 0:
        return schedule.initial_weight
    fraction = step / schedule.total_steps
    return schedule.initial_weight + (schedule.final_weight - schedule.initial_weight) * fraction
