"""Progress-dependent weights for the collision and alignment terms."""

from __future__ import annotations

from dataclasses import dataclass

from .errors import ConfigError


@dataclass
class ScheduleConfig:
    t_start: int = 500
    t_end: int = 4000
    lambda_col_min: float = 0.05
    lambda_cf_max: float = 0.25

    def __post_init__(self):
        if self.t_start >= self.t_end:
            raise ConfigError(f"t_start ({self.t_start}) must be < t_end ({self.t_end})")
        if not 0 <= self.lambda_col_min <= 1:
            raise ConfigError("lambda_col_min must lie in [0, 1]")
        if self.lambda_cf_max < 0:
            raise ConfigError("lambda_cf_max must be >= 0")


def progress(t: int, config: ScheduleConfig) -> float:
    """Fraction of the rebalancing window elapsed at optimizer step ``t``, clipped to [0, 1]."""
    if config.t_start >= config.t_end:
        raise ConfigError("t_start must be < t_end")
    if t < 0:
        raise ValueError("step must be >= 0")
    tau = (t - config.t_start) / (config.t_end - config.t_start)
    return min(max(tau, 0.0), 1.0)


def objective_weights(tau: float, config: ScheduleConfig) -> tuple[float, float]:
    """Collision weight decays linearly from 1 to its floor; alignment weight grows from 0."""
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"progress {tau} outside [0, 1]")
    lambda_col = 1.0 - (1.0 - config.lambda_col_min) * tau
    lambda_cf = config.lambda_cf_max * tau
    return lambda_col, lambda_cf
