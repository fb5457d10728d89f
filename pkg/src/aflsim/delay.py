"""Client delays, staleness draws and the delay-aware learning rate.

Two delay notions are kept apart on purpose:

* staleness ``tau_c`` -- an integer number of rounds; picks the snapshot a
  client starts from;
* execution delay -- real seconds; its per-round spread ``tau_t`` feeds the
  learning-rate schedule and the wall-clock / energy metrics.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Literal, Mapping

import numpy as np

from . import _rng

SCALE_LOW, SCALE_HIGH = 0.5, 1.5


@dataclass(frozen=True)
class DelayModel:
    mode: Literal["simulated", "wallclock"] = "simulated"
    base_mean: float = 1.0
    jitter: float = 0.2
    staleness_max: int = 2
    scales: Mapping[int, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.mode not in ("simulated", "wallclock"):
            raise ValueError(f"unknown delay mode {self.mode!r}")
        if self.base_mean < 0 or self.jitter < 0:
            raise ValueError("base_mean and jitter must be >= 0")
        if self.staleness_max < 0:
            raise ValueError("staleness_max must be >= 0")

    def scale(self, client: int) -> float:
        return self.scales.get(client, 1.0)

    def with_client_scales(self, C: int, seed: int) -> "DelayModel":
        """Draw the per-client hardware factors ``scale_c ~ U[0.5, 1.5]`` once."""
        rng = _rng.stream(seed, _rng.SCALES)
        drawn = rng.uniform(SCALE_LOW, SCALE_HIGH, size=C)
        return replace(self, scales={c: float(s) for c, s in enumerate(drawn)})


@dataclass(frozen=True)
class LrSchedule:
    gamma0: float
    alpha: float = 0.0

    def __post_init__(self) -> None:
        if not self.gamma0 > 0:
            raise ValueError("gamma0 must be > 0")
        if not 0 <= self.alpha <= 1:
            raise ValueError("alpha must lie in [0, 1]")


def sample_delay(model: DelayModel, client: int, round: int, rng: np.random.Generator) -> float:
    """Simulated execution time ``max(0, base_mean * scale_c + U[-jitter, jitter])``."""
    if model.mode != "simulated":
        raise ValueError("sample_delay only applies to simulated delays")
    jitter = rng.uniform(-model.jitter, model.jitter) if model.jitter > 0 else 0.0
    return max(0.0, model.base_mean * model.scale(client) + jitter)


def round_delay_spread(delays: Mapping[int, float]) -> float:
    if not delays:
        raise ValueError("no delays recorded for this round")
    values = list(delays.values())
    return max(values) - min(values)


def delay_adjusted_lr(s: LrSchedule, t: int, tau_t: float) -> float:
    """``gamma0 / (sqrt(t + 1) * (1 + alpha * tau_t))``."""
    if t < 0 or tau_t < 0:
        raise ValueError("t and tau_t must be >= 0")
    return s.gamma0 / (math.sqrt(t + 1) * (1.0 + s.alpha * tau_t))


def sample_staleness(model: DelayModel, rng: np.random.Generator, round: int) -> int:
    """Uniform on ``{0, ..., min(staleness_max, round)}``."""
    hi = min(model.staleness_max, round)
    if hi <= 0:
        return 0
    return int(rng.integers(0, hi + 1))
