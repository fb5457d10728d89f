"""Parameter vectors, snapshot history and per-round records."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np


@dataclass(frozen=True, eq=False)
class ParamVector:
    """Linear-model parameters ``(weights, bias)`` in float64.

    The weights array is copied and frozen on construction, so instances can be
    shared between threads and stored in histories without defensive copies.
    """

    weights: np.ndarray
    bias: float

    def __post_init__(self) -> None:
        w = np.array(self.weights, dtype=np.float64).reshape(-1)
        b = float(self.bias)
        if not (np.all(np.isfinite(w)) and np.isfinite(b)):
            raise ValueError("parameter vector has non-finite entries")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", b)

    @property
    def dim(self) -> int:
        return self.weights.shape[0]

    @classmethod
    def zeros(cls, d: int) -> "ParamVector":
        return cls(np.zeros(d), 0.0)

    @classmethod
    def from_array(cls, theta: np.ndarray) -> "ParamVector":
        """Build from the flat layout ``[w_0, ..., w_{d-1}, b]``."""
        theta = np.asarray(theta, dtype=np.float64)
        return cls(theta[:-1], theta[-1])

    def to_array(self) -> np.ndarray:
        """Flat ``[w, b]`` copy, the layout used by the trainers."""
        return np.append(self.weights, self.bias)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ParamVector):
            return NotImplemented
        return self.bias == other.bias and np.array_equal(self.weights, other.weights)

    def __repr__(self) -> str:
        return f"ParamVector(weights={self.weights.tolist()!r}, bias={self.bias!r})"


def _check_dims(vectors: Sequence[ParamVector]) -> int:
    d = vectors[0].dim
    for v in vectors[1:]:
        if v.dim != d:
            raise ValueError(f"dimension mismatch: {v.dim} != {d}")
    return d


def average_params(vectors: Sequence[ParamVector]) -> ParamVector:
    """Elementwise mean of ``vectors``, accumulated left to right.

    Uses the running-mean update ``m += (v - m) / k`` so that averaging ``c``
    identical vectors returns that vector bit-exactly.  Callers that need
    order independence sort their inputs first (the orchestrator sorts by
    client id).
    """
    vectors = list(vectors)
    if not vectors:
        raise ValueError("nothing to aggregate")
    _check_dims(vectors)
    mean = vectors[0].to_array()
    for k, v in enumerate(vectors[1:], start=2):
        mean += (v.to_array() - mean) / k
    return ParamVector.from_array(mean)


def axpy(alpha: float, x: ParamVector, y: ParamVector) -> ParamVector:
    """Return ``y + alpha * x``."""
    if x.dim != y.dim:
        raise ValueError(f"dimension mismatch: {x.dim} != {y.dim}")
    return ParamVector(y.weights + alpha * x.weights, y.bias + alpha * x.bias)


class GlobalModelHistory:
    """Ring buffer of the most recent ``tau_max + 1`` global models.

    ``lookup(0)`` is the current model, ``lookup(k)`` the model ``k`` rounds ago.
    """

    def __init__(self, tau_max: int, initial: ParamVector) -> None:
        if tau_max < 0:
            raise ValueError("tau_max must be >= 0")
        self.tau_max = tau_max
        self._snapshots: deque[tuple[int, ParamVector]] = deque(maxlen=tau_max + 1)
        self._snapshots.append((0, initial))

    @property
    def current_round(self) -> int:
        return self._snapshots[-1][0]

    def push(self, params: ParamVector) -> None:
        self._snapshots.append((self.current_round + 1, params))

    def lookup(self, age: int) -> ParamVector:
        if age < 0 or age >= len(self._snapshots):
            raise IndexError(
                f"no snapshot of age {age} (round {self.current_round}, tau_max {self.tau_max})"
            )
        return self._snapshots[-1 - age][1]

    def __len__(self) -> int:
        return len(self._snapshots)


@dataclass
class RoundRecord:
    round: int
    server_loss: float
    selected: tuple[int, ...]
    delays: dict[int, float]
    tau_t: float
    gamma_t: float
    staleness: dict[int, int] = field(default_factory=dict)

    @property
    def max_delay(self) -> float:
        return max(self.delays.values())


def stack(vectors: Iterable[ParamVector]) -> np.ndarray:
    """Stack parameter vectors into a ``(k, d + 1)`` array."""
    return np.array([v.to_array() for v in vectors])
