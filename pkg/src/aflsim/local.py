"""Client-side mini-batch SGD."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal, Optional, Union

import numpy as np

from .core import ParamVector
from .data import Dataset
from .models import ModelKind, batch_loss

DIVERGENCE_LIMIT = 1e12


class DivergenceError(RuntimeError):
    """Raised when a parameter leaves ``[-1e12, 1e12]`` or turns non-finite."""

    def __init__(self, message: str, step: int, round: Optional[int] = None, client: Optional[int] = None):
        super().__init__(message)
        self.step = step
        self.round = round
        self.client = client


@dataclass
class LocalRunReport:
    final_params: ParamVector
    steps_taken: int
    final_local_loss: float
    epoch_losses: list[float]
    iterates: Optional[np.ndarray] = field(default=None, repr=False)


def _generator(seed: Union[int, np.random.Generator]) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def local_sgd(
    start: ParamVector,
    shard: Dataset,
    kind: ModelKind,
    epochs: int,
    batch: int,
    lr: float,
    seed: Union[int, np.random.Generator],
    unit: Literal["epochs", "steps"] = "epochs",
    record_iterates: bool = False,
) -> LocalRunReport:
    """Run ``epochs`` passes of mini-batch SGD over ``shard`` from ``start``.

    With ``unit="epochs"`` every epoch reshuffles the shard and walks it in
    batches of ``batch`` (the last batch may be short).  With ``unit="steps"``
    ``epochs`` counts single updates instead, each on a fresh batch drawn
    without replacement.  ``epoch_losses`` holds the shard loss after each
    epoch (or step).

    ``iterates`` (when requested) has one row per visited point, starting with
    ``start`` and ending with the returned parameters.
    """
    if epochs < 1:
        raise ValueError("epochs must be >= 1")
    if batch < 1:
        raise ValueError("batch must be >= 1")
    if lr < 0:
        raise ValueError("lr must be >= 0")
    if shard.n == 0:
        raise ValueError("empty shard")
    if shard.d != start.dim:
        raise ValueError(f"shard has d={shard.d}, parameters have d={start.dim}")
    rng = _generator(seed)
    X, y = shard.features, shard.targets
    n = shard.n
    regression = kind.tag == "regression"
    mu = kind.l2_mu

    w = start.weights.copy()
    b = start.bias
    trail = [np.append(w, b)] if record_iterates else None
    losses: list[float] = []
    step = 0

    def update(Xb: np.ndarray, yb: np.ndarray) -> None:
        nonlocal w, b, step
        f = Xb @ w + b
        if regression:
            coef = f - yb
        else:
            coef = np.where(yb * f < 1.0, -yb, 0.0)
        m = len(yb)
        gw = (coef @ Xb) / m
        if mu:
            gw += mu * w
        w = w - lr * gw
        b = b - lr * (coef.sum() / m)
        step += 1
        if not (np.isfinite(b) and abs(b) <= DIVERGENCE_LIMIT and np.all(np.abs(w) <= DIVERGENCE_LIMIT)):
            raise DivergenceError(f"divergence at local step {step}", step=step)
        if trail is not None:
            trail.append(np.append(w, b))

    def shard_loss() -> float:
        return batch_loss(kind, np.append(w, b), X, y)

    if unit == "epochs":
        for _ in range(epochs):
            perm = rng.permutation(n)
            Xp, yp = X[perm], y[perm]
            for lo in range(0, n, batch):
                update(Xp[lo:lo + batch], yp[lo:lo + batch])
            losses.append(shard_loss())
    elif unit == "steps":
        m = min(batch, n)
        for _ in range(epochs):
            idx = rng.choice(n, size=m, replace=False)
            update(X[idx], y[idx])
            losses.append(shard_loss())
    else:
        raise ValueError(f"unknown local unit {unit!r}")

    final = ParamVector(w, b)
    return LocalRunReport(
        final_params=final,
        steps_taken=step,
        final_local_loss=losses[-1],
        epoch_losses=losses,
        iterates=np.array(trail) if trail is not None else None,
    )


def steps_per_epoch(n: int, batch: int) -> int:
    return math.ceil(n / batch)
