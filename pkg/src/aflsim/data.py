"""Synthetic regression/classification data and Dirichlet partitioning."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal, Optional

import numpy as np

from . import _rng

FEATURE_LOW, FEATURE_HIGH = -5.0, 5.0
WEIGHT_LOW, WEIGHT_HIGH = 2.0, 4.0
TRUE_BIAS = 5.0
NOISE_STD = 0.2

Kind = Literal["regression", "classification"]


@dataclass
class Dataset:
    features: np.ndarray
    targets: np.ndarray
    kind: Kind
    true_weights: Optional[np.ndarray] = None
    true_bias: Optional[float] = None
    logits: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self) -> None:
        self.features = np.asarray(self.features, dtype=np.float64)
        self.targets = np.asarray(self.targets, dtype=np.float64)
        if self.features.ndim != 2:
            raise ValueError("features must be a 2-D array")
        n, d = self.features.shape
        if n < 1 or d < 1:
            raise ValueError("dataset needs n >= 1 and d >= 1")
        if self.targets.shape != (n,):
            raise ValueError(f"targets must have shape ({n},)")
        if not np.all(np.isfinite(self.features)):
            raise ValueError("features must be finite")
        if self.kind == "classification" and not np.all(np.abs(self.targets) == 1.0):
            raise ValueError("classification targets must be -1 or +1")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    def subset(self, indices: np.ndarray) -> "Dataset":
        indices = np.asarray(indices, dtype=np.intp)
        return Dataset(self.features[indices], self.targets[indices], self.kind)


def _check_shape(n: int, d: int) -> None:
    if n < 1 or d < 1:
        raise ValueError(f"need n >= 1 and d >= 1, got n={n}, d={d}")


def _features_and_weights(n: int, d: int, seed: int):
    rng = _rng.stream(seed, _rng.DATA)
    X = rng.uniform(FEATURE_LOW, FEATURE_HIGH, size=(n, d))
    w = rng.uniform(WEIGHT_LOW, WEIGHT_HIGH, size=d)
    return rng, X, w


def gen_regression_data(n: int, d: int, seed: int, noise_std: float = NOISE_STD) -> Dataset:
    """``y = w*.x + 5 + eps`` with ``x ~ U[-5, 5]^d``, ``w* ~ U[2, 4]^d``, ``eps ~ N(0, noise_std^2)``."""
    _check_shape(n, d)
    rng, X, w = _features_and_weights(n, d, seed)
    noise = rng.normal(0.0, 1.0, size=n) * noise_std
    y = X @ w + TRUE_BIAS + noise
    return Dataset(X, y, "regression", true_weights=w, true_bias=TRUE_BIAS)


def gen_classification_data(n: int, d: int, seed: int) -> Dataset:
    """Labels are ``+1`` where the logit ``w*.x + 5`` is positive, else ``-1``."""
    _check_shape(n, d)
    _, X, w = _features_and_weights(n, d, seed)
    logits = X @ w + TRUE_BIAS
    y = np.where(logits > 0, 1.0, -1.0)
    return Dataset(X, y, "classification", true_weights=w, true_bias=TRUE_BIAS, logits=logits)


@dataclass
class PartitionPlan:
    assignments: dict[int, np.ndarray]
    concentration: float

    @property
    def n_clients(self) -> int:
        return len(self.assignments)

    def sizes(self) -> dict[int, int]:
        return {c: len(idx) for c, idx in self.assignments.items()}

    def shard(self, data: Dataset, client: int) -> Dataset:
        return data.subset(self.assignments[client])


def _split_by_proportions(indices: np.ndarray, p: np.ndarray) -> list[np.ndarray]:
    # last shard absorbs rounding; a negative remainder yields an empty shard
    n = len(indices)
    sizes = np.round(n * p[:-1]).astype(np.int64)
    cuts = np.minimum(np.cumsum(sizes), n)
    return np.split(indices, cuts)


def dirichlet_partition(
    data: Dataset,
    C: int,
    zeta: float,
    seed: int,
    min_per_client: int = 32,
    max_redraws: int = 1000,
) -> PartitionPlan:
    """Split ``data`` across ``C`` clients with Dirichlet(zeta) proportions.

    Regression data gets quantity skew (one proportion vector over clients);
    classification data gets label skew (one proportion vector per class).
    Draws leaving any client with fewer than ``min_per_client`` samples are
    rejected and redrawn from a fresh sub-stream.
    """
    if C < 1:
        raise ValueError("C must be >= 1")
    if not zeta > 0:
        raise ValueError("zeta must be > 0")
    if C * min_per_client > data.n:
        raise ValueError(
            f"infeasible partition: {C} clients x {min_per_client} samples > n={data.n}"
        )
    if C == 1:
        return PartitionPlan({0: np.arange(data.n)}, zeta)

    if data.kind == "classification":
        groups = [np.flatnonzero(data.targets == label) for label in (-1.0, 1.0)]
        groups = [g for g in groups if len(g)]
    else:
        groups = [np.arange(data.n)]

    for attempt in range(max_redraws + 1):
        rng = _rng.stream(seed, _rng.PARTITION, attempt)
        shards: list[list[np.ndarray]] = [[] for _ in range(C)]
        for group in groups:
            g = rng.gamma(zeta, 1.0, size=C)
            p = g / g.sum()
            for c, part in enumerate(_split_by_proportions(rng.permutation(group), p)):
                shards[c].append(part)
        merged = [np.sort(np.concatenate(parts)) for parts in shards]
        if min(len(m) for m in merged) >= max(1, min_per_client):
            return PartitionPlan({c: m for c, m in enumerate(merged)}, zeta)
    raise RuntimeError(
        f"redraw budget exhausted: no Dirichlet draw in {max_redraws + 1} attempts gave "
        f"every client >= {min_per_client} samples"
    )


def save_csv(data: Dataset, path: str | Path) -> None:
    """Write ``f0..f{d-1},y`` with 17 significant digits."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"f{j}" for j in range(data.d)] + ["y"])
        for row, y in zip(data.features, data.targets):
            writer.writerow([format(v, ".17g") for v in row] + [format(y, ".17g")])


def load_csv(path: str | Path, kind: Kind = "regression") -> Dataset:
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if not header or header[-1] != "y":
            raise ValueError(f"{path}: expected header f0..f(d-1),y")
        rows = np.array([[float(v) for v in row] for row in reader])
    return Dataset(rows[:, :-1], rows[:, -1], kind)
