"""Losses and (sub)gradients for the two convex local objectives.

Per-sample functions take a :class:`ParamVector`; the ``batch_*`` functions
work on the flat ``[w, b]`` array used inside the trainers and return the
mean over the batch.  The optional ridge term ``(l2_mu / 2) * ||w||^2`` never
touches the bias.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

from .core import ParamVector


@dataclass(frozen=True)
class ModelKind:
    tag: Literal["regression", "svm"] = "regression"
    l2_mu: float = 0.0

    def __post_init__(self) -> None:
        if self.tag not in ("regression", "svm"):
            raise ValueError(f"unknown model tag {self.tag!r}")
        if self.l2_mu < 0:
            raise ValueError("l2_mu must be >= 0")


def _check_row(p: ParamVector, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.shape[0] != p.dim:
        raise ValueError(f"feature row has {x.shape[0]} entries, model has {p.dim}")
    return x


def _check_label(y: float) -> None:
    if y not in (-1, 1):
        raise ValueError(f"hinge loss needs labels in {{-1, +1}}, got {y!r}")


def _ridge(p: ParamVector, l2_mu: float) -> float:
    return 0.5 * l2_mu * float(p.weights @ p.weights)


def mse_loss(p: ParamVector, x, y: float, l2_mu: float = 0.0) -> float:
    x = _check_row(p, x)
    r = y - (float(p.weights @ x) + p.bias)
    return 0.5 * r * r + _ridge(p, l2_mu)


def mse_grad(p: ParamVector, x, y: float, l2_mu: float = 0.0) -> ParamVector:
    x = _check_row(p, x)
    r = y - (float(p.weights @ x) + p.bias)
    return ParamVector(-r * x + l2_mu * p.weights, -r)


def hinge_loss(p: ParamVector, x, y: float, l2_mu: float = 0.0) -> float:
    _check_label(y)
    x = _check_row(p, x)
    return max(0.0, 1.0 - y * (float(p.weights @ x) + p.bias)) + _ridge(p, l2_mu)


def hinge_subgrad(p: ParamVector, x, y: float, l2_mu: float = 0.0) -> ParamVector:
    # at y*f(x) == 1 the zero-loss branch is returned
    _check_label(y)
    x = _check_row(p, x)
    if y * (float(p.weights @ x) + p.bias) < 1.0:
        return ParamVector(-y * x + l2_mu * p.weights, -y)
    return ParamVector(l2_mu * p.weights, 0.0)


def loss(kind: ModelKind, p: ParamVector, x, y: float) -> float:
    fn = mse_loss if kind.tag == "regression" else hinge_loss
    return fn(p, x, y, kind.l2_mu)


def grad(kind: ModelKind, p: ParamVector, x, y: float) -> ParamVector:
    fn = mse_grad if kind.tag == "regression" else hinge_subgrad
    return fn(p, x, y, kind.l2_mu)


def batch_loss(kind: ModelKind, theta: np.ndarray, X: np.ndarray, y: np.ndarray) -> float:
    """Mean per-sample loss of flat parameters ``theta`` over ``(X, y)``."""
    w, b = theta[:-1], theta[-1]
    f = X @ w + b
    if kind.tag == "regression":
        r = y - f
        value = 0.5 * float(r @ r) / len(y)
    else:
        value = float(np.maximum(0.0, 1.0 - y * f).mean())
    return value + 0.5 * kind.l2_mu * float(w @ w)


def batch_grad(kind: ModelKind, theta: np.ndarray, X: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Mean (sub)gradient over the batch, flat layout."""
    w, b = theta[:-1], theta[-1]
    m = len(y)
    f = X @ w + b
    if kind.tag == "regression":
        coef = f - y
    else:
        coef = np.where(y * f < 1.0, -y, 0.0)
    g = np.empty_like(theta)
    g[:-1] = (coef @ X) / m
    g[-1] = coef.sum() / m
    if kind.l2_mu:
        g[:-1] += kind.l2_mu * w
    return g
