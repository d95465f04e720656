"""Multiclass losses on logits and their gradients.

All batch functions take a logits matrix of shape (n, c) and integer labels of
shape (n,). The single-sample forms accept a length-c vector.
"""

from __future__ import annotations

import enum
import math

import numpy as np
from scipy.special import logsumexp, softmax


class LossKind(str, enum.Enum):
    LOGISTIC = "logistic"
    SMOOTH_HINGE = "smooth_hinge"

    @classmethod
    def parse(cls, value) -> "LossKind":
        if isinstance(value, cls):
            return value
        return cls(str(value).replace("-", "_"))


def _check(logits, labels):
    Z = np.asarray(logits, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if Z.ndim != 2 or y.shape != (Z.shape[0],):
        raise ValueError(f"logits {Z.shape} and labels {y.shape} do not agree")
    c = Z.shape[1]
    if y.size and (y.min() < 0 or y.max() >= c):
        raise ValueError(f"labels out of range [0, {c})")
    return Z, y


def _hinge_margins(Z, y):
    # t[i, k] = 1 + z_k - z_y for k != y; the true-class column is masked out.
    t = 1.0 + Z - Z[np.arange(len(y)), y][:, None]
    mask = np.ones_like(Z, dtype=bool)
    mask[np.arange(len(y)), y] = False
    return t, mask


def _psi(t):
    return np.where(t <= 0, 0.0, np.where(t < 1, 0.5 * t * t, t - 0.5))


def losses(kind, logits, labels) -> np.ndarray:
    """Per-sample loss values, shape (n,)."""
    kind = LossKind.parse(kind)
    Z, y = _check(logits, labels)
    if kind is LossKind.LOGISTIC:
        # logsumexp subtracts the row max internally
        return logsumexp(Z, axis=1) - Z[np.arange(len(y)), y]
    t, mask = _hinge_margins(Z, y)
    return np.where(mask, _psi(t), 0.0).sum(axis=1)


def grad_logits_batch(kind, logits, labels) -> np.ndarray:
    """Row i is the gradient of the loss of sample i with respect to its logits."""
    kind = LossKind.parse(kind)
    Z, y = _check(logits, labels)
    rows = np.arange(len(y))
    if kind is LossKind.LOGISTIC:
        G = softmax(Z, axis=1)
        G[rows, y] -= 1.0
        return G
    t, mask = _hinge_margins(Z, y)
    G = np.where(mask, np.clip(t, 0.0, 1.0), 0.0)
    G[rows, y] = -G.sum(axis=1)
    return G


def loss_value(kind, logits, label: int) -> float:
    return float(losses(kind, np.atleast_2d(logits), [label])[0])


def grad_logits(kind, logits, label: int) -> np.ndarray:
    return grad_logits_batch(kind, np.atleast_2d(logits), [label])[0]


def grad_input(w: np.ndarray, g_logits: np.ndarray) -> np.ndarray:
    """Chain rule into the representation: ``w @ g`` for a (d, c) weight matrix.

    Accepts a single gradient vector (c,) or a batch (n, c), returning (d,) or (n, d).
    """
    w = np.asarray(w, dtype=np.float64)
    g = np.asarray(g_logits, dtype=np.float64)
    if w.ndim != 2 or g.shape[-1] != w.shape[1]:
        raise ValueError(f"weight {w.shape} and logit gradient {g.shape} do not agree")
    return g @ w.T


def grad_norm_l1(kind, logits, labels) -> float:
    """Mean over samples of the Euclidean norm of the logit gradient."""
    G = grad_logits_batch(kind, logits, labels)
    return float(np.linalg.norm(G, axis=1).mean())


def l0(kind, c: int) -> float:
    """Loss at zero logits (the same for every label)."""
    kind = LossKind.parse(kind)
    return math.log(c) if kind is LossKind.LOGISTIC else (c - 1) / 2.0


def hessian_bound(kind, c: int) -> float:
    """Upper bound on the spectral norm of the loss Hessian in the logits."""
    kind = LossKind.parse(kind)
    return 0.5 if kind is LossKind.LOGISTIC else float(c)


def c_lambda(kind, c: int, lam: float) -> float:
    """Norm bound on any ridge minimizer: sqrt(2 l0 / lambda)."""
    return math.sqrt(2.0 * l0(kind, c) / lam)
