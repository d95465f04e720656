"""Ridge-regularized multiclass linear head, fitted by Nesterov's accelerated gradient."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .losses import LossKind, grad_logits_batch, hessian_bound, l0, losses

log = logging.getLogger(__name__)


_NOISE = 64 * np.finfo(np.float64).eps


class ConvergenceWarning(UserWarning):
    pass


@dataclass
class LinearModel:
    """Last-layer weights ``w`` of shape (d, c) and the ridge strength ``lam``."""

    w: np.ndarray
    lam: float
    converged: bool = field(default=True, compare=False)
    epochs: int = field(default=0, compare=False)

    @property
    def d(self) -> int:
        return self.w.shape[0]

    @property
    def c(self) -> int:
        return self.w.shape[1]


@dataclass(frozen=True)
class SolverConfig:
    max_epochs: int = 2000
    tol: Optional[float] = None  # None -> 1e-7 * max(1, l0)
    step_size: Union[float, str] = "auto"
    power_iters: int = 50

    def __post_init__(self):
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        if self.tol is not None and self.tol <= 0:
            raise ValueError("tol must be positive")

    def resolved_tol(self, kind, c: int) -> float:
        if self.tol is not None:
            return self.tol
        return 1e-7 * max(1.0, l0(kind, c))


def _check_dims(Z, labels, w):
    if Z.ndim != 2 or labels.shape != (Z.shape[0],):
        raise ValueError(f"representation {Z.shape} and labels {labels.shape} do not agree")
    if w.shape[0] != Z.shape[1]:
        raise ValueError(f"weight rows {w.shape[0]} != representation dim {Z.shape[1]}")


def objective(Z, labels, model: LinearModel, kind) -> float:
    """Mean loss of ``Z @ w`` plus ``lam/2 * ||w||_F^2``."""
    Z = np.asarray(Z, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    _check_dims(Z, y, model.w)
    return float(losses(kind, Z @ model.w, y).mean() + 0.5 * model.lam * np.sum(model.w ** 2))


def grad_w(Z, labels, model: LinearModel, kind) -> np.ndarray:
    Z = np.asarray(Z, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    _check_dims(Z, y, model.w)
    G = grad_logits_batch(kind, Z @ model.w, y)
    return Z.T @ G / Z.shape[0] + model.lam * model.w


def top_singular_value_sq(Z: np.ndarray, iters: int = 50) -> float:
    """Largest eigenvalue of Z^T Z by a fixed-start power method."""
    d = Z.shape[1]
    v = np.ones(d) / np.sqrt(d)
    if not np.any(Z @ v):
        v = np.arange(1.0, d + 1.0)
        v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(iters):
        with np.errstate(over="ignore", invalid="ignore"):
            u = Z.T @ (Z @ v)
            norm = np.linalg.norm(u)
        if norm == 0.0:
            return 0.0
        if not np.isfinite(norm):
            return float("inf")
        v = u / norm
        est = norm
    return float(est)


def auto_step(Z, kind, c: int, lam: float, iters: int = 50) -> float:
    L = hessian_bound(kind, c) * top_singular_value_sq(Z, iters) / Z.shape[0] + lam
    return 1.0 / L


def fit_linear(Z, labels, lam: float, kind, c: Optional[int] = None,
               cfg: SolverConfig = SolverConfig(), w_init: Optional[np.ndarray] = None) -> LinearModel:
    """Minimize the ridge objective over ``w`` starting from ``w_init`` (zeros by default).

    Accelerated gradient with two restart rules: momentum is dropped when the
    gradient at the extrapolated point points against the last move, and an
    iterate that increases the objective is replaced by a plain gradient step
    from the previous point. The objective sequence is therefore non-increasing
    up to floating-point summation noise (64 ulp of the objective).
    On running out of epochs the last (best) iterate is returned with
    ``converged=False`` and a ``ConvergenceWarning``.
    """
    if lam <= 0:
        raise ValueError("lam must be positive")
    kind = LossKind.parse(kind)
    Z = np.asarray(Z, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    n, d = Z.shape
    if c is None:
        c = w_init.shape[1] if w_init is not None else int(y.max()) + 1
    x = np.zeros((d, c)) if w_init is None else np.array(w_init, dtype=np.float64)
    _check_dims(Z, y, x)
    tol = cfg.resolved_tol(kind, c)
    step = auto_step(Z, kind, c, lam, cfg.power_iters) if cfg.step_size == "auto" else float(cfg.step_size)

    def evaluate(w, P):
        f = losses(kind, P, y).mean() + 0.5 * lam * np.sum(w * w)
        g = Z.T @ grad_logits_batch(kind, P, y) / n + lam * w
        return f, g

    if not (np.isfinite(step) and step > 0):
        raise FloatingPointError(f"step size {step} is not a positive finite number; "
                                 "the representation is too large or non-finite")
    P = Z @ x
    f_x, g_x = evaluate(x, P)
    if not (np.isfinite(f_x) and np.isfinite(g_x).all()):
        raise FloatingPointError("objective or gradient is non-finite at the starting point")
    if np.linalg.norm(g_x) <= tol:
        return LinearModel(x, lam, True, 0)

    x_prev, P_prev = x, P
    t_k = 1.0
    for epoch in range(1, cfg.max_epochs + 1):
        t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t_k * t_k))
        beta = (t_k - 1.0) / t_next
        y_w = x + beta * (x - x_prev)
        P_y = P + beta * (P - P_prev)
        g_y = Z.T @ grad_logits_batch(kind, P_y, y) / n + lam * y_w

        x_new = y_w - step * g_y
        P_new = Z @ x_new
        f_new, g_new = evaluate(x_new, P_new)
        # objective differences below this are summation noise, not increases
        noise = _NOISE * max(1.0, abs(f_x))
        if f_new > f_x + noise:
            t_next = 1.0
            while True:
                x_new = x - step * g_x
                P_new = Z @ x_new
                f_new, g_new = evaluate(x_new, P_new)
                if f_new <= f_x + noise or step < 1e-300:
                    break
                # curvature was underestimated by the power method
                step *= 0.5
        elif np.sum(g_y * (x_new - x)) > 0:
            t_next = 1.0

        x_prev, P_prev = x, P
        x, P, f_x, g_x = x_new, P_new, f_new, g_new
        t_k = t_next
        if np.linalg.norm(g_x) <= tol:
            return LinearModel(x, lam, True, epoch)

    msg = (f"fit_linear did not reach tol={tol:.3g} in {cfg.max_epochs} epochs "
           f"(grad norm {np.linalg.norm(g_x):.3g})")
    warnings.warn(msg, ConvergenceWarning, stacklevel=2)
    log.warning(msg)
    return LinearModel(x, lam, False, cfg.max_epochs)
