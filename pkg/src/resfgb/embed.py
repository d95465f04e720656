"""Small ReLU MLP embeddings and their regression onto normalized gradient fields."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class EmbedConfig:
    hidden: Tuple[int, ...] = (100, 100)
    epochs: int = 10
    batch_size: int = 128
    lr: float = 1e-2
    momentum: float = 0.9
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if any(h < 1 for h in self.hidden):
            raise ValueError(f"hidden widths must be positive, got {self.hidden}")
        if self.epochs < 0 or self.batch_size < 1 or self.lr <= 0:
            raise ValueError("epochs >= 0, batch_size >= 1 and lr > 0 are required")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must be in [0, 1)")


def _rowwise_matmul(X: np.ndarray, W: np.ndarray) -> np.ndarray:
    # einsum without BLAS: each output row depends only on its input row, so a
    # batch and a loop over single rows agree bit for bit.
    return np.einsum("ij,jk->ik", X, W)


class Embedding:
    """ReLU network ``R^d -> R^D`` with identity output.

    ``weights[l]`` has shape (fan_in, fan_out). With ``project_unit_ball`` the
    inference output is rescaled onto the unit ball whenever its norm exceeds 1.
    """

    def __init__(self, weights: Sequence[np.ndarray], biases: Sequence[np.ndarray],
                 project_unit_ball: bool = True):
        if len(weights) != len(biases) or not weights:
            raise ValueError("need one bias per weight matrix and at least one layer")
        ws = [np.array(W, dtype=np.float64) for W in weights]
        bs = [np.array(b, dtype=np.float64).reshape(-1) for b in biases]
        for k, (W, b) in enumerate(zip(ws, bs)):
            if W.ndim != 2 or b.shape != (W.shape[1],):
                raise ValueError(f"layer {k}: weight {W.shape} and bias {b.shape} do not agree")
            if k and W.shape[0] != ws[k - 1].shape[1]:
                raise ValueError(f"layer {k}: input dim {W.shape[0]} != previous output {ws[k - 1].shape[1]}")
            W.flags.writeable = False
            b.flags.writeable = False
        self.weights: List[np.ndarray] = ws
        self.biases: List[np.ndarray] = bs
        self.project_unit_ball = bool(project_unit_ball)

    @property
    def d_in(self) -> int:
        return self.weights[0].shape[0]

    @property
    def d_out(self) -> int:
        return self.weights[-1].shape[1]

    @property
    def dims(self) -> List[int]:
        return [self.d_in] + [W.shape[1] for W in self.weights]

    def with_params(self, weights, biases) -> "Embedding":
        return Embedding(weights, biases, self.project_unit_ball)

    def raw_forward(self, Z: np.ndarray) -> np.ndarray:
        """Network output before projection, using BLAS products (training path)."""
        h = Z
        last = len(self.weights) - 1
        for k, (W, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ W + b
            if k < last:
                h = np.maximum(h, 0.0)
        return h

    def forward(self, Z: np.ndarray) -> np.ndarray:
        Z = np.asarray(Z, dtype=np.float64)
        single = Z.ndim == 1
        Z2 = Z[None, :] if single else Z
        if Z2.ndim != 2 or Z2.shape[1] != self.d_in:
            raise ValueError(f"expected input dim {self.d_in}, got shape {Z.shape}")
        h = Z2
        last = len(self.weights) - 1
        for k, (W, b) in enumerate(zip(self.weights, self.biases)):
            h = _rowwise_matmul(h, W) + b
            if k < last:
                h = np.maximum(h, 0.0)
        if self.project_unit_ball:
            norms = np.sqrt(np.einsum("ij,ij->i", h, h))
            h = h / np.maximum(norms, 1.0)[:, None]
        return h[0] if single else h

    __call__ = forward


def init_embedding(d: int, D: int, cfg: EmbedConfig = EmbedConfig(),
                   project_unit_ball: bool = True) -> Embedding:
    """Fan-in scaled uniform weights from ``default_rng(cfg.seed)``; biases zero.

    Hidden layers draw from +-sqrt(6 / fan_in). The output layer draws from
    +-sqrt(3 / (fan_in * fan_out)), which puts the expected squared output norm
    near 1, the scale of the unit-norm regression targets.
    """
    if d < 1 or D < 1:
        raise ValueError("input and output dims must be >= 1")
    rng = np.random.default_rng(cfg.seed)
    dims = [d, *cfg.hidden, D]
    weights, biases = [], []
    n_layers = len(dims) - 1
    for k, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
        if k < n_layers - 1:
            bound = np.sqrt(6.0 / fan_in)
        else:
            bound = np.sqrt(3.0 / (fan_in * fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return Embedding(weights, biases, project_unit_ball)


def mse_and_grads(e: Embedding, X: np.ndarray, T: np.ndarray):
    """Mean squared error ``mean_i ||e(x_i) - t_i||^2`` (unprojected) and its gradients.

    Returns ``(loss, grads_W, grads_b)`` with one entry per layer.
    """
    acts = [X]
    pre = []
    h = X
    last = len(e.weights) - 1
    for k, (W, b) in enumerate(zip(e.weights, e.biases)):
        a = h @ W + b
        pre.append(a)
        h = np.maximum(a, 0.0) if k < last else a
        acts.append(h)
    diff = h - T
    n = X.shape[0]
    loss = float(np.sum(diff * diff) / n)

    gW = [None] * len(e.weights)
    gb = [None] * len(e.weights)
    delta = 2.0 * diff / n
    for k in range(last, -1, -1):
        gW[k] = acts[k].T @ delta
        gb[k] = delta.sum(axis=0)
        if k:
            delta = (delta @ e.weights[k].T) * (pre[k - 1] > 0)
    return loss, gW, gb


def _mse(e: Embedding, X, T) -> float:
    diff = e.raw_forward(X) - T
    return float(np.sum(diff * diff) / X.shape[0])


def fit_to_targets(e: Embedding, inputs: np.ndarray, targets: np.ndarray,
                   cfg: EmbedConfig = EmbedConfig(), max_backoff: int = 8):
    """Regress the embedding onto ``targets`` with mini-batch Nesterov momentum SGD.

    The loss is the unprojected mean squared error. The parameters with the
    lowest end-of-epoch full-data MSE (the starting point included) are
    returned, together with that MSE. If the iterates diverge, training
    restarts from ``e`` with half the learning rate, at most ``max_backoff``
    times; wide networks need this at the default rate.
    """
    X = np.asarray(inputs, dtype=np.float64)
    T = np.asarray(targets, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != e.d_in:
        raise ValueError(f"inputs {X.shape} do not match embedding input dim {e.d_in}")
    if T.shape != (X.shape[0], e.d_out):
        raise ValueError(f"targets {T.shape} do not match ({X.shape[0]}, {e.d_out})")
    lr = cfg.lr
    for attempt in range(max_backoff + 1):
        try:
            return _sgd(e, X, T, cfg, lr)
        except FloatingPointError as exc:
            if attempt == max_backoff:
                raise FloatingPointError(f"{exc}; gave up after {max_backoff} learning-rate halvings") from None
            log.warning("%s; restarting with lr=%g", exc, lr / 2)
            lr /= 2


def _sgd(e: Embedding, X, T, cfg: EmbedConfig, lr: float):
    n = X.shape[0]
    rng = np.random.default_rng(cfg.seed)
    Ws = [W.copy() for W in e.weights]
    bs = [b.copy() for b in e.biases]
    vW = [np.zeros_like(W) for W in Ws]
    vb = [np.zeros_like(b) for b in bs]
    best_mse = _mse(e, X, T)
    best = e
    work = Embedding(Ws, bs, e.project_unit_ball)
    # write-enabled views so updates happen in place
    work.weights, work.biases = Ws, bs

    with np.errstate(over="ignore", invalid="ignore"):
        for epoch in range(cfg.epochs):
            perm = rng.permutation(n)
            for start in range(0, n, cfg.batch_size):
                idx = perm[start:start + cfg.batch_size]
                loss, gW, gb = mse_and_grads(work, X[idx], T[idx])
                if not np.isfinite(loss):
                    raise FloatingPointError(
                        f"embedding loss became {loss} at epoch {epoch}, batch offset {start} (lr={lr:g})")
                for k in range(len(Ws)):
                    vW[k] = cfg.momentum * vW[k] + gW[k]
                    vb[k] = cfg.momentum * vb[k] + gb[k]
                    Ws[k] -= lr * (gW[k] + cfg.momentum * vW[k])
                    bs[k] -= lr * (gb[k] + cfg.momentum * vb[k])
            mse = _mse(work, X, T)
            if not np.isfinite(mse):
                raise FloatingPointError(f"embedding MSE became {mse} after epoch {epoch} (lr={lr:g})")
            if mse < best_mse:
                best_mse = mse
                best = e.with_params(Ws, bs)
    return best, best_mse


def fold_input_affine(e: Embedding, mean: np.ndarray, scale: np.ndarray) -> Embedding:
    """Embedding ``z -> e((z - mean) / scale)`` expressed as a plain MLP."""
    W0 = e.weights[0] / scale[:, None]
    b0 = e.biases[0] - mean @ W0
    return e.with_params([W0, *e.weights[1:]], [b0, *e.biases[1:]])


def train_embedding(inputs: np.ndarray, targets: np.ndarray, cfg: EmbedConfig = EmbedConfig(),
                    project_unit_ball: bool = True):
    """Initialize and fit an embedding ``R^d -> R^D`` on standardized copies of ``inputs``.

    The standardization is folded into the first layer afterwards, so the
    returned network acts on the raw inputs. Returns ``(embedding, mse)``.
    """
    X = np.asarray(inputs, dtype=np.float64)
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    scale = np.where(std < 1e-8, 1.0, std)
    e0 = init_embedding(X.shape[1], np.shape(targets)[1], cfg, project_unit_ball)
    fitted, mse = fit_to_targets(e0, (X - mean) / scale, targets, cfg)
    return fold_input_affine(fitted, mean, scale), mse


class OracleEmbedding:
    """Exact lookup ``z_i -> g_i`` over a fixed set of representations.

    Only defined on the stored inputs; any other query raises ``KeyError``.
    """

    project_unit_ball = False

    def __init__(self, inputs: np.ndarray, targets: np.ndarray):
        X = np.asarray(inputs, dtype=np.float64)
        G = np.array(targets, dtype=np.float64)
        if X.ndim != 2 or G.ndim != 2 or X.shape[0] != G.shape[0]:
            raise ValueError("inputs and targets must be matrices with equal row counts")
        self._table = {X[i].tobytes(): i for i in range(X.shape[0])}
        self._targets = G
        self.d_in = X.shape[1]
        self.d_out = G.shape[1]

    def forward(self, Z: np.ndarray) -> np.ndarray:
        Z = np.asarray(Z, dtype=np.float64)
        single = Z.ndim == 1
        Z2 = np.ascontiguousarray(Z[None, :] if single else Z)
        if Z2.shape[1] != self.d_in:
            raise ValueError(f"expected input dim {self.d_in}, got {Z2.shape[1]}")
        try:
            rows = [self._table[z.tobytes()] for z in Z2]
        except KeyError:
            raise KeyError("oracle embedding queried off its training representations") from None
        out = self._targets[rows]
        return out[0] if single else out

    __call__ = forward


def normalized_targets(G: np.ndarray, eps: float = 1e-12) -> np.ndarray:
    """Rows of ``G`` scaled to unit norm; rows with norm below ``eps`` become zero."""
    norms = np.linalg.norm(G, axis=1)
    out = np.zeros_like(G)
    keep = norms >= eps
    out[keep] = G[keep] / norms[keep][:, None]
    return out


def oracle_fitter(Z: np.ndarray, targets: np.ndarray, cfg: Optional[EmbedConfig] = None):
    """Drop-in replacement for the learned fit: exact normalized gradients, zero error."""
    return OracleEmbedding(Z, targets), 0.0
