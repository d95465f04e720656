"""ResFGB training: functional gradient boosting that grows a residual feature extractor.

Each round fits the linear head on the current representation, computes the
per-sample gradient of the loss with respect to the representation, trains an
embedding to regress the normalized gradient field, and appends the residual
layer ``z -> z - eta * A @ embedding(z)`` with ``A = G^T E / n``.
"""

from __future__ import annotations

import dataclasses
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Tuple

import numpy as np

from . import __version__
from .dataio import Dataset, SplitSpec, Standardizer, fit_standardizer, shuffled_indices, split_train_valid
from .embed import EmbedConfig, Embedding, _rowwise_matmul, normalized_targets, train_embedding
from .linopt import LinearModel, SolverConfig, fit_linear, objective
from .losses import LossKind, c_lambda, grad_input, grad_logits_batch, grad_norm_l1, hessian_bound

log = logging.getLogger(__name__)

SMOOTH_HINGE_FORM = "one-vs-rest: sum_{k != y} psi(1 + z_k - z_y), psi quadratic on (0, 1)"


class TrainingAborted(RuntimeError):
    """Representations became non-finite during training."""


@dataclass
class ResidualLayer:
    A: np.ndarray
    eta: float
    embedding: Embedding

    def __post_init__(self):
        self.A = np.asarray(self.A, dtype=np.float64)
        if self.A.ndim != 2 or self.A.shape[1] != self.embedding.d_out:
            raise ValueError(f"A {self.A.shape} does not match embedding output dim {self.embedding.d_out}")
        if not np.isfinite(self.A).all():
            raise ValueError("A has non-finite entries")
        if not self.eta > 0:
            raise ValueError("eta must be positive")


def per_sample_gradients(Z, labels, w: np.ndarray, kind) -> np.ndarray:
    """Row i is ``w @ dloss/dlogits`` at ``(Z[i] @ w, labels[i])``: the representation gradient."""
    Z = np.asarray(Z, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    if Z.ndim != 2 or w.shape[0] != Z.shape[1]:
        raise ValueError(f"representation {Z.shape} and weight {w.shape} do not agree")
    return grad_input(w, grad_logits_batch(kind, _rowwise_matmul(Z, w), labels))


def build_layer(G: np.ndarray, E: np.ndarray, eta: float, embedding) -> ResidualLayer:
    """``A = G^T E / n`` packaged with its step size and embedding."""
    G = np.asarray(G, dtype=np.float64)
    E = np.asarray(E, dtype=np.float64)
    if G.ndim != 2 or E.ndim != 2 or G.shape[0] != E.shape[0]:
        raise ValueError(f"gradient {G.shape} and embedding batch {E.shape} need equal row counts")
    return ResidualLayer(G.T @ E / G.shape[0], eta, embedding)


def _step(layer: ResidualLayer, Z: np.ndarray, E: np.ndarray) -> np.ndarray:
    return Z - layer.eta * _rowwise_matmul(E, layer.A.T)


def apply_layer(layer: ResidualLayer, Z) -> np.ndarray:
    """``z - eta * A @ embedding(z)`` for a vector or row-wise over a matrix."""
    Z = np.asarray(Z, dtype=np.float64)
    single = Z.ndim == 1
    Z2 = Z[None, :] if single else Z
    if Z2.shape[1] != layer.A.shape[0]:
        raise ValueError(f"expected dim {layer.A.shape[0]}, got {Z2.shape[1]}")
    out = _step(layer, Z2, layer.embedding.forward(Z2))
    return out[0] if single else out


@dataclass
class ResFGBModel:
    layers: List[ResidualLayer]
    linear: LinearModel
    loss: LossKind
    label_values: tuple
    standardizer: Optional[Standardizer] = None
    metadata: dict = field(default_factory=dict)

    @property
    def d(self) -> int:
        return self.linear.d

    @property
    def c(self) -> int:
        return self.linear.c

    def transform(self, X) -> np.ndarray:
        """Standardize and fold through every residual layer."""
        X = np.asarray(X, dtype=np.float64)
        single = X.ndim == 1
        Z = X[None, :] if single else X
        if Z.ndim != 2 or Z.shape[1] != self.d:
            raise ValueError(f"expected {self.d} input features, got shape {X.shape}")
        if self.standardizer is not None:
            Z = self.standardizer.transform(Z)
        for layer in self.layers:
            Z = apply_layer(layer, Z)
        return Z[0] if single else Z

    def truncated(self, n_layers: int, w: np.ndarray) -> "ResFGBModel":
        """The model made of the first ``n_layers`` layers paired with head ``w``."""
        return dataclasses.replace(self, layers=list(self.layers[:n_layers]),
                                   linear=LinearModel(np.asarray(w), self.linear.lam))


def predict_logits(model: ResFGBModel, X) -> np.ndarray:
    Z = model.transform(X)
    if Z.ndim == 1:
        return _rowwise_matmul(Z[None, :], model.linear.w)[0]
    return _rowwise_matmul(Z, model.linear.w)


def predict_class(model: ResFGBModel, X) -> np.ndarray:
    """Internal class index; ties go to the smallest index."""
    return np.argmax(predict_logits(model, X), axis=-1)


def predict_label(model: ResFGBModel, X):
    """Predicted raw label(s) through the model's label map."""
    return np.asarray(model.label_values)[predict_class(model, X)]


# --------------------------------------------------------------------------
# training

@dataclass(frozen=True)
class TrainConfig:
    T: int = 20
    T0: Optional[int] = None  # None -> T (refit the head every round)
    eta: float = 0.1
    eta2: Optional[float] = None  # step size for the second half of the rounds
    lam: float = 1e-2
    loss: str = "logistic"
    embed: EmbedConfig = EmbedConfig()
    solver: SolverConfig = SolverConfig()
    valid_fraction: float = 0.0
    patience: Optional[int] = None
    seed: int = 0
    mode: str = "standard"
    standardize: bool = True
    project_unit_ball: bool = True

    def __post_init__(self):
        if self.T < 0:
            raise ValueError("T must be >= 0")
        if self.T0 is not None and not 0 <= self.T0 <= self.T:
            raise ValueError("T0 must satisfy 0 <= T0 <= T")
        if not self.eta > 0 or (self.eta2 is not None and not self.eta2 > 0):
            raise ValueError("learning rates must be positive")
        if not self.lam > 0:
            raise ValueError("lam must be positive")
        if self.mode not in ("standard", "sample_split"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.patience is not None and self.patience < 1:
            raise ValueError("patience must be >= 1")
        LossKind.parse(self.loss)
        SplitSpec(self.valid_fraction, self.seed)

    @property
    def refit_rounds(self) -> int:
        if self.mode == "sample_split":
            return 0
        return self.T if self.T0 is None else self.T0

    def eta_at(self, t: int) -> float:
        if self.eta2 is not None and t >= self.T / 2:
            return self.eta2
        return self.eta

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        data = dict(data)
        embed = dict(data.pop("embed", {}))
        if "hidden" in embed:
            embed["hidden"] = tuple(embed["hidden"])
        solver = data.pop("solver", {})
        return cls(embed=EmbedConfig(**embed), solver=SolverConfig(**solver), **data)


@dataclass
class RoundRecord:
    """Metrics of the candidate predictor at the start of round ``round``.

    The candidate pairs the first ``round`` layers with the head fitted on
    their output. ``embed_mse`` and ``K`` describe the layer built in this round
    and are NaN for the terminal record, which evaluates the full stack.
    """

    round: int
    train_risk: float
    grad_norm_l1: float
    train_acc: float
    valid_acc: float
    embed_mse: float
    K: float
    sigma_min: float
    wall_ms: float
    n_used: int = 0
    eta: float = math.nan
    eta_guard: float = math.nan
    w: Optional[np.ndarray] = field(default=None, repr=False)


@dataclass
class TrainHistory:
    records: List[RoundRecord] = field(default_factory=list)
    selected_round: int = 0
    stopped_early: bool = False
    subsets: Optional[List[np.ndarray]] = field(default=None, repr=False)

    def __len__(self) -> int:
        return len(self.records)


EmbedFitter = Callable[[np.ndarray, np.ndarray, EmbedConfig], Tuple[object, float]]


def _round_seed(seed: int, embed_seed: int, t: int) -> int:
    return int(np.random.SeedSequence([seed, embed_seed, t]).generate_state(1, np.uint64)[0])


def _accuracy(logits: np.ndarray, labels: np.ndarray) -> float:
    return float(np.mean(np.argmax(logits, axis=1) == labels))


class _Trainer:
    def __init__(self, ds: Dataset, cfg: TrainConfig, fitter: Optional[EmbedFitter]):
        if ds.c < 2:
            raise ValueError("training needs at least 2 classes")
        self.cfg = cfg
        self.kind = LossKind.parse(cfg.loss)
        train, valid = split_train_valid(ds, SplitSpec(cfg.valid_fraction, cfg.seed))
        self.train_ds, self.valid_ds = train, valid
        self.standardizer = fit_standardizer(train.features) if cfg.standardize else None
        prep = self.standardizer.transform if self.standardizer is not None else np.asarray
        self.Z = np.array(prep(train.features))
        self.Zv = None if valid is None else np.array(prep(valid.features))
        self.y = train.labels
        self.yv = None if valid is None else valid.labels
        self.c = ds.c
        self.d = ds.d
        self.fitter = fitter
        self.layers: List[ResidualLayer] = []
        self.history = TrainHistory()
        self.warned_guard = False

    def fit_embedding(self, Z, targets, t):
        ecfg = dataclasses.replace(self.cfg.embed, seed=_round_seed(self.cfg.seed, self.cfg.embed.seed, t))
        if self.fitter is not None:
            return self.fitter(Z, targets, ecfg)
        return train_embedding(Z, targets, ecfg, self.cfg.project_unit_ball)

    def fit_head(self, Z, y, w_init):
        cfg = self.cfg
        try:
            return fit_linear(Z, y, cfg.lam, self.kind, self.c, cfg.solver, w_init)
        except FloatingPointError as exc:
            raise TrainingAborted(f"linear head fit failed: {exc}") from None

    def record(self, t, lin: LinearModel, t_start, n_used) -> RoundRecord:
        logits = _rowwise_matmul(self.Z, lin.w)
        valid_acc = math.nan
        if self.Zv is not None:
            valid_acc = _accuracy(_rowwise_matmul(self.Zv, lin.w), self.yv)
        wtw = lin.w.T @ lin.w
        rec = RoundRecord(
            round=t,
            train_risk=objective(self.Z, self.y, lin, self.kind),
            grad_norm_l1=grad_norm_l1(self.kind, logits, self.y),
            train_acc=_accuracy(logits, self.y),
            valid_acc=valid_acc,
            embed_mse=math.nan,
            K=math.nan,
            sigma_min=max(0.0, float(np.linalg.eigvalsh(wtw)[0])),
            wall_ms=(time.perf_counter() - t_start) * 1e3,
            n_used=n_used,
            w=lin.w.copy(),
        )
        self.history.records.append(rec)
        return rec

    def grow(self, t, rec: RoundRecord, lin: LinearModel, idx=None):
        """Build layer t from the samples ``idx`` (all when None) and update the caches."""
        Zs = self.Z if idx is None else self.Z[idx]
        ys = self.y if idx is None else self.y[idx]
        G = per_sample_gradients(Zs, ys, lin.w, self.kind)
        embedding, mse = self.fit_embedding(Zs, normalized_targets(G), t)
        E = embedding.forward(Zs)
        K = float(np.max(np.einsum("ij,ij->i", E, E))) if len(E) else 0.0
        eta = self.cfg.eta_at(t)
        layer = build_layer(G, E, eta, embedding)

        smooth = hessian_bound(self.kind, self.c) * c_lambda(self.kind, self.c, self.cfg.lam) ** 2
        guard = 1.0 / (smooth * K) if K > 0 else math.inf
        if eta > guard:
            level = logging.INFO if self.warned_guard else logging.WARNING
            log.log(level, "round %d: eta=%g exceeds the descent guard 1/(A c_lambda^2 K)=%g", t, eta, guard)
            self.warned_guard = True

        if idx is None:
            self.Z = _step(layer, self.Z, E)
        else:
            self.Z = apply_layer(layer, self.Z)
        if self.Zv is not None:
            self.Zv = apply_layer(layer, self.Zv)
        if not np.isfinite(self.Z).all() or (self.Zv is not None and not np.isfinite(self.Zv).all()):
            raise TrainingAborted(f"non-finite representation after round {t}")
        self.layers.append(layer)
        rec.embed_mse, rec.K, rec.eta, rec.eta_guard = float(mse), K, eta, guard

    def early_stop(self, t) -> bool:
        """Track the best validated candidate; True when patience is exhausted."""
        h = self.history
        if self.Zv is None:
            h.selected_round = t
            return False
        if h.records[t].valid_acc > h.records[h.selected_round].valid_acc or t == 0:
            h.selected_round = t
        patience = self.cfg.patience
        return patience is not None and t - h.selected_round >= patience

    def run_standard(self):
        cfg = self.cfg
        lin = LinearModel(np.zeros((self.d, self.c)), cfg.lam)
        for t in range(cfg.T):
            t_start = time.perf_counter()
            if t < cfg.refit_rounds:
                lin = self.fit_head(self.Z, self.y, lin.w)
            rec = self.record(t, lin, t_start, len(self.y))
            if self.early_stop(t):
                self.history.stopped_early = True
                return
            self.grow(t, rec, lin)
            rec.wall_ms = (time.perf_counter() - t_start) * 1e3
        t_start = time.perf_counter()
        lin = self.fit_head(self.Z, self.y, lin.w)
        self.record(cfg.T, lin, t_start, len(self.y))
        self.early_stop(cfg.T)

    def run_sample_split(self):
        cfg = self.cfg
        n = len(self.y)
        if cfg.T < 1 or cfg.T > n:
            raise ValueError(f"sample splitting needs 1 <= T <= n, got T={cfg.T}, n={n}")
        m = n // cfg.T
        perm = shuffled_indices(n, cfg.seed + 1)
        subsets = [np.sort(perm[t * m:(t + 1) * m]) for t in range(cfg.T)]
        self.history.subsets = subsets
        lin = self.fit_head(self.Z[subsets[0]], self.y[subsets[0]], None)
        for t in range(cfg.T):
            t_start = time.perf_counter()
            rec = self.record(t, lin, t_start, m)
            if self.early_stop(t):
                self.history.stopped_early = True
                return
            self.grow(t, rec, lin, subsets[t])
            rec.wall_ms = (time.perf_counter() - t_start) * 1e3
        self.record(cfg.T, lin, time.perf_counter(), 0)
        self.early_stop(cfg.T)

    def result(self) -> ResFGBModel:
        cfg = self.cfg
        h = self.history
        s = h.selected_round
        chosen = h.records[s]
        meta = {
            "version": __version__,
            "config": cfg.to_dict(),
            "seed": cfg.seed,
            "selected_round": s,
            "standardized": cfg.standardize,
            "n_train": int(len(self.y)),
            "n_valid": 0 if self.yv is None else int(len(self.yv)),
        }
        if self.kind is LossKind.SMOOTH_HINGE:
            meta["smooth_hinge_form"] = SMOOTH_HINGE_FORM
        if cfg.mode == "sample_split":
            meta["subset_size"] = int(len(h.subsets[0]))
            meta["w0_policy"] = "ridge head fitted on the first subset's standardized inputs"
        return ResFGBModel(
            layers=list(self.layers[:s]),
            linear=LinearModel(chosen.w.copy(), cfg.lam),
            loss=self.kind,
            label_values=self.train_ds.label_values,
            standardizer=self.standardizer,
            metadata=meta,
        )


def train(ds: Dataset, cfg: TrainConfig = TrainConfig(),
          embed_fitter: Optional[EmbedFitter] = None):
    """Run ResFGB on ``ds`` and return ``(model, history)``.

    With ``valid_fraction > 0`` the returned model is the validated-best prefix
    of the layer stack together with the head it was evaluated with.
    ``embed_fitter(Z, targets, embed_cfg) -> (embedding, mse)`` replaces the
    learned embedding, e.g. with :func:`resfgb.embed.oracle_fitter`.
    """
    if cfg.mode == "sample_split":
        return train_sample_split(ds, cfg, embed_fitter)
    trainer = _Trainer(ds, cfg, embed_fitter)
    trainer.run_standard()
    return trainer.result(), trainer.history


def train_sample_split(ds: Dataset, cfg: TrainConfig = TrainConfig(),
                       embed_fitter: Optional[EmbedFitter] = None):
    """Sample-splitting ResFGB: round t sees only its own disjoint block of ``n // T`` samples.

    The head ``w0`` is fitted once on the first block and never refitted.
    Samples beyond ``T * (n // T)`` are not used to build layers.
    """
    cfg = dataclasses.replace(cfg, mode="sample_split", T0=0)
    trainer = _Trainer(ds, cfg, embed_fitter)
    trainer.run_sample_split()
    return trainer.result(), trainer.history
