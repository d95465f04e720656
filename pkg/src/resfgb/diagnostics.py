"""Margins, margin distributions, and exact inequality checks on trained predictors.

The three ``check_*`` functions evaluate inequalities that hold for every
predictor under the multiclass logistic loss, relating the L1 norm of the
functional gradient to (a) the gap between empirical conditional label
frequencies and softmax probabilities, (b) the empirical margin distribution
and (c) the empirical risk. A report with ``holds=False`` means a bug.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass
from typing import Iterable, List

import numpy as np
from scipy.special import softmax

from .boost import ResFGBModel, TrainHistory, predict_logits
from .dataio import Dataset
from .losses import LossKind, grad_norm_l1, losses

SLACK_TOL = 1e-9

HISTORY_COLUMNS = ["round", "train_risk", "grad_norm_l1", "train_acc", "valid_acc",
                   "embed_mse", "K", "sigma_min", "wall_ms"]


@dataclass(frozen=True)
class BoundReport:
    name: str
    lhs: float
    rhs: float

    @property
    def slack(self) -> float:
        return self.rhs - self.lhs

    @property
    def holds(self) -> bool:
        return self.lhs <= self.rhs + SLACK_TOL

    def line(self) -> str:
        return f"{self.name} {self.lhs:.17g} {self.rhs:.17g} {str(self.holds).lower()} {self.slack:.17g}"

    def to_dict(self) -> dict:
        return {**asdict(self), "holds": self.holds, "slack": self.slack}


@dataclass(frozen=True)
class MarginStats:
    margins: np.ndarray
    delta: float
    fraction_below: float


def margins(logits, labels) -> np.ndarray:
    """``f_y(x) - max_{k != y} f_k(x)`` for each row."""
    Z = np.asarray(logits, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if Z.ndim != 2 or Z.shape[1] < 2:
        raise ValueError("margins need a logits matrix with at least 2 columns")
    if y.size and (y.min() < 0 or y.max() >= Z.shape[1]):
        raise ValueError(f"labels out of range [0, {Z.shape[1]})")
    rows = np.arange(len(y))
    others = Z.copy()
    others[rows, y] = -np.inf
    return Z[rows, y] - others.max(axis=1)


def margin(logits, y: int) -> float:
    return float(margins(np.atleast_2d(logits), [y])[0])


def margin_fraction(logits, labels, delta: float) -> MarginStats:
    m = margins(logits, labels)
    return MarginStats(m, float(delta), float(np.count_nonzero(m <= delta)) / len(m))


def margin_distribution(model: ResFGBModel, ds: Dataset, delta: float) -> MarginStats:
    return margin_fraction(predict_logits(model, ds.features), ds.labels, delta)


def _require_logistic(kind):
    if LossKind.parse(kind) is not LossKind.LOGISTIC:
        raise ValueError("this bound is only valid for the multiclass logistic loss")


def empirical_conditional(features: np.ndarray, labels: np.ndarray, c: int) -> np.ndarray:
    """Row i holds the label frequencies among samples whose feature row equals x_i bit for bit."""
    X = np.ascontiguousarray(features, dtype=np.float64)
    groups = {}
    for i in range(X.shape[0]):
        groups.setdefault(X[i].tobytes(), []).append(i)
    out = np.zeros((X.shape[0], c))
    for idx in groups.values():
        freq = np.bincount(labels[idx], minlength=c) / len(idx)
        out[idx] = freq
    return out


def consistency_bound(logits, labels, features) -> BoundReport:
    """``(1/sqrt c) sum_y E|nu_n(y|x) - p_f(y|x)|  <=  ||grad_f L_n||_{L1}``."""
    Z = np.asarray(logits, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    c = Z.shape[1]
    nu = empirical_conditional(features, y, c)
    gap = np.abs(nu - softmax(Z, axis=1)).sum(axis=1).mean()
    return BoundReport("consistency", float(gap / math.sqrt(c)), grad_norm_l1(LossKind.LOGISTIC, Z, y))


def margin_bound(logits, labels, delta: float) -> BoundReport:
    """``P[m_f <= delta]  <=  (1 + e^delta) sqrt(c) ||grad_f L_n||_{L1}``."""
    if delta < 0:
        raise ValueError("delta must be >= 0")
    Z = np.asarray(logits, dtype=np.float64)
    lhs = margin_fraction(Z, labels, delta).fraction_below
    rhs = (1.0 + math.exp(delta)) * math.sqrt(Z.shape[1]) * grad_norm_l1(LossKind.LOGISTIC, Z, labels)
    return BoundReport(f"margin(delta={delta:g})", lhs, rhs)


def risk_gap_bound(logits, labels) -> BoundReport:
    """``(1 - e^{-M}) / (sqrt(c) M) * L_n  <=  ||grad_f L_n||_{L1}`` with ``M`` the largest sample loss."""
    Z = np.asarray(logits, dtype=np.float64)
    ell = losses(LossKind.LOGISTIC, Z, labels)
    M = float(ell.max())
    factor = -math.expm1(-M) / M if M > 0 else 1.0
    lhs = factor / math.sqrt(Z.shape[1]) * float(ell.mean())
    return BoundReport("risk_gap", lhs, grad_norm_l1(LossKind.LOGISTIC, Z, labels))


def check_consistency_bound(model: ResFGBModel, ds: Dataset) -> BoundReport:
    _require_logistic(model.loss)
    return consistency_bound(predict_logits(model, ds.features), ds.labels, ds.features)


def check_margin_bound(model: ResFGBModel, ds: Dataset, delta: float) -> BoundReport:
    _require_logistic(model.loss)
    return margin_bound(predict_logits(model, ds.features), ds.labels, delta)


def check_risk_gap_bound(model: ResFGBModel, ds: Dataset) -> BoundReport:
    _require_logistic(model.loss)
    return risk_gap_bound(predict_logits(model, ds.features), ds.labels)


def all_bounds(model: ResFGBModel, ds: Dataset, deltas=(0.0, 0.5, 1.0)) -> List[BoundReport]:
    """Every bound check on one (model, dataset) pair, sharing a single forward pass."""
    _require_logistic(model.loss)
    Z = predict_logits(model, ds.features)
    reports = [consistency_bound(Z, ds.labels, ds.features)]
    reports += [margin_bound(Z, ds.labels, d) for d in deltas]
    reports.append(risk_gap_bound(Z, ds.labels))
    return reports


def reports_json(reports: Iterable[BoundReport]) -> str:
    return json.dumps([r.to_dict() for r in reports])


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    return "" if math.isnan(v) else f"{v:.17g}"


def emit_history(history: TrainHistory, path) -> None:
    """Write the per-round metrics as CSV with the fixed ``HISTORY_COLUMNS`` header.

    NaN cells (no validation split, terminal record without an embedding) are left empty.
    """
    if not history.records:
        raise ValueError("history is empty")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(HISTORY_COLUMNS)
        for rec in history.records:
            writer.writerow([_fmt(getattr(rec, col)) for col in HISTORY_COLUMNS])


def read_history(path) -> List[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    out = []
    for row in rows:
        out.append({k: (int(v) if k == "round" else (float(v) if v != "" else math.nan))
                    for k, v in row.items()})
    return out
