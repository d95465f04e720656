import math

import numpy as np
import pytest

from conftest import random_dataset
from resfgb.boost import ResFGBModel, TrainConfig, TrainHistory, train
from resfgb.dataio import Dataset
from resfgb.diagnostics import (
    HISTORY_COLUMNS,
    BoundReport,
    all_bounds,
    check_consistency_bound,
    check_margin_bound,
    check_risk_gap_bound,
    consistency_bound,
    emit_history,
    margin,
    margin_bound,
    margin_distribution,
    margin_fraction,
    read_history,
    reports_json,
    risk_gap_bound,
)
from resfgb.embed import EmbedConfig
from resfgb.linopt import LinearModel

FAST = EmbedConfig(hidden=(16,), epochs=2)


def linear_model(w, c, loss="logistic"):
    return ResFGBModel([], LinearModel(np.asarray(w, float), 0.01), loss, tuple(range(c)))


def balanced(n=10):
    X = np.arange(float(n))[:, None]
    return Dataset(X, np.arange(n) % 2, (0, 1))


class TestMargins:
    def test_example(self):
        assert margin([2.0, 0.5, -1.0], 0) == 1.5

    def test_zero_logits(self):
        assert margin(np.zeros(4), 2) == 0.0

    def test_sign_is_strict_argmax(self, rng):
        Z = rng.integers(-2, 3, size=(200, 3)).astype(float)
        y = rng.integers(0, 3, 200)
        for z, yi in zip(Z, y):
            strict = all(z[yi] > z[k] for k in range(3) if k != yi)
            assert (margin(z, yi) > 0) == strict

    def test_zero_model_fractions(self):
        ds = balanced()
        m = linear_model(np.zeros((1, 2)), 2)
        assert margin_distribution(m, ds, 0.0).fraction_below == 1.0
        assert margin_distribution(m, ds, -0.1).fraction_below == 0.0

    def test_counting_oracle(self, rng):
        Z = rng.normal(size=(37, 4))
        y = rng.integers(0, 4, 37)
        for delta in (-0.5, 0.0, 0.3, 2.0):
            count = 0
            for i in range(37):
                best = max(Z[i, k] for k in range(4) if k != y[i])
                count += (Z[i, y[i]] - best) <= delta
            assert margin_fraction(Z, y, delta).fraction_below == count / 37

    def test_monotone_in_delta(self, rng):
        Z = rng.normal(size=(50, 3))
        y = rng.integers(0, 3, 50)
        fr = [margin_fraction(Z, y, d).fraction_below for d in np.linspace(-3, 3, 61)]
        assert all(b >= a for a, b in zip(fr, fr[1:]))


class TestBoundExamples:
    def test_consistency_zero_model(self):
        r = check_consistency_bound(linear_model(np.zeros((1, 2)), 2), balanced())
        assert r.lhs == pytest.approx(1 / math.sqrt(2), abs=1e-15)
        assert r.rhs == pytest.approx(1 / math.sqrt(2), abs=1e-15)
        assert r.holds

    def test_margin_zero_model(self):
        r = check_margin_bound(linear_model(np.zeros((1, 2)), 2), balanced(), 0.0)
        assert r.lhs == 1.0 and r.rhs == pytest.approx(2.0, abs=1e-14) and r.holds

    def test_risk_gap_zero_model(self):
        r = check_risk_gap_bound(linear_model(np.zeros((1, 2)), 2), balanced())
        assert r.rhs == pytest.approx(1 / math.sqrt(2), abs=1e-15)
        assert r.lhs == pytest.approx(0.5 / math.sqrt(2), abs=1e-15)
        assert r.holds

    def test_confident_model(self):
        Z = np.array([[40.0, -40.0], [-40.0, 40.0]])
        y = np.array([0, 1])
        X = np.array([[0.0], [1.0]])
        c = consistency_bound(Z, y, X)
        assert c.lhs < 1e-30 and c.rhs < 1e-30 and c.holds
        assert margin_bound(Z, y, 1.0).lhs == 0.0
        r = risk_gap_bound(Z, y)
        assert r.holds and r.lhs == pytest.approx(r.rhs, rel=1e-6)  # M -> 0 limit

    def test_duplicate_rows_grouped(self):
        # one point carrying both labels: nu = (1/2, 1/2) equals the zero model's softmax
        Z = np.zeros((2, 2))
        r = consistency_bound(Z, np.array([0, 1]), np.array([[1.0], [1.0]]))
        assert r.lhs == 0.0

    def test_negative_delta_rejected(self):
        with pytest.raises(ValueError):
            margin_bound(np.zeros((2, 2)), [0, 1], -0.1)

    def test_smooth_hinge_rejected(self):
        m = linear_model(np.zeros((1, 2)), 2, "smooth_hinge")
        with pytest.raises(ValueError):
            check_consistency_bound(m, balanced())

    def test_report_format(self):
        r = BoundReport("x", 0.25, 0.5)
        assert r.line() == "x 0.25 0.5 true 0.25"
        assert BoundReport("x", 1.0 + 5e-10, 1.0).holds
        assert not BoundReport("x", 1.0 + 2e-9, 1.0).holds
        assert '"holds": true' in reports_json([r])


def test_random_models_sweep():
    rng = np.random.default_rng(123)
    for trial in range(100):
        c = int(rng.choice([2, 3, 10]))
        n = int(rng.integers(c, 51))
        d = int(rng.integers(1, 6))
        X = rng.normal(size=(n, d))
        if trial % 4 == 0:
            X[: n // 2] = X[0]  # duplicated rows
        y = rng.integers(0, c, n)
        y[:c] = np.arange(c)
        w = rng.normal(scale=float(rng.choice([0.01, 1, 10, 100])), size=(d, c))
        for r in all_bounds(linear_model(w, c), Dataset(X, y, tuple(range(c)))):
            assert r.holds, r.line()


def test_trained_models_satisfy_bounds(rng):
    for c in (2, 3):
        ds = random_dataset(rng, 60, 3, c)
        model, _ = train(ds, TrainConfig(T=3, embed=FAST))
        assert all(r.holds for r in all_bounds(model, ds))


class TestHistoryCsv:
    def test_rows_and_round_trip(self, rng, tmp_path):
        ds = random_dataset(rng, 40, 2, 2)
        _, hist = train(ds, TrainConfig(T=2, valid_fraction=0.25, embed=FAST))
        hist = TrainHistory(hist.records[:3])
        path = tmp_path / "h.csv"
        emit_history(hist, path)
        lines = path.read_text().splitlines()
        assert len(lines) == 4
        assert lines[0] == ",".join(HISTORY_COLUMNS)
        for rec, row in zip(hist.records, read_history(path)):
            for col in HISTORY_COLUMNS:
                a, b = getattr(rec, col), row[col]
                assert (math.isnan(a) and math.isnan(b)) or a == b

    def test_empty(self, tmp_path):
        with pytest.raises(ValueError):
            emit_history(TrainHistory(), tmp_path / "h.csv")
