import json
import subprocess
import sys

import numpy as np
import pytest

from conftest import random_dataset, truncated_blobs
from resfgb.boost import TrainConfig, predict_logits, train
from resfgb.cli import main
from resfgb.dataio import fit_standardizer, to_libsvm
from resfgb.diagnostics import read_history
from resfgb.embed import EmbedConfig, oracle_fitter
from resfgb.linopt import fit_linear
from resfgb.serialization import FORMAT_VERSION, ModelFormatError, dumps, load_model, loads, save_model

FAST = ["--embed-hidden", "16", "--embed-epochs", "2"]


@pytest.fixture
def toy(tmp_path):
    path = tmp_path / "toy.libsvm"
    path.write_text(to_libsvm(truncated_blobs(60, seed=1, label_values=(-1, 1))))
    return path


def run_train(data, out, *extra):
    return main(["train", "--data", str(data), "--out", str(out), *extra])


class TestTrain:
    def test_contract(self, toy, tmp_path, capsys):
        out, hist = tmp_path / "m.json", tmp_path / "h.csv"
        code = main(["train", "--data", str(toy), "--loss", "logistic", "--layers", "20", "--eta", "0.1",
                     "--lambda", "0.01", "--seed", "1", "--out", str(out), "--history", str(hist)])
        assert code == 0 and out.exists() and hist.exists()
        line = capsys.readouterr().out.strip()
        assert line.startswith("final_train_acc=") and "final_valid_acc=nan" in line and line.endswith("rounds=20")
        assert len(read_history(hist)) == 21

    def test_zero_layers_is_ridge(self, toy, tmp_path):
        out = tmp_path / "m.json"
        assert run_train(toy, out, "--layers", "0", "--lambda", "0.05") == 0
        model = load_model(out)
        ds = truncated_blobs(60, seed=1)
        ref = fit_linear(fit_standardizer(ds.features).transform(ds.features), ds.labels, 0.05, "logistic", c=2)
        assert model.layers == []
        np.testing.assert_array_equal(model.linear.w, ref.w)

    def test_sample_split(self, tmp_path):
        data = tmp_path / "nine.libsvm"
        data.write_text(to_libsvm(random_dataset(np.random.default_rng(0), 9, 2, 2)))
        hist = tmp_path / "h.csv"
        assert run_train(data, tmp_path / "m.json", "--mode", "sample-split", "--layers", "3",
                         "--history", str(hist), *FAST) == 0
        meta = json.loads((tmp_path / "m.json").read_text())["metadata"]
        assert meta["subset_size"] == 3 and meta["config"]["mode"] == "sample_split"
        assert [r["round"] for r in read_history(hist)] == [0, 1, 2, 3]

    def test_csv_and_validation(self, tmp_path, capsys):
        ds = truncated_blobs(80, seed=4)
        data = tmp_path / "d.csv"
        data.write_text("\n".join(f"{x:.17g},{z:.17g},{y}" for (x, z), y in zip(ds.features, ds.labels)))
        assert run_train(data, tmp_path / "m.json", "--format", "csv", "--layers", "2",
                         "--valid-frac", "0.25", "--patience", "1", *FAST) == 0
        assert "final_valid_acc=nan" not in capsys.readouterr().out

    @pytest.mark.parametrize("flags", [["--layers", "x"], ["--loss", "hinge"], ["--layers", "-1"],
                                       ["--eta", "0"], ["--embed-hidden", "a,b"], ["--valid-frac", "1.5"]])
    def test_bad_flags_exit_2(self, toy, tmp_path, flags):
        with pytest.raises(SystemExit) as exc:
            run_train(toy, tmp_path / "m.json", *flags)
        assert exc.value.code == 2

    def test_missing_data_exit_1(self, tmp_path, capsys):
        assert run_train(tmp_path / "nope", tmp_path / "m.json") == 1
        assert "error" in capsys.readouterr().err

    def test_nan_abort_exit_1(self, toy, tmp_path, capsys):
        assert run_train(toy, tmp_path / "m.json", "--eta", "1e300", "--layers", "3", *FAST) == 1
        assert "aborted" in capsys.readouterr().err

    def test_byte_identical_reruns(self, toy, tmp_path):
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        for out in (a, b):
            assert run_train(toy, out, "--layers", "3", "--seed", "7", "--valid-frac", "0.2", *FAST) == 0
        assert a.read_bytes() == b.read_bytes()


class TestPredictEval:
    @pytest.fixture
    def model_path(self, toy, tmp_path):
        out = tmp_path / "m.json"
        assert run_train(toy, out, "--layers", "5", *FAST) == 0
        return out

    def test_predict_labels_raw(self, toy, model_path, tmp_path):
        pred = tmp_path / "p.csv"
        assert main(["predict", "--model", str(model_path), "--data", str(toy), "--out", str(pred)]) == 0
        lines = pred.read_text().splitlines()
        assert lines[0] == "index,predicted_label"
        got = [int(l.split(",")[1]) for l in lines[1:]]
        truth = [int(l.split()[0]) for l in toy.read_text().splitlines()]
        assert set(got) == {-1, 1}
        assert got == truth  # separable blobs: 100% train accuracy

    def test_predict_stdout(self, toy, model_path, capsys):
        assert main(["predict", "--model", str(model_path), "--data", str(toy)]) == 0
        assert capsys.readouterr().out.startswith("index,predicted_label\n0,")

    def test_truncated_model(self, toy, model_path, capsys):
        model_path.write_text(model_path.read_text()[:200])
        assert main(["predict", "--model", str(model_path), "--data", str(toy)]) == 1
        assert "JSON" in capsys.readouterr().err

    def test_version_mismatch(self, toy, model_path):
        doc = json.loads(model_path.read_text())
        doc["format_version"] = FORMAT_VERSION + 1
        model_path.write_text(json.dumps(doc))
        assert main(["predict", "--model", str(model_path), "--data", str(toy)]) == 1

    def test_dimension_mismatch(self, model_path, tmp_path):
        data = tmp_path / "wide.libsvm"
        data.write_text("1 1:1 5:2\n-1 2:1\n")
        assert main(["predict", "--model", str(model_path), "--data", str(data)]) == 1

    def test_eval(self, toy, model_path, capsys):
        assert main(["eval", "--model", str(model_path), "--data", str(toy), "--json"]) == 0
        out = capsys.readouterr().out.splitlines()
        assert out[0] == "accuracy=1.000000"
        assert any(l.startswith("margin_fraction(delta=0.5)=") for l in out)
        bounds = [l for l in out if l.split(" ")[0] in
                  ("consistency", "margin(delta=0)", "margin(delta=0.5)", "margin(delta=1)", "risk_gap")]
        assert len(bounds) == 5 and all(l.split()[3] == "true" for l in bounds)
        assert all(r["holds"] for r in json.loads(out[-1]))

    def test_eval_zero_layers_matches_train(self, toy, tmp_path, capsys):
        out = tmp_path / "m0.json"
        run_train(toy, out, "--layers", "0")
        train_acc = capsys.readouterr().out.split()[0].split("=")[1]
        main(["eval", "--model", str(out), "--data", str(toy)])
        assert capsys.readouterr().out.splitlines()[0] == f"accuracy={train_acc}"

    def test_eval_unlabeled_data(self, model_path, tmp_path):
        data = tmp_path / "nolabel.libsvm"
        data.write_text("1:0.5 2:1\n")
        assert main(["eval", "--model", str(model_path), "--data", str(data)]) == 1

    def test_eval_unknown_label(self, model_path, tmp_path):
        data = tmp_path / "other.libsvm"
        data.write_text("3 1:0.5 2:1\n")
        assert main(["eval", "--model", str(model_path), "--data", str(data)]) == 1

    def test_console_entry_point(self, toy, model_path):
        proc = subprocess.run([sys.executable, "-m", "resfgb.cli", "eval", "--model", str(model_path),
                               "--data", str(toy)], capture_output=True, text=True)
        assert proc.returncode == 0 and proc.stdout.startswith("accuracy=")


class TestSerialization:
    def test_bit_identical_logits(self, rng, tmp_path):
        ds = random_dataset(rng, 50, 3, 3)
        model, _ = train(ds, TrainConfig(T=3, embed=EmbedConfig(hidden=(8, 8), epochs=2)))
        save_model(model, tmp_path / "m.json")
        back = load_model(tmp_path / "m.json")
        assert predict_logits(back, ds.features).tobytes() == predict_logits(model, ds.features).tobytes()
        assert dumps(back) == dumps(model)

    def test_float_precision(self, rng):
        ds = random_dataset(rng, 20, 2, 2)
        model, _ = train(ds, TrainConfig(T=1, embed=EmbedConfig(hidden=(4,), epochs=1)))
        back = loads(dumps(model))
        assert back.layers[0].A.tobytes() == model.layers[0].A.tobytes()
        assert back.standardizer.scale.tobytes() == model.standardizer.scale.tobytes()

    def test_malformed(self):
        with pytest.raises(ModelFormatError):
            loads("[1, 2]")
        with pytest.raises(ModelFormatError):
            loads(json.dumps({"format_version": FORMAT_VERSION}))

    def test_oracle_not_serializable(self, rng):
        model, _ = train(random_dataset(rng, 10, 2, 2), TrainConfig(T=1), embed_fitter=oracle_fitter)
        with pytest.raises(TypeError):
            dumps(model)
