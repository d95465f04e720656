"""Grid search driver for the LIBSVM benchmarks, run through the ``resfgb`` CLI.

Protocol: hold out 20% of the training file for validation, train every grid
point with validation-based selection of the number of rounds, pick the best
validation accuracy, retrain that setting on the whole training file with the
selected number of rounds, and report accuracy on the test file.

    python benchmarks/table1.py --train data/usps.bz2 --test data/usps.t.bz2
    python benchmarks/table1.py --proxy digits      # offline smoke run (needs scikit-learn)
"""

from __future__ import annotations

import argparse
import itertools
import json
import os
import subprocess
import sys
import tempfile
import time
from pathlib import Path

ETAS = (1e-3, 1e-2, 1e-1, 1.0)
WIDTHS = (100, 1000)
DEPTHS = (2, 3)


def resfgb(*args) -> str:
    proc = subprocess.run([sys.executable, "-m", "resfgb.cli", *map(str, args)],
                          capture_output=True, text=True)
    if proc.returncode != 0:
        raise RuntimeError(f"resfgb {args[0]} failed ({proc.returncode}): {proc.stderr.strip()}")
    return proc.stdout


def read_csv_history(path):
    import csv
    with open(path, newline="") as fh:
        return [{k: (float(v) if v != "" else float("nan")) for k, v in row.items()} for row in csv.DictReader(fh)]


def grid(etas=ETAS, widths=WIDTHS, depths=DEPTHS):
    for width, depth, eta in itertools.product(widths, depths, etas):
        yield {"eta": eta, "hidden": ",".join([str(width)] * depth)}


def run(train, test, workdir, fmt="libsvm", layers=30, patience=10, seed=0, configs=None,
        common=(), log=print):
    """Run the protocol; returns a JSON-serializable summary."""
    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    runs = []
    for k, cfg in enumerate(configs or grid()):
        model, hist = workdir / f"grid{k}.json", workdir / f"grid{k}.csv"
        t0 = time.perf_counter()
        resfgb("train", "--data", train, "--format", fmt, "--layers", layers, "--eta", cfg["eta"],
               "--embed-hidden", cfg["hidden"], "--valid-frac", 0.2, "--patience", patience,
               "--seed", seed, "--out", model, "--history", hist, *common)
        seconds = time.perf_counter() - t0
        selected = json.loads(model.read_text())["metadata"]["selected_round"]
        rows = read_csv_history(hist)
        rec = {**cfg, "selected_round": selected, "valid_acc": rows[selected]["valid_acc"],
               "seconds": seconds, "model": str(model), "history": str(hist)}
        runs.append(rec)
        log(f"eta={cfg['eta']:g} hidden={cfg['hidden']} valid_acc={rec['valid_acc']:.4f} "
            f"rounds={selected} ({seconds:.1f}s)")

    best = max(runs, key=lambda r: r["valid_acc"])  # max keeps the first of equal entries
    final = workdir / "final.json"
    t0 = time.perf_counter()
    resfgb("train", "--data", train, "--format", fmt, "--layers", best["selected_round"],
           "--eta", best["eta"], "--embed-hidden", best["hidden"], "--seed", seed,
           "--out", final, "--history", workdir / "final.csv", *common)
    final_seconds = time.perf_counter() - t0
    out = resfgb("eval", "--model", final, "--data", test, "--format", fmt)
    test_acc = float(out.splitlines()[0].split("=")[1])
    log(f"best eta={best['eta']:g} hidden={best['hidden']} rounds={best['selected_round']} "
        f"test_acc={test_acc:.4f}")
    return {"runs": runs, "best": best, "final_model": str(final), "final_seconds": final_seconds,
            "test_acc": test_acc, "max_run_seconds": max([r["seconds"] for r in runs] + [final_seconds]),
            "total_seconds": sum(r["seconds"] for r in runs) + final_seconds}


def write_digits_proxy(workdir):
    """sklearn's bundled 8x8 digits as a 75/25 LIBSVM train/test pair."""
    import numpy as np
    from sklearn.datasets import load_digits

    from resfgb.dataio import Dataset, to_libsvm

    X, y = load_digits(return_X_y=True)
    perm = np.random.default_rng(0).permutation(len(y))
    cut = int(0.75 * len(y))
    paths = []
    for name, idx in (("digits", perm[:cut]), ("digits.t", perm[cut:])):
        path = Path(workdir) / name
        path.write_text(to_libsvm(Dataset(X[idx], y[idx], tuple(range(10)))))
        paths.append(path)
    return paths


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--train")
    p.add_argument("--test")
    p.add_argument("--format", default="libsvm")
    p.add_argument("--proxy", choices=["digits"])
    p.add_argument("--etas", default=",".join(map(str, ETAS)))
    p.add_argument("--widths", default=",".join(map(str, WIDTHS)))
    p.add_argument("--depths", default=",".join(map(str, DEPTHS)))
    p.add_argument("--layers", type=int, default=30)
    p.add_argument("--patience", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workdir", default=None)
    p.add_argument("--json", default=None, help="write the summary here")
    args = p.parse_args(argv)

    workdir = args.workdir or tempfile.mkdtemp(prefix="resfgb-grid-")
    os.makedirs(workdir, exist_ok=True)
    if args.proxy:
        train, test = write_digits_proxy(workdir)
    elif args.train and args.test:
        train, test = args.train, args.test
    else:
        p.error("give --train and --test, or --proxy")
    configs = list(grid([float(v) for v in args.etas.split(",")],
                        [int(v) for v in args.widths.split(",")],
                        [int(v) for v in args.depths.split(",")]))
    summary = run(train, test, workdir, args.format, args.layers, args.patience, args.seed, configs)
    if args.json:
        Path(args.json).write_text(json.dumps(summary, indent=2))
    return 0


if __name__ == "__main__":
    sys.exit(main())
