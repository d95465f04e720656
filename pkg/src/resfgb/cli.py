"""Command line entry point: ``resfgb train|predict|eval``.

Exit codes: 0 success, 1 runtime failure (bad data, bad model file, training
abort), 2 usage error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from typing import List, Optional

import numpy as np

from .boost import TrainConfig, TrainingAborted, predict_class, predict_logits, train
from .dataio import DataFormatError, Dataset, load_dataset
from .diagnostics import all_bounds, emit_history, margin_fraction, reports_json
from .embed import EmbedConfig
from .losses import LossKind, grad_norm_l1, losses
from .serialization import ModelFormatError, load_model, save_model

log = logging.getLogger("resfgb")


class CliError(Exception):
    """Runtime failure reported on stderr with exit code 1."""


def _widths(text: str):
    try:
        widths = tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if any(w < 1 for w in widths):
        raise argparse.ArgumentTypeError("hidden widths must be positive")
    return widths


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="resfgb", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    tr = sub.add_parser("train", help="train a model")
    tr.add_argument("--data", required=True)
    tr.add_argument("--format", choices=["libsvm", "csv"], default="libsvm")
    tr.add_argument("--loss", choices=["logistic", "smooth-hinge"], default="logistic")
    tr.add_argument("--layers", type=int, default=20, help="number of boosting rounds T")
    tr.add_argument("--t0", type=int, default=None, help="rounds in which the head is refit (default: all)")
    tr.add_argument("--eta", type=float, default=0.1)
    tr.add_argument("--eta2", type=float, default=None, help="step size for the second half of the rounds")
    tr.add_argument("--lambda", dest="lam", type=float, default=1e-2)
    tr.add_argument("--embed-hidden", type=_widths, default=(100, 100))
    tr.add_argument("--embed-epochs", type=int, default=10)
    tr.add_argument("--embed-lr", type=float, default=1e-2)
    tr.add_argument("--batch", type=int, default=128)
    tr.add_argument("--valid-frac", type=float, default=0.0)
    tr.add_argument("--patience", type=int, default=None)
    tr.add_argument("--seed", type=int, default=0)
    tr.add_argument("--mode", choices=["standard", "sample-split"], default="standard")
    tr.add_argument("--no-standardize", action="store_true")
    tr.add_argument("--no-project", action="store_true")
    tr.add_argument("--out", required=True)
    tr.add_argument("--history", default=None)

    for name, help_ in (("predict", "write predicted labels"), ("eval", "print metrics and bound checks")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--model", required=True)
        p.add_argument("--data", required=True)
        p.add_argument("--format", choices=["libsvm", "csv"], default="libsvm")
        if name == "predict":
            p.add_argument("--out", default="-", help="predictions CSV (default: stdout)")
        else:
            p.add_argument("--json", action="store_true", help="print the bound reports as a JSON array")
    return parser


def config_from_args(args) -> TrainConfig:
    try:
        return TrainConfig(
            T=args.layers,
            T0=args.t0,
            eta=args.eta,
            eta2=args.eta2,
            lam=args.lam,
            loss=LossKind.parse(args.loss).value,
            embed=EmbedConfig(hidden=args.embed_hidden, epochs=args.embed_epochs,
                              batch_size=args.batch, lr=args.embed_lr, seed=args.seed),
            valid_fraction=args.valid_frac,
            patience=args.patience,
            seed=args.seed,
            mode=args.mode.replace("-", "_"),
            standardize=not args.no_standardize,
            project_unit_ball=not args.no_project,
        )
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _load_data(path, fmt, d_hint=None, label_values=None) -> Dataset:
    try:
        return load_dataset(path, fmt, d_hint=d_hint, label_values=label_values)
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc.strerror or exc}") from None
    except (DataFormatError, ValueError) as exc:
        raise CliError(f"{path}: {exc}") from None


def _load_model(path):
    try:
        return load_model(path)
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc.strerror or exc}") from None
    except ModelFormatError as exc:
        raise CliError(f"{path}: {exc}") from None


def _data_for_model(model, path, fmt) -> Dataset:
    ds = _load_data(path, fmt, d_hint=model.d, label_values=model.label_values)
    if ds.d != model.d:
        raise CliError(f"data has {ds.d} features but the model expects {model.d}")
    return ds


def cmd_train(args) -> int:
    cfg = config_from_args(args)
    ds = _load_data(args.data, args.format)
    try:
        model, history = train(ds, cfg)
    except (TrainingAborted, FloatingPointError) as exc:
        raise CliError(f"training aborted: {exc}") from None
    except ValueError as exc:
        raise CliError(str(exc)) from None
    save_model(model, args.out)
    if args.history:
        emit_history(history, args.history)
    final = history.records[history.selected_round]
    valid = "nan" if np.isnan(final.valid_acc) else f"{final.valid_acc:.6f}"
    print(f"final_train_acc={final.train_acc:.6f} final_valid_acc={valid} rounds={len(model.layers)}")
    return 0


def cmd_predict(args) -> int:
    model = _load_model(args.model)
    ds = _data_for_model(model, args.data, args.format)
    pred = np.asarray(model.label_values)[predict_class(model, ds.features)]
    lines = ["index,predicted_label"] + [f"{i},{int(v)}" for i, v in enumerate(pred)]
    text = "\n".join(lines) + "\n"
    if args.out == "-":
        sys.stdout.write(text)
    else:
        with open(args.out, "w") as fh:
            fh.write(text)
    return 0


def cmd_eval(args) -> int:
    model = _load_model(args.model)
    ds = _data_for_model(model, args.data, args.format)
    Z = predict_logits(model, ds.features)
    acc = float(np.mean(np.argmax(Z, axis=1) == ds.labels))
    print(f"accuracy={acc:.6f}")
    print(f"mean_loss={losses(model.loss, Z, ds.labels).mean():.17g}")
    print(f"grad_norm_l1={grad_norm_l1(model.loss, Z, ds.labels):.17g}")
    for delta in (0.0, 0.5, 1.0):
        print(f"margin_fraction(delta={delta:g})={margin_fraction(Z, ds.labels, delta).fraction_below:.6f}")
    if model.loss is LossKind.LOGISTIC:
        reports = all_bounds(model, ds)
        for r in reports:
            print(r.line())
        if args.json:
            print(reports_json(reports))
    else:
        print("bound checks skipped: they apply to the logistic loss only")
    return 0


COMMANDS = {"train": cmd_train, "predict": cmd_predict, "eval": cmd_eval}


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except argparse.ArgumentTypeError as exc:
        parser.error(str(exc))
    except CliError as exc:
        print(f"resfgb {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
