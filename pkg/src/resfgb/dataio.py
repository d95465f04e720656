"""Dataset containers, LIBSVM/CSV parsing, deterministic splitting and standardization."""

from __future__ import annotations

import bz2
import io
import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence, Union

import numpy as np

TextLike = Union[str, bytes, io.IOBase]

STD_FLOOR = 1e-8

_MASK64 = (1 << 64) - 1


class DataFormatError(ValueError):
    """Raised when an input file cannot be parsed into a dataset."""


@dataclass(frozen=True)
class Dataset:
    """Dense classification data with labels already mapped to ``0..c-1``.

    ``label_values[k]`` is the raw label that internal class ``k`` stands for.
    """

    features: np.ndarray
    labels: np.ndarray
    label_values: tuple

    def __post_init__(self):
        X = np.array(self.features, dtype=np.float64, copy=True)
        y = np.array(self.labels, dtype=np.int64, copy=True)
        if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
            raise ValueError(f"features must be a non-empty 2-D matrix, got shape {X.shape}")
        if y.shape != (X.shape[0],):
            raise ValueError(f"expected {X.shape[0]} labels, got shape {y.shape}")
        if not np.isfinite(X).all():
            raise ValueError("features contain NaN or Inf")
        c = len(self.label_values)
        if c < 2:
            raise ValueError(f"need at least 2 classes, got {c}")
        if y.min() < 0 or y.max() >= c:
            raise ValueError(f"labels must lie in [0, {c})")
        X.flags.writeable = False
        y.flags.writeable = False
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "label_values", tuple(self.label_values))

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    @property
    def c(self) -> int:
        return len(self.label_values)

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(self.features[idx], self.labels[idx], self.label_values)

    def with_features(self, features: np.ndarray) -> "Dataset":
        return Dataset(features, self.labels, self.label_values)

    def raw_labels(self) -> np.ndarray:
        return np.asarray(self.label_values)[self.labels]


def _read_text(source: TextLike) -> str:
    if isinstance(source, bytes):
        return source.decode("utf-8")
    if isinstance(source, str):
        return source
    data = source.read()
    return data.decode("utf-8") if isinstance(data, bytes) else data


def _parse_label(token: str, lineno: int) -> int:
    try:
        value = float(token)
    except ValueError:
        raise DataFormatError(f"line {lineno}: label {token!r} is not a number") from None
    if not math.isfinite(value) or not value.is_integer():
        raise DataFormatError(f"line {lineno}: label {token!r} is not an integer")
    return int(value)


def remap_labels(raw: Sequence[int], label_values: Optional[Sequence[int]] = None):
    """Map raw integer labels to ``0..c-1`` by sorted raw value.

    With ``label_values`` given, that mapping is used instead and unseen labels
    are an error.
    """
    raw = np.asarray(raw, dtype=np.int64)
    if label_values is None:
        label_values = tuple(int(v) for v in np.unique(raw))
    lookup = {int(v): k for k, v in enumerate(label_values)}
    try:
        mapped = np.array([lookup[int(v)] for v in raw], dtype=np.int64)
    except KeyError as exc:
        raise DataFormatError(f"label {exc.args[0]} not in label map {tuple(label_values)}") from None
    return mapped, tuple(int(v) for v in label_values)


def parse_libsvm(source: TextLike, d_hint: Optional[int] = None,
                 label_values: Optional[Sequence[int]] = None) -> Dataset:
    """Parse LIBSVM text (``<label> <index>:<value> ...``, 1-based indices).

    Absent indices are zero. ``d`` is ``max(d_hint, largest index seen)``.
    """
    text = _read_text(source)
    labels = []
    rows = []
    max_index = 0
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        labels.append(_parse_label(tokens[0], lineno))
        entries = []
        last = 0
        for tok in tokens[1:]:
            idx_s, sep, val_s = tok.partition(":")
            if not sep:
                raise DataFormatError(f"line {lineno}: expected index:value, got {tok!r}")
            try:
                idx = int(idx_s)
                val = float(val_s)
            except ValueError:
                raise DataFormatError(f"line {lineno}: malformed entry {tok!r}") from None
            if idx < 1:
                raise DataFormatError(f"line {lineno}: index {idx} is not 1-based")
            if idx <= last:
                raise DataFormatError(f"line {lineno}: indices not strictly ascending at {idx}")
            if not math.isfinite(val):
                raise DataFormatError(f"line {lineno}: non-finite value {val_s!r}")
            last = idx
            entries.append((idx - 1, val))
        max_index = max(max_index, last)
        rows.append(entries)
    if not rows:
        raise DataFormatError("empty input")

    d = max(d_hint or 0, max_index)
    if d < 1:
        raise DataFormatError("no features found and no dimension hint given")
    X = np.zeros((len(rows), d))
    for i, entries in enumerate(rows):
        for j, v in entries:
            X[i, j] = v
    y, values = remap_labels(labels, label_values)
    return Dataset(X, y, values)


def _is_number(tok: str) -> bool:
    try:
        float(tok)
    except ValueError:
        return False
    return True


def parse_csv(source: TextLike, label_column: str = "last",
              label_values: Optional[Sequence[int]] = None) -> Dataset:
    """Parse a comma-separated numeric table whose first or last column is the label.

    A first row containing any non-numeric cell is treated as a header and skipped.
    """
    if label_column not in ("first", "last"):
        raise ValueError(f"label_column must be 'first' or 'last', got {label_column!r}")
    lines = [(k, ln.strip()) for k, ln in enumerate(_read_text(source).splitlines(), start=1)]
    lines = [(k, ln) for k, ln in lines if ln]
    if not lines:
        raise DataFormatError("empty input")
    table = [(k, [c.strip() for c in ln.split(",")]) for k, ln in lines]
    if not all(_is_number(c) for c in table[0][1]):
        table = table[1:]
        if not table:
            raise DataFormatError("CSV has a header but no data rows")

    width = len(table[0][1])
    if width < 2:
        raise DataFormatError("CSV needs at least 2 columns (features and label)")
    values = np.empty((len(table), width))
    for i, (lineno, cells) in enumerate(table):
        if len(cells) != width:
            raise DataFormatError(f"line {lineno}: ragged row ({len(cells)} cells, expected {width})")
        for j, cell in enumerate(cells):
            try:
                values[i, j] = float(cell)
            except ValueError:
                raise DataFormatError(f"line {lineno}: non-numeric cell {cell!r}") from None
    if not np.isfinite(values).all():
        raise DataFormatError("CSV contains non-finite values")

    if label_column == "last":
        raw, X = values[:, -1], values[:, :-1]
    else:
        raw, X = values[:, 0], values[:, 1:]
    if not np.all(raw == np.round(raw)):
        raise DataFormatError("label column holds non-integer values")
    y, label_map = remap_labels(raw.astype(np.int64), label_values)
    return Dataset(X, y, label_map)


def load_dataset(path, fmt: str = "libsvm", d_hint: Optional[int] = None,
                 label_values: Optional[Sequence[int]] = None) -> Dataset:
    opener = bz2.open if str(path).endswith(".bz2") else open
    with opener(path, "rb") as fh:
        data = fh.read()
    if fmt == "libsvm":
        return parse_libsvm(data, d_hint=d_hint, label_values=label_values)
    if fmt == "csv":
        return parse_csv(data, label_values=label_values)
    raise ValueError(f"unknown format {fmt!r}")


def to_libsvm(ds: Dataset) -> str:
    """Serialize to LIBSVM text; zero entries are omitted, values use 17 significant digits."""
    out = []
    raw = ds.raw_labels()
    for i in range(ds.n):
        row = ds.features[i]
        nz = np.flatnonzero(row)
        parts = [str(int(raw[i]))] + [f"{j + 1}:{row[j]:.17g}" for j in nz]
        out.append(" ".join(parts))
    return "\n".join(out) + "\n"


# --------------------------------------------------------------------------
# deterministic shuffling

class SplitMix64:
    """SplitMix64 generator (Steele, Lea & Flood), used for reproducible partitions.

    next() returns the standard 64-bit output sequence for the given seed.
    """

    def __init__(self, seed: int):
        self.state = int(seed) & _MASK64

    def next(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & _MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return z ^ (z >> 31)


def shuffled_indices(n: int, seed: int) -> np.ndarray:
    """Fisher-Yates permutation of ``range(n)``.

    For i = n-1 down to 1, swap i with j = next() mod (i+1).
    """
    rng = SplitMix64(seed)
    perm = list(range(n))
    for i in range(n - 1, 0, -1):
        j = rng.next() % (i + 1)
        perm[i], perm[j] = perm[j], perm[i]
    return np.array(perm, dtype=np.int64)


@dataclass(frozen=True)
class SplitSpec:
    valid_fraction: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.valid_fraction < 1.0:
            raise ValueError(f"valid_fraction must be in [0, 1), got {self.valid_fraction}")


def split_indices(n: int, spec: SplitSpec):
    """Return sorted (train, valid) index arrays.

    The first ``round(n * valid_fraction)`` entries of the shuffled permutation
    form the validation part (round half up).
    """
    n_valid = int(math.floor(n * spec.valid_fraction + 0.5))
    perm = shuffled_indices(n, spec.seed)
    valid = np.sort(perm[:n_valid])
    train = np.sort(perm[n_valid:])
    return train, valid


def split_train_valid(ds: Dataset, spec: SplitSpec):
    """Split into (train, valid). ``valid`` is None when ``valid_fraction == 0``."""
    if spec.valid_fraction == 0:
        return ds, None
    train, valid = split_indices(ds.n, spec)
    if len(valid) == 0 or len(train) == 0:
        raise ValueError(
            f"split of n={ds.n} at valid_fraction={spec.valid_fraction} leaves an empty part")
    return ds.subset(train), ds.subset(valid)


# --------------------------------------------------------------------------
# standardization

@dataclass(frozen=True)
class Standardizer:
    mean: np.ndarray
    scale: np.ndarray

    def transform(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.shape[-1] != self.mean.shape[0]:
            raise ValueError(f"expected {self.mean.shape[0]} features, got {X.shape[-1]}")
        return (X - self.mean) / self.scale

    def apply(self, ds: Dataset) -> Dataset:
        return ds.with_features(self.transform(ds.features))


def fit_standardizer(X: np.ndarray, floor: float = STD_FLOOR) -> Standardizer:
    X = np.asarray(X, dtype=np.float64)
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    # near-constant columns are only centered
    scale = np.where(std < floor, 1.0, std)
    return Standardizer(mean, scale)


def standardize(ds: Dataset):
    """Fit a per-feature standardizer on ``ds`` and return it with the transformed data."""
    st = fit_standardizer(ds.features)
    return st, st.apply(ds)


def concat(datasets: Iterable[Dataset]) -> Dataset:
    datasets = list(datasets)
    return Dataset(np.vstack([d.features for d in datasets]),
                   np.concatenate([d.labels for d in datasets]),
                   datasets[0].label_values)
