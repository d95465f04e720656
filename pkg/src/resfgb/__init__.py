"""ResFGB: functional gradient boosting with residual-network feature extraction."""

__version__ = "0.1.0"

from .boost import (  # noqa: E402
    ResFGBModel,
    ResidualLayer,
    TrainConfig,
    TrainHistory,
    predict_label,
    predict_logits,
    train,
    train_sample_split,
)
from .dataio import Dataset, parse_csv, parse_libsvm  # noqa: E402
from .embed import EmbedConfig  # noqa: E402
from .linopt import SolverConfig  # noqa: E402
from .losses import LossKind  # noqa: E402

__all__ = [
    "Dataset", "EmbedConfig", "LossKind", "ResFGBModel", "ResidualLayer", "SolverConfig",
    "TrainConfig", "TrainHistory", "parse_csv", "parse_libsvm", "predict_label",
    "predict_logits", "train", "train_sample_split",
]
