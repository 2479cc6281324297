"""Deep-seeded clustering for emotion recognition from wearable signals."""

from .autoencoder import AutoencoderModel
from .clustering import ClusterState
from .config import RunConfig, TrainConfig
from .evaluation import EvaluationReport, make_folds, metrics, run_cv, sensitivity_sweep
from .signals import SignalSession, WindowSet, ingest_e4_csv, make_windows, preprocess
from .trainer import TrainedModel, fit, predict, train

__version__ = "0.1.0"
__all__ = [
    "AutoencoderModel", "ClusterState", "EvaluationReport", "RunConfig", "SignalSession",
    "TrainConfig", "TrainedModel", "WindowSet", "fit", "ingest_e4_csv", "make_folds",
    "make_windows", "metrics", "predict", "preprocess", "run_cv", "sensitivity_sweep", "train",
]
