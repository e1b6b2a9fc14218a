"""Multi-view clustering with view-label, variance and contrastive complementarity terms."""

__version__ = "0.1.0"

from .cluster import KMeans, hungarian, kmeans
from .data import SyntheticSpec, ViewSet, load_viewset, save_viewset, synth_multiview
from .estimators import MCMVC, MCMVCPlusPlus, check_views
from .losses import LossConfig
from .metrics import MetricsReport, evaluate
from .presets import get_preset
from .training import TrainConfig, run_ablation, train_biview, train_mcmvc_plus_plus

__all__ = [
    "KMeans", "LossConfig", "MCMVC", "MCMVCPlusPlus", "MetricsReport", "SyntheticSpec",
    "TrainConfig", "ViewSet", "check_views", "evaluate", "get_preset", "hungarian", "kmeans",
    "load_viewset", "run_ablation", "save_viewset", "synth_multiview", "train_biview",
    "train_mcmvc_plus_plus",
]
