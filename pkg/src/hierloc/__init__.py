"""Next-day location prediction with hierarchical temporal tokens and a frozen backbone."""

from .data import LocationGrid, Trajectory, generate_synthetic, load_trajectories, split_by_days
from .estimator import MobilityPredictor
from .metrics import MetricsReport, evaluate_predictions
from .model import MobilityModel, ModelConfig
from .training import TrainConfig, gradient_check, train

__version__ = "0.1.0"

__all__ = [
    "LocationGrid",
    "MetricsReport",
    "MobilityModel",
    "MobilityPredictor",
    "ModelConfig",
    "TrainConfig",
    "Trajectory",
    "evaluate_predictions",
    "generate_synthetic",
    "gradient_check",
    "load_trajectories",
    "split_by_days",
    "train",
]
