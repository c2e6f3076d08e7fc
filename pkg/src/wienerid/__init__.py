"""Online output-error identification of continuous-time stochastic Wiener models."""

from .estimator import EstimatorConfig, EstimatorSnapshot, newton_update
from .harness import ExperimentConfig, RunReport, identify, offline_cost, run_experiment, summarize
from .model import WienerModel, make_example1_model, make_example2_model
from .predictor import OEPredictor, PredictionOutput, PredictorState

__version__ = "0.1.0"

__all__ = [
    "EstimatorConfig",
    "EstimatorSnapshot",
    "ExperimentConfig",
    "OEPredictor",
    "PredictionOutput",
    "PredictorState",
    "RunReport",
    "WienerModel",
    "identify",
    "make_example1_model",
    "make_example2_model",
    "newton_update",
    "offline_cost",
    "run_experiment",
    "summarize",
]
