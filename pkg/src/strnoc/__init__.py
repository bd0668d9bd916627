"""Number-of-contributors estimation for forensic STR profiles.

Simulator, tensor encoder, a multi-output dense network written in numpy,
training/fine-tuning, evaluation and an explainability report.
"""

from .encoder import build_labels, encode_compact, encode_profile, filter_artefact_peaks
from .estimators import DeepNoCClassifier, MACClassifier, ProfileEncoder
from .evaluator import confusion, mac_estimate, metrics, threshold_sweep
from .kit import KitConfig, default_kit, load_kit_config
from .model import DeepNoCModel, build_model, load_weights, save_weights
from .simulator import SimParams, SimulatedProfile, simulate_profile, simulate_record
from .trainer import TrainConfig, fine_tune, train

__version__ = "0.1.0"

__all__ = [
    "DeepNoCClassifier",
    "DeepNoCModel",
    "KitConfig",
    "MACClassifier",
    "ProfileEncoder",
    "SimParams",
    "SimulatedProfile",
    "TrainConfig",
    "build_labels",
    "build_model",
    "confusion",
    "default_kit",
    "encode_compact",
    "encode_profile",
    "filter_artefact_peaks",
    "fine_tune",
    "load_kit_config",
    "load_weights",
    "mac_estimate",
    "metrics",
    "save_weights",
    "simulate_profile",
    "simulate_record",
    "threshold_sweep",
    "train",
]
