"""Desk-scale simulator for personalized federated learning with generative classifiers."""

from .adaptation import BetaMode, BetaResult, interpolate, kfold_split, optimize_beta
from .classifier import GenerativeClassifier, build_classifier, log_posterior, nll_loss, predict
from .config import ExperimentConfig, parse_config
from .datagen import ClientShard, CorruptionSpec, SyntheticTaskSpec
from .federation import AlgorithmKind, FederationConfig, RoundReport, run_federation
from .gaussian import ClassGaussian, CovOptions, regularize_covariance
from .mlp import FeatureLog, MlpParams, TrainHyper, init_mlp, train_local
from .theory import TheoremScenario, coverage_check, simulate_estimation_error, theorem_bound

__version__ = "0.1.0"

__all__ = [
    "AlgorithmKind",
    "BetaMode",
    "BetaResult",
    "ClassGaussian",
    "ClientShard",
    "CorruptionSpec",
    "CovOptions",
    "ExperimentConfig",
    "FeatureLog",
    "FederationConfig",
    "GenerativeClassifier",
    "MlpParams",
    "RoundReport",
    "SyntheticTaskSpec",
    "TheoremScenario",
    "TrainHyper",
    "build_classifier",
    "coverage_check",
    "init_mlp",
    "interpolate",
    "kfold_split",
    "log_posterior",
    "nll_loss",
    "optimize_beta",
    "parse_config",
    "predict",
    "regularize_covariance",
    "run_federation",
    "simulate_estimation_error",
    "theorem_bound",
    "train_local",
]
