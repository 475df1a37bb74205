"""Inverse-then-forward mixture of affine regressions.

Train a mixture of locally-affine maps from a low-dimensional output space
(pose angles, box shifts, optional latent nuisance coordinates) to a
high-dimensional feature space, then invert it in closed form to predict
outputs from features. Includes the pyramid gradient descriptor, an
iterative pose-plus-box predictor, leave-one-out evaluation, BIC model
selection, synthetic generators with brute-force oracles, and binary
containers for models and feature matrices.
"""

from .errors import (ContractError, DataError, DegenerateInputError,
                     GridResolutionError, HgllimError,
                     IllConditionedModelError, InternalConsistencyError,
                     TrainingFailedError)
from .model import (ForwardModel, InverseModel, LatentSpec, OutputLayout,
                    TrainingSet, derive_forward, forward_log_weights,
                    forward_weights, joint_log_density, predict_mean)
from .em import (BicResult, IterationRecord, LatentPosterior,
                 Responsibilities, SweepRecord, TrainResult, TrainingConfig,
                 bic, e_step_w, e_step_z, init_params, m_step_gmm,
                 m_step_mapping, sweep_components, train)
from .synthetic import (GeneratorSpec, OraclePosterior, SyntheticDraw,
                        oracle_posterior, random_model, sample)
from .hog import (BoundingBox, DESCRIPTOR_DIM, extract, extract_batch,
                  phog, preprocess)
from .containers import (load_features, load_model, save_features,
                         save_model, save_model_json)
from .manifest import ExperimentManifest, read_report_manifest, write_report_csv
from .pose import (LooReport, PoseSample, PredictionOutput, ShiftTrial,
                   Variant, VARIANTS, evaluate_loo, iterative_predict,
                   load_csv_dataset, load_prima_dataset, resolve_variant,
                   run_shift_harness, simulate_shift, single_shot_predict)

__version__ = "0.1.0"

__all__ = [
    "HgllimError", "ContractError", "DataError", "DegenerateInputError",
    "GridResolutionError", "IllConditionedModelError",
    "InternalConsistencyError", "TrainingFailedError",
    "LatentSpec", "OutputLayout", "TrainingSet", "InverseModel",
    "ForwardModel", "derive_forward", "forward_log_weights",
    "forward_weights", "predict_mean", "joint_log_density",
    "TrainingConfig", "Responsibilities", "LatentPosterior",
    "IterationRecord", "TrainResult", "BicResult", "SweepRecord",
    "init_params", "e_step_w", "e_step_z", "m_step_gmm", "m_step_mapping",
    "train", "bic", "sweep_components",
    "GeneratorSpec", "SyntheticDraw", "OraclePosterior", "sample",
    "random_model", "oracle_posterior",
    "BoundingBox", "DESCRIPTOR_DIM", "extract", "extract_batch", "phog",
    "preprocess",
    "save_model", "load_model", "save_features", "load_features",
    "save_model_json",
    "ExperimentManifest", "write_report_csv", "read_report_manifest",
    "PoseSample", "PredictionOutput", "Variant", "VARIANTS",
    "resolve_variant", "simulate_shift", "iterative_predict",
    "single_shot_predict", "LooReport", "evaluate_loo", "ShiftTrial",
    "run_shift_harness", "load_csv_dataset", "load_prima_dataset",
    "__version__",
]
