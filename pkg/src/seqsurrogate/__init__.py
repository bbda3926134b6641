"""Sequence surrogates for simulation trajectories.

Generates 1D diffusion trajectory databases, trains a stacked-GRU
encoder-decoder and a dense state-transition baseline to forecast
trajectories from initial conditions, and provides the evaluation studies
(accuracy comparison, input-length sweep, resolution extrapolation, and
in-flight early termination).
"""

from .diffusion import (
    DiffusionConfig,
    SimulationSequence,
    analytic_concentration,
    convergence_study,
    simulate,
    solve_tridiagonal,
)
from .data import (
    Manifest,
    ParamDim,
    ParamSpace,
    Scaler,
    downsample,
    fit_scaler,
    generate_dataset,
    load_dataset,
    sample_lhs,
    sample_uniform,
    save_dataset,
    slice_variable_length,
    split_dataset,
)
from .evaluation import (
    EvaluationReport,
    StudyTable,
    early_stop_monitor,
    evaluate_test,
    extrapolation_study,
    iae,
    input_length_study,
)
from .models import (
    ConstantModel,
    OracleModel,
    Seq2SeqModel,
    StateTransitionModel,
    load_model,
    save_model,
)
from .numerics import AdamState, ParamGroup, RngStream, adam_step, grad_check
from .training import TrainConfig, TrainHistory, train_seq2seq, train_state_transition

__version__ = "0.1.0"

__all__ = [
    "AdamState",
    "ConstantModel",
    "DiffusionConfig",
    "EvaluationReport",
    "Manifest",
    "OracleModel",
    "ParamDim",
    "ParamGroup",
    "ParamSpace",
    "RngStream",
    "Scaler",
    "Seq2SeqModel",
    "SimulationSequence",
    "StateTransitionModel",
    "StudyTable",
    "TrainConfig",
    "TrainHistory",
    "adam_step",
    "analytic_concentration",
    "convergence_study",
    "downsample",
    "early_stop_monitor",
    "evaluate_test",
    "extrapolation_study",
    "fit_scaler",
    "generate_dataset",
    "grad_check",
    "iae",
    "input_length_study",
    "load_dataset",
    "load_model",
    "sample_lhs",
    "sample_uniform",
    "save_dataset",
    "save_model",
    "simulate",
    "slice_variable_length",
    "solve_tridiagonal",
    "split_dataset",
    "train_seq2seq",
    "train_state_transition",
]
