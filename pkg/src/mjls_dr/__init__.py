"""Mode estimation, ambiguity-set learning and distributionally robust
output-feedback control for Markov jump linear systems."""

from .core import (MJLSModel, ModelError, TransitionMatrix, control_example, estimation_example,
                   input_effect_matrix, load_model, observability_matrix, predict_outputs,
                   sample_chain, save_model, simulate)

__version__ = "0.1.0"

__all__ = [
    "MJLSModel", "ModelError", "TransitionMatrix", "control_example", "estimation_example",
    "input_effect_matrix", "load_model", "observability_matrix", "predict_outputs",
    "sample_chain", "save_model", "simulate",
]
