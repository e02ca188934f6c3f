from .layers import Sequential, Dense, BiLSTM, Flatten, GaussianNoise, StateError
from .training import AdamState, adam_step, train_model, fem_specs, cpm_specs
from .serial import (save_weights, load_weights, load_model, WeightsError,
                     CorruptWeightsError, WeightsVersionError, WeightsShapeError)
from .gradcheck import finite_difference_check

__all__ = [
    "Sequential", "Dense", "BiLSTM", "Flatten", "GaussianNoise", "StateError",
    "AdamState", "adam_step", "train_model", "fem_specs", "cpm_specs",
    "save_weights", "load_weights", "load_model", "WeightsError",
    "CorruptWeightsError", "WeightsVersionError", "WeightsShapeError",
    "finite_difference_check",
]
