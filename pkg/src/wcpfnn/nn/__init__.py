"""ReLU MLPs, PFNN losses, manual backpropagation and Adam."""
from .mlp import (ForwardTrace, MlpParams, PfnnPair, forward,
                  forward_with_preactivations, init_mlp, init_pfnn, input_scaling)
from .training import (AdamState, LossBreakdown, TrainHistory, TrainingConfig,
                       TrainingError, adam_step, gradients, loss_and_gradients,
                       loss_l0, loss_lpf, train)

__all__ = [
    "AdamState", "ForwardTrace", "LossBreakdown", "MlpParams", "PfnnPair",
    "TrainHistory", "TrainingConfig", "TrainingError", "adam_step", "forward",
    "forward_with_preactivations", "gradients", "init_mlp", "init_pfnn",
    "input_scaling", "loss_and_gradients", "loss_l0", "loss_lpf", "train",
]
