"""spikegrad: spiking-network training with surrogate-gradient BPTT and
spike-relation gradient scaling."""

__version__ = "0.1.0"

from .gradscale import GradScaleConfig, OptimizerState, lr_at_epoch, scale_gradient, sgd_step
from .neuron import LifState, NeuronParams, ResetMode, SurrogateKind
from .train import TrainConfig, evaluate, run_repetitions, train_run

__all__ = [
    "__version__",
    "GradScaleConfig",
    "OptimizerState",
    "lr_at_epoch",
    "scale_gradient",
    "sgd_step",
    "LifState",
    "NeuronParams",
    "ResetMode",
    "SurrogateKind",
    "TrainConfig",
    "evaluate",
    "run_repetitions",
    "train_run",
]
