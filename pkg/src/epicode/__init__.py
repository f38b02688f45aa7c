"""Checkpoint-space model extrapolation composed with contrastive decoding,
plus a trainable toy language model, a Monte Carlo study of the logit-error
model, and an experiment harness."""

from .checkpoint import CompatReport, TensorMap, check_compat, load, save
from .decode import (
    ContrastedLogits,
    DecodePolicy,
    DecodeTrace,
    LogitProvider,
    contrast_logits,
    contrastive_decode_trace,
    greedy_decode,
    plausibility_mask,
    softmax,
    strong_only_decode,
)
from .errors import IncompatibleMaps, NumericError, ValidationError
from .extrapolate import (
    ExtrapolationConfig,
    extrapolate,
    interpolate,
    locality_gain,
    param_distance,
)
from .theory import (
    ErrorScenario,
    TrueTask,
    argmax_flip_rate,
    cd_error,
    estimate_error_std,
    predicted_error_std,
    sample_error_pair,
)
from .toy_lm import (
    OptimizerConfig,
    ToyConfig,
    ToyProvider,
    TrainState,
    adamw_update,
    as_provider,
    central_difference,
    forward,
    grad_check,
    init,
    loss,
    loss_and_grads,
    tensor_names,
    train_epochs,
)

__version__ = "0.1.0"

__all__ = [
    "CompatReport",
    "ContrastedLogits",
    "DecodePolicy",
    "DecodeTrace",
    "ErrorScenario",
    "ExtrapolationConfig",
    "IncompatibleMaps",
    "LogitProvider",
    "NumericError",
    "OptimizerConfig",
    "TensorMap",
    "ToyConfig",
    "ToyProvider",
    "TrainState",
    "TrueTask",
    "ValidationError",
    "adamw_update",
    "argmax_flip_rate",
    "as_provider",
    "cd_error",
    "central_difference",
    "check_compat",
    "contrast_logits",
    "contrastive_decode_trace",
    "estimate_error_std",
    "extrapolate",
    "forward",
    "grad_check",
    "greedy_decode",
    "init",
    "interpolate",
    "load",
    "locality_gain",
    "loss",
    "loss_and_grads",
    "param_distance",
    "plausibility_mask",
    "predicted_error_std",
    "sample_error_pair",
    "save",
    "softmax",
    "strong_only_decode",
    "tensor_names",
    "train_epochs",
]
