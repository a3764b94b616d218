"""Iterative residual super-resolution toolkit."""

from .degradation import (DegradationModel, add_noise, apply_h, apply_ht,
                          estimate_sigma, spectral_norm_hth)
from .erd import ErdConfig, ErdWeights, ProjectionParams, erd_forward, init_weights, \
    project_residual
from .imaging import Image, PatchPair, augment, load_png, mixup, sample_patch_pair, save_png
from .metrics import EvalReport, evaluate_pair, psnr, self_ensemble, ssim
from .solver import (SolverConfig, SolverState, SolverWeights,
                     init_extrapolation_weights, initialize, run, step)
from .tensor import ParamStore, Tensor, backward, no_grad
from .trainer import (Adam, TrainConfig, TrainState, init_train_state, learning_rate,
                      load_checkpoint, save_checkpoint, train_batch, train_epoch)

__version__ = "0.1.0"

__all__ = [
    "Adam", "DegradationModel", "ErdConfig", "ErdWeights", "EvalReport", "Image",
    "ParamStore", "PatchPair", "ProjectionParams", "SolverConfig", "SolverState",
    "SolverWeights", "Tensor", "TrainConfig", "TrainState", "add_noise", "apply_h",
    "apply_ht", "augment", "backward", "erd_forward", "estimate_sigma", "evaluate_pair",
    "init_extrapolation_weights", "init_train_state", "init_weights", "initialize",
    "learning_rate", "load_checkpoint", "load_png", "mixup", "no_grad",
    "project_residual", "psnr", "run", "sample_patch_pair", "save_checkpoint",
    "save_png", "self_ensemble", "spectral_norm_hth", "ssim", "step", "train_batch",
    "train_epoch",
]
