"""Bayesian and frequentist learning for spiking neural networks."""

from .srm import (DimensionError, KernelConfig, LayerTopology, SpikeTrain, SrmNetwork, SrmState,
                  kernel_values, run_sequence, step)
from .local import (ReadoutMatrices, error_signal, local_loss, surrogate_derivative,
                    three_factor_grad)
from .frequentist import SgdConfig, SteState, sgd_step, ste_step, train_offline
from .bayes import (BernoulliPosterior, GaussianPosterior, ViConfig, bernoulli_vi_step,
                    free_energy, gaussian_vi_step, gs_sample, hard_predict, predict,
                    sample_gaussian)
from .metrics import CalibrationReport, bin_predictions, ece, reliability_diagram

__version__ = "0.1.0"

__all__ = [
    "DimensionError", "KernelConfig", "LayerTopology", "SpikeTrain", "SrmNetwork", "SrmState",
    "kernel_values", "run_sequence", "step", "ReadoutMatrices", "error_signal", "local_loss",
    "surrogate_derivative", "three_factor_grad", "SgdConfig", "SteState", "sgd_step", "ste_step",
    "train_offline", "BernoulliPosterior", "GaussianPosterior", "ViConfig", "bernoulli_vi_step",
    "free_energy", "gaussian_vi_step", "gs_sample", "hard_predict", "predict", "sample_gaussian",
    "CalibrationReport", "bin_predictions", "ece", "reliability_diagram",
]
