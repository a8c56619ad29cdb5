"""Path-following MPC for a unicycle robot and its int8 neural approximation.

Modules
-------
path         ellipse reference path, flatness feed-forward, path errors
dynamics     augmented unicycle model and RK4 integration
ocp          optimal control problem, adjoint gradient, projected-gradient solver
dataset      corridor sampling, labeling, normalization, dataset files
mlp          ReLU network, Adam training, model files
quant        int8 post-training quantization and the integer kernel
controllers  MPFC, DNN, QDNN and QDNN+P controllers
sim          closed-loop simulation, metrics, timing, CSV export
pipeline     desk-scale end-to-end run
cli          command-line entry point
"""

from .controllers import (DEFAULT_GAINS, DnnController, PGains, QdnnController,
                          QdnnPController, make_controller)
from .dataset import CorridorConfig, CorridorScaler, NormStats, TrainingSet, generate_dataset
from .mlp import MlpParams, MlpRegressor, TrainConfig, param_count
from .ocp import MpfcController, OcpConfig, solve
from .path import DEFAULT_PATH, EllipsePath
from .quant import QuantizedMlp, QuantParams, quantize_model
from .sim import SimConfig, compute_metrics, run_closed_loop

__version__ = "0.1.0"

__all__ = ["DEFAULT_GAINS", "DnnController", "PGains", "QdnnController",
           "QdnnPController", "make_controller", "CorridorConfig", "CorridorScaler",
           "NormStats", "TrainingSet", "generate_dataset", "MlpParams",
           "MlpRegressor", "TrainConfig", "param_count", "MpfcController",
           "OcpConfig", "solve", "DEFAULT_PATH", "EllipsePath", "QuantizedMlp",
           "QuantParams", "quantize_model", "SimConfig", "compute_metrics",
           "run_closed_loop"]
