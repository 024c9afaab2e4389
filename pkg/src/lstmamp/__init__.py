"""LSTM emulation of a gain-conditioned tube amplifier, built on plain numpy."""
from .dataset import Dataset, build_dataset, generate_excitation, split_dataset, tensorize
from .model import (LstmParams, ModelConfig, ModelFileError, forward_batch, forward_window,
                    load_model, lstm_cell_step, save_model)
from .realtime import Stream, benchmark_throughput, process_signal
from .surrogate import AmpParams, amp_process
from .training import TrainConfig, evaluate, init_params, relative_rmse_percent, train

__version__ = "0.1.0"

__all__ = [
    "AmpParams", "Dataset", "LstmParams", "ModelConfig", "ModelFileError", "Stream",
    "TrainConfig", "amp_process", "benchmark_throughput", "build_dataset", "evaluate",
    "forward_batch", "forward_window", "generate_excitation", "init_params", "load_model",
    "lstm_cell_step", "process_signal", "relative_rmse_percent", "save_model",
    "split_dataset", "tensorize", "train",
]
