"""Grid-wide significant wave height from sparse buoys with a frozen transformer backbone."""
from .backbone import TRAINABLE, ModelParams, read_weights, write_weights
from .data import BuoyDataset, GridField, GridSpec, read_grid_field, synth_generate, write_grid_field
from .model import ModelConfig, OrcaModel
from .tensor import Tensor, precision
from .training import Metrics, TrainConfig, evaluate, split_time, train

__version__ = "0.1.0"
__all__ = ["TRAINABLE", "BuoyDataset", "GridField", "GridSpec", "Metrics", "ModelConfig", "ModelParams",
           "OrcaModel", "Tensor", "TrainConfig", "evaluate", "precision", "read_grid_field", "read_weights",
           "split_time", "synth_generate", "train", "write_grid_field", "write_weights"]
