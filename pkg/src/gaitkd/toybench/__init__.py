from .checkpoint import load_checkpoint, save_checkpoint
from .data import Dataset, SynthConfig, generate_dataset
from .model import ModelConfig, ToyModel
from .train import TrainConfig, TrainResult, distill, evaluate_model, train

__all__ = ["SynthConfig", "Dataset", "generate_dataset", "ModelConfig", "ToyModel", "TrainConfig",
           "TrainResult", "train", "distill", "evaluate_model", "save_checkpoint", "load_checkpoint"]
