"""Encoder-decoder with fingerprint head, its loss, optimizer and checkpoints."""

from .batch import Batch, Example, collate, make_example
from .checkpoint import load_checkpoint, save_checkpoint
from .config import ModelConfig, preset
from .loss import LossParts, loss_joint, token_accuracy
from .train import Phase, TrainState, backward, lr_schedule, new_state, train_step
from .transformer import forward, init_params
from .vocab import OutputVocab

__all__ = [
    "Batch",
    "Example",
    "LossParts",
    "ModelConfig",
    "OutputVocab",
    "Phase",
    "TrainState",
    "backward",
    "collate",
    "forward",
    "init_params",
    "load_checkpoint",
    "lr_schedule",
    "loss_joint",
    "make_example",
    "new_state",
    "preset",
    "save_checkpoint",
    "token_accuracy",
    "train_step",
]
