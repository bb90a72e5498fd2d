"""A small reverse-mode differentiation engine on top of numpy."""

from . import nn, ops
from .checkpoint import load_checkpoint, save_checkpoint
from .gradcheck import gradcheck
from .optim import Adam, adam_step, exp_lr_decay
from .tensor import Tape, Tensor, active_tape

__all__ = [
    "Adam",
    "Tape",
    "Tensor",
    "active_tape",
    "adam_step",
    "exp_lr_decay",
    "gradcheck",
    "load_checkpoint",
    "nn",
    "ops",
    "save_checkpoint",
]
