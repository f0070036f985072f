"""AdamW training state, learning-rate schedule and the single training step."""

from __future__ import annotations

import dataclasses
import enum
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..errors import DomainError, NumericsError
from ..spectra import INPUT_VOCAB
from . import transformer
from .config import ModelConfig
from .loss import LossParts, loss_and_grads, token_accuracy
from .vocab import OutputVocab

BETA1 = 0.9
BETA2 = 0.999
ADAM_EPS = 1e-8


class Phase(str, enum.Enum):
    PRETRAIN = "pretrain"
    FINETUNE = "finetune"
    TTT = "ttt"


SCHEDULES = {
    Phase.PRETRAIN: (1e-4, 0.95),
    Phase.FINETUNE: (5e-5, 0.95),
    Phase.TTT: (5e-5, 0.995),
}


def lr_schedule(phase, epoch: int, lr0: Optional[float] = None, gamma: Optional[float] = None) -> float:
    """Exponential decay ``lr0 * gamma ** epoch``; overrides replace the phase defaults."""
    if epoch < 0:
        raise DomainError(f"epoch must be >= 0, got {epoch}")
    base_lr, base_gamma = SCHEDULES[Phase(phase)]
    lr0 = base_lr if lr0 is None else lr0
    gamma = base_gamma if gamma is None else gamma
    return lr0 * gamma ** epoch


@dataclass
class TrainState:
    params: dict
    config: ModelConfig
    vocab: OutputVocab
    m: dict = None
    v: dict = None
    step: int = 0
    epoch: int = 0
    lr: float = 1e-4
    rng_seed: int = 0
    phase: str = Phase.PRETRAIN.value
    weight_decay: float = 0.0
    input_vocab: tuple = tuple(INPUT_VOCAB.itos)
    metrics: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.m is None:
            self.m = transformer.zeros_like(self.params)
        if self.v is None:
            self.v = transformer.zeros_like(self.params)
        if not self.lr >= 0:
            raise DomainError(f"learning rate must be >= 0, got {self.lr}")

    def copy(self) -> "TrainState":
        return dataclasses.replace(
            self,
            params={k: a.copy() for k, a in self.params.items()},
            m={k: a.copy() for k, a in self.m.items()},
            v={k: a.copy() for k, a in self.v.items()},
            metrics=dict(self.metrics),
        )

    def set_epoch(self, epoch: int, lr0=None, gamma=None):
        self.epoch = epoch
        self.lr = lr_schedule(self.phase, epoch, lr0, gamma)


def new_state(cfg: ModelConfig, vocab: OutputVocab, seed: int = 0, phase=Phase.PRETRAIN,
              dtype=np.float32, lr0=None) -> TrainState:
    if len(vocab) != cfg.output_vocab:
        cfg = cfg.replace(output_vocab=len(vocab))
    if cfg.input_vocab != len(INPUT_VOCAB):
        cfg = cfg.replace(input_vocab=len(INPUT_VOCAB))
    phase = Phase(phase).value
    return TrainState(transformer.init_params(cfg, seed, dtype), cfg, vocab,
                      lr=lr_schedule(phase, 0, lr0), rng_seed=seed, phase=phase)


def dropout_rng(seed: int, step: int):
    return np.random.default_rng([seed, step])


def compute_grads(params, cfg, batch, lam=1.0, rng=None, reduction="mean"):
    """``(LossParts, grads, token accuracy)``."""
    logits, fp, _, cache = transformer.forward(params, cfg, batch, rng, return_cache=True)
    parts, dlogits, dfp = loss_and_grads(logits, fp, batch, lam, reduction)
    grads = transformer.backward_from_logits(params, cfg, cache, dlogits, dfp)
    return parts, grads, token_accuracy(logits, batch)


def backward(params, cfg, batch, lam=1.0, reduction="mean") -> dict:
    """Analytic gradients of the joint loss with dropout off."""
    return compute_grads(params, cfg, batch, lam, None, reduction)[1]


def adamw_update(state: TrainState, grads: dict) -> TrainState:
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericsError(f"non-finite gradient in tensor {name!r}")
    new = state.copy()
    t = new.step + 1
    lr, wd = new.lr, new.weight_decay
    c1 = 1.0 - BETA1 ** t
    c2 = 1.0 - BETA2 ** t
    for name, p in new.params.items():
        g = grads[name]
        m, v = new.m[name], new.v[name]
        m *= BETA1
        m += (1.0 - BETA1) * g
        v *= BETA2
        v += (1.0 - BETA2) * (g * g)
        step = (m / c1) / (np.sqrt(v / c2) + ADAM_EPS)
        if wd:
            step = step + wd * p
        p -= (lr * step).astype(p.dtype, copy=False)
    new.step = t
    return new


def train_step(state: TrainState, batch, lam: float = 1.0, dropout: bool = True) -> TrainState:
    """One AdamW update on ``batch``; losses land in ``metrics``."""
    rng = dropout_rng(state.rng_seed, state.step) if dropout else None
    parts, grads, acc = compute_grads(state.params, state.config, batch, lam, rng)
    new = adamw_update(state, grads)
    new.metrics = {"step": new.step, "lr": state.lr, "ce": parts.ce, "bce": parts.bce,
                   "total": parts.total, "token_acc": acc}
    return new


def evaluate_batch(state: TrainState, batch, lam: float = 1.0):
    """``(LossParts, token accuracy)`` with dropout off."""
    logits, fp, _ = transformer.forward(state.params, state.config, batch)
    parts = loss_and_grads(logits, fp, batch, lam)[0]
    return parts, token_accuracy(logits, batch)


__all__ = ["BETA1", "BETA2", "LossParts", "Phase", "TrainState", "adamw_update", "backward",
           "compute_grads", "evaluate_batch", "lr_schedule", "new_state", "train_step"]
