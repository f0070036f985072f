"""Model hyperparameters and named presets."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

from ..errors import DomainError


@dataclass(frozen=True)
class ModelConfig:
    d_model: int = 64
    num_heads: int = 4
    encoder_layers: int = 2
    decoder_layers: int = 2
    ffn_dim: int = 128
    input_vocab: int = 34
    output_vocab: int = 40
    fingerprint_width: int = 256
    dropout: float = 0.1
    max_len: int = 1024

    def __post_init__(self):
        for name in ("d_model", "num_heads", "encoder_layers", "decoder_layers", "ffn_dim",
                     "input_vocab", "output_vocab", "fingerprint_width", "max_len"):
            if int(getattr(self, name)) < 1:
                raise DomainError(f"{name} must be >= 1")
        if self.d_model % self.num_heads:
            raise DomainError(f"d_model {self.d_model} not divisible by num_heads {self.num_heads}")
        if not 0.0 <= self.dropout < 1.0:
            raise DomainError(f"dropout must be in [0, 1), got {self.dropout}")

    @property
    def head_dim(self):
        return self.d_model // self.num_heads

    def replace(self, **kw) -> "ModelConfig":
        return dataclasses.replace(self, **kw)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise DomainError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


PRESETS = {
    "toy": dict(d_model=64, num_heads=4, encoder_layers=2, decoder_layers=2, ffn_dim=128,
                fingerprint_width=256, dropout=0.1, max_len=1024),
    "paper": dict(d_model=1024, num_heads=8, encoder_layers=6, decoder_layers=6, ffn_dim=2048,
                  fingerprint_width=2048, dropout=0.1, max_len=1024),
    # gradient checking
    "micro": dict(d_model=8, num_heads=2, encoder_layers=1, decoder_layers=1, ffn_dim=16,
                  fingerprint_width=16, dropout=0.0, max_len=32),
}


def preset(name: str, **overrides) -> ModelConfig:
    try:
        base = dict(PRESETS[name])
    except KeyError:
        raise DomainError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    base.update(overrides)
    return ModelConfig(**base)
