"""Decoder-side SMILES token vocabulary."""

from __future__ import annotations

from typing import Iterable

from ..chem.smiles import AROMATIC_ORGANIC, BOND_CHARS, ORGANIC, tokenize_smiles
from ..errors import TokenError

PAD, BOS, EOS, UNK = "<pad>", "<bos>", "<eos>", "<unk>"
SPECIALS = (PAD, BOS, EOS, UNK)

BASE_TOKENS = (
    SPECIALS
    + ORGANIC
    + AROMATIC_ORGANIC
    + tuple(BOND_CHARS)
    + ("(", ")", ".")
    + tuple("123456789")
)


class OutputVocab:
    """Token list in id order. Base tokens first, then corpus-specific ones."""

    def __init__(self, tokens: Iterable[str] = BASE_TOKENS):
        self.itos = list(tokens)
        if tuple(self.itos[:4]) != SPECIALS:
            raise TokenError("output vocabulary must start with the special tokens", 0)
        if len(set(self.itos)) != len(self.itos):
            raise TokenError("duplicate tokens in output vocabulary", 0)
        self.stoi = {t: k for k, t in enumerate(self.itos)}

    @classmethod
    def build(cls, smiles: Iterable[str]) -> "OutputVocab":
        seen = dict.fromkeys(BASE_TOKENS)
        for s in smiles:
            for t in tokenize_smiles(s):
                seen.setdefault(t.text)
        return cls(seen)

    def __len__(self):
        return len(self.itos)

    def __eq__(self, other):
        return isinstance(other, OutputVocab) and self.itos == other.itos

    pad_id = property(lambda self: 0)
    bos_id = property(lambda self: 1)
    eos_id = property(lambda self: 2)
    unk_id = property(lambda self: 3)

    def encode(self, smiles: str) -> list:
        return [self.stoi.get(t.text, self.unk_id) for t in tokenize_smiles(smiles)]

    def decode(self, ids: Iterable[int]) -> str:
        out = []
        for i in ids:
            i = int(i)
            if i == self.eos_id:
                break
            if i >= 4:
                out.append(self.itos[i])
        return "".join(out)
