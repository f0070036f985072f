"""Turning records into padded teacher-forcing batches."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ..chem import fingerprint, parse_smiles
from ..spectra import DEFAULT_MAX_PEAKS, INPUT_VOCAB, SpectrumRecord, format_input, preprocess
from .vocab import OutputVocab


@dataclass(frozen=True)
class Example:
    src: tuple
    tgt: Optional[tuple] = None
    fp: Optional[np.ndarray] = None


@dataclass
class Batch:
    src: np.ndarray        # [B, S] input ids
    src_mask: np.ndarray   # [B, S] True on real tokens
    tgt_in: np.ndarray     # [B, T] <bos> + tokens
    tgt_out: np.ndarray    # [B, T] tokens + <eos>
    tgt_mask: np.ndarray   # [B, T]
    fp: np.ndarray         # [B, W] target bits as floats
    fp_mask: np.ndarray    # [B] rows that carry a fingerprint target

    def __len__(self):
        return self.src.shape[0]


def input_ids(record: SpectrumRecord, max_peaks: int = DEFAULT_MAX_PEAKS, **kw) -> tuple:
    return format_input(preprocess(record.spectrum, max_peaks=max_peaks), record.formula, **kw).tokens


def make_example(record: SpectrumRecord, vocab: Optional[OutputVocab], fp_width: int,
                 max_peaks: int = DEFAULT_MAX_PEAKS, **format_kw) -> Example:
    src = input_ids(record, max_peaks, **format_kw)
    if record.smiles is None or vocab is None:
        return Example(src)
    tgt = tuple(vocab.encode(record.smiles))
    bits = fingerprint(parse_smiles(record.smiles), fp_width).bits.astype(np.float32)
    return Example(src, tgt, bits)


def collate(examples: Sequence[Example], max_len: int, fp_width: int,
            dtype=np.float32) -> Batch:
    """Pad to the longest member. Sequences longer than ``max_len`` are truncated."""
    B = len(examples)
    srcs = [list(e.src[:max_len]) for e in examples]
    tgts = [list(e.tgt) if e.tgt is not None else [] for e in examples]
    tin = [([1] + t)[:max_len] for t in tgts]
    tout = [(t + [2])[:max_len] for t in tgts]
    S = max(1, max(len(s) for s in srcs))
    T = max(1, max(len(t) for t in tin))
    src = np.full((B, S), INPUT_VOCAB.pad_id, dtype=np.int64)
    src_mask = np.zeros((B, S), dtype=bool)
    tgt_in = np.zeros((B, T), dtype=np.int64)
    tgt_out = np.zeros((B, T), dtype=np.int64)
    tgt_mask = np.zeros((B, T), dtype=bool)
    fp = np.zeros((B, fp_width), dtype=dtype)
    fp_mask = np.zeros(B, dtype=bool)
    for i, e in enumerate(examples):
        src[i, : len(srcs[i])] = srcs[i]
        src_mask[i, : len(srcs[i])] = True
        if e.tgt is not None:
            tgt_in[i, : len(tin[i])] = tin[i]
            tgt_out[i, : len(tout[i])] = tout[i]
            tgt_mask[i, : len(tout[i])] = True
        if e.fp is not None:
            fp[i] = e.fp
            fp_mask[i] = bool(srcs[i])
    return Batch(src, src_mask, tgt_in, tgt_out, tgt_mask, fp, fp_mask)


def pad_batch(batch: Batch, extra_src: int = 0, extra_tgt: int = 0) -> Batch:
    """Append padding columns; used to check padding invariance."""
    def grow(a, n, fill):
        if n == 0:
            return a
        pad = np.full((a.shape[0], n), fill, dtype=a.dtype)
        return np.concatenate([a, pad], axis=1)

    return Batch(grow(batch.src, extra_src, INPUT_VOCAB.pad_id), grow(batch.src_mask, extra_src, False),
                 grow(batch.tgt_in, extra_tgt, 0), grow(batch.tgt_out, extra_tgt, 0),
                 grow(batch.tgt_mask, extra_tgt, False), batch.fp, batch.fp_mask)
