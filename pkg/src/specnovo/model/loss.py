"""Token cross-entropy plus fingerprint binary cross-entropy."""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from ..errors import DomainError, NumericsError


class LossParts(NamedTuple):
    total: float
    ce: float
    bce: float


def _log_softmax(z):
    z = z - z.max(-1, keepdims=True)
    return z - np.log(np.exp(z).sum(-1, keepdims=True))


def _denoms(batch, width, reduction):
    if reduction == "sum":
        return 1.0, 1.0
    if reduction != "mean":
        raise DomainError(f"reduction must be 'mean' or 'sum', got {reduction!r}")
    return max(int(batch.tgt_mask.sum()), 1), max(int(batch.fp_mask.sum()), 1) * width


def _check_finite(logits, fp_logits):
    if np.isnan(logits).any():
        raise NumericsError("NaN in token logits")
    if np.isnan(fp_logits).any():
        raise NumericsError("NaN in fingerprint logits")


def loss_and_grads(logits, fp_logits, batch, lam=1.0, reduction="mean"):
    """``(LossParts, d logits, d fingerprint logits)``."""
    if lam < 0:
        raise DomainError(f"lambda must be >= 0, got {lam}")
    _check_finite(logits, fp_logits)
    n_tok, n_bits = _denoms(batch, fp_logits.shape[1], reduction)

    mask = batch.tgt_mask
    logp = _log_softmax(logits)
    picked = np.take_along_axis(logp, batch.tgt_out[..., None], -1)[..., 0]
    ce = float(-(picked * mask).sum() / n_tok)
    dlogits = np.exp(logp)
    np.put_along_axis(dlogits, batch.tgt_out[..., None],
                      np.take_along_axis(dlogits, batch.tgt_out[..., None], -1) - 1.0, -1)
    dlogits *= (mask / n_tok).astype(logits.dtype)[..., None]

    x, y = fp_logits, batch.fp
    rows = batch.fp_mask.astype(x.dtype)[:, None]
    per_bit = np.maximum(x, 0) - x * y + np.log1p(np.exp(-np.abs(x)))
    bce = float((per_bit * rows).sum() / n_bits)
    sig = 0.5 * (1.0 + np.tanh(0.5 * x))
    dfp = ((sig - y) * rows * x.dtype.type(lam / n_bits)).astype(x.dtype)

    total = ce + lam * bce
    if not np.isfinite(total):
        raise NumericsError(f"non-finite loss (ce={ce}, bce={bce})")
    return LossParts(total, ce, bce), dlogits, dfp


def loss_joint(logits, fp_logits, batch, lam=1.0, reduction="mean") -> LossParts:
    return loss_and_grads(logits, fp_logits, batch, lam, reduction)[0]


def token_accuracy(logits, batch) -> float:
    n = int(batch.tgt_mask.sum())
    if n == 0:
        return 0.0
    hit = (logits.argmax(-1) == batch.tgt_out) & batch.tgt_mask
    return float(hit.sum() / n)
