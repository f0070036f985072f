"""Shared harnesses: finite-difference gradient check and small synthetic batches."""

import numpy as np

from specnovo.model import Batch, init_params, preset
from specnovo.model.loss import loss_joint
from specnovo.model.train import backward
from specnovo.model.transformer import forward


def random_batch(cfg, B=3, S=5, T=4, seed=0):
    """Random ids with ragged padding on both sides and one row without a fingerprint."""
    rng = np.random.default_rng(seed)
    src = rng.integers(4, cfg.input_vocab, (B, S))
    sm = np.ones((B, S), bool)
    sm[min(1, B - 1), S - 2:] = False
    src[~sm] = 0
    tin = rng.integers(0, cfg.output_vocab, (B, T))
    tout = rng.integers(0, cfg.output_vocab, (B, T))
    tm = np.ones((B, T), bool)
    tm[B - 1, T // 2:] = False
    fp = (rng.random((B, cfg.fingerprint_width)) < 0.5).astype(np.float64)
    fm = np.ones(B, bool)
    fm[-1] = False
    return Batch(src, sm, tin, tout, tm, fp, fm)


def micro_setup(seed=1, **overrides):
    kw = dict(input_vocab=11, output_vocab=9, fingerprint_width=6)
    kw.update(overrides)
    cfg = preset("micro", **kw)
    return cfg, init_params(cfg, seed, np.float64)


def gradcheck(params, cfg, batch, lam=0.7, eps=1e-5, names=None, floor=1e-6):
    """Max relative error per tensor between analytic and central-difference gradients.

    Relative error of a tensor is ``max|num - ana| / max(max|num|, max|ana|, floor)``.
    """
    grads = backward(params, cfg, batch, lam)

    def loss():
        logits, fp, _ = forward(params, cfg, batch)
        return loss_joint(logits, fp, batch, lam).total

    out = {}
    for name in names or sorted(params):
        a = params[name]
        num = np.zeros_like(a)
        for idx in np.ndindex(a.shape):
            old = a[idx]
            a[idx] = old + eps
            lp = loss()
            a[idx] = old - eps
            lm = loss()
            a[idx] = old
            num[idx] = (lp - lm) / (2 * eps)
        scale = max(np.abs(num).max(), np.abs(grads[name]).max(), floor)
        out[name] = float(np.abs(num - grads[name]).max() / scale)
    return out
