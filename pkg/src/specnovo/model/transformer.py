"""Pre-LN encoder-decoder transformer with a fingerprint head, numpy only.

Parameters live in a flat ``dict`` of arrays keyed by dotted names so the
optimizer, checkpointing and gradient checks can treat them uniformly.
Every layer has a ``*_f`` forward returning ``(out, cache)`` and a matching
``*_b`` backward that accumulates into a gradient dict.

Shapes: B batch, S source length, T target length, D model width,
H heads, E = D // H per-head width, V output vocabulary, W fingerprint width.
"""

from __future__ import annotations

import numpy as np

from ..errors import DimensionError
from .config import ModelConfig

NEG = -1e9
LN_EPS = 1e-5
_GELU_C = float(np.sqrt(2.0 / np.pi))


# ---------------------------------------------------------------- parameters

def init_params(cfg: ModelConfig, seed: int = 0, dtype=np.float32) -> dict:
    rng = np.random.default_rng(seed)
    d, f = cfg.d_model, cfg.ffn_dim
    p = {}

    def dense(name, n_in, n_out):
        p[name + ".W"] = rng.normal(0.0, n_in ** -0.5, (n_in, n_out))
        p[name + ".b"] = np.zeros(n_out)

    def norm(name):
        p[name + ".g"] = np.ones(d)
        p[name + ".b"] = np.zeros(d)

    def attn(name):
        for part in "qkvo":
            dense(f"{name}.{part}", d, d)

    p["enc.tok"] = rng.normal(0.0, d ** -0.5, (cfg.input_vocab, d))
    p["enc.pos"] = rng.normal(0.0, d ** -0.5, (cfg.max_len, d))
    for i in range(cfg.encoder_layers):
        pre = f"enc.{i}"
        norm(pre + ".ln1")
        attn(pre + ".attn")
        norm(pre + ".ln2")
        dense(pre + ".ff1", d, f)
        dense(pre + ".ff2", f, d)
    norm("enc.ln")

    p["dec.tok"] = rng.normal(0.0, d ** -0.5, (cfg.output_vocab, d))
    p["dec.pos"] = rng.normal(0.0, d ** -0.5, (cfg.max_len, d))
    for i in range(cfg.decoder_layers):
        pre = f"dec.{i}"
        norm(pre + ".ln1")
        attn(pre + ".self")
        norm(pre + ".ln2")
        attn(pre + ".cross")
        norm(pre + ".ln3")
        dense(pre + ".ff1", d, f)
        dense(pre + ".ff2", f, d)
    norm("dec.ln")
    dense("out", d, cfg.output_vocab)

    dense("fp.1", d, d)
    dense("fp.2", d, cfg.fingerprint_width)
    return {k: v.astype(dtype) for k, v in p.items()}


def zeros_like(params: dict) -> dict:
    return {k: np.zeros_like(v) for k, v in params.items()}


def _acc(grads, name, value):
    if name in grads:
        grads[name] += value
    else:
        grads[name] = value


# ------------------------------------------------------------------ layers

def linear_f(x, W, b):
    return x @ W + b, x


def linear_b(dy, x, W, grads, name):
    _acc(grads, name + ".W", x.reshape(-1, x.shape[-1]).T @ dy.reshape(-1, dy.shape[-1]))
    _acc(grads, name + ".b", dy.reshape(-1, dy.shape[-1]).sum(0))
    return dy @ W.T


def layernorm_f(x, g, b):
    mu = x.mean(-1, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(-1, keepdims=True) + LN_EPS)
    xh = xc * inv
    return xh * g + b, (xh, inv)


def layernorm_b(dy, cache, g, grads, name):
    xh, inv = cache
    _acc(grads, name + ".g", (dy * xh).reshape(-1, xh.shape[-1]).sum(0))
    _acc(grads, name + ".b", dy.reshape(-1, xh.shape[-1]).sum(0))
    dxh = dy * g
    return inv * (dxh - dxh.mean(-1, keepdims=True) - xh * (dxh * xh).mean(-1, keepdims=True))


def gelu_f(x):
    t = np.tanh(_GELU_C * (x + 0.044715 * (x * x * x)))
    return 0.5 * x * (1.0 + t), (x, t)


def gelu_b(dy, cache):
    x, t = cache
    return dy * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * _GELU_C * (1.0 + 3 * 0.044715 * x * x))


def dropout_f(x, rate, rng):
    if rng is None or rate <= 0.0:
        return x, None
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / x.dtype.type(1.0 - rate)
    return x * keep, keep


def dropout_b(dy, keep):
    return dy if keep is None else dy * keep


def softmax(z, axis=-1):
    z = z - z.max(axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis, keepdims=True)


def _split(x, H):
    B, T, D = x.shape
    return x.reshape(B, T, H, D // H).transpose(0, 2, 1, 3)


def _merge(x):
    B, H, T, E = x.shape
    return x.transpose(0, 2, 1, 3).reshape(B, T, H * E)


def mha_f(p, name, xq, xkv, mask_add, H):
    """Multi-head attention; ``mask_add`` broadcasts to [B, H, Tq, Tk]."""
    q, _ = linear_f(xq, p[name + ".q.W"], p[name + ".q.b"])
    k, _ = linear_f(xkv, p[name + ".k.W"], p[name + ".k.b"])
    v, _ = linear_f(xkv, p[name + ".v.W"], p[name + ".v.b"])
    qh, kh, vh = _split(q, H), _split(k, H), _split(v, H)
    scale = xq.dtype.type(qh.shape[-1] ** -0.5)
    P = softmax(qh @ kh.transpose(0, 1, 3, 2) * scale + mask_add)
    O = _merge(P @ vh)
    out, _ = linear_f(O, p[name + ".o.W"], p[name + ".o.b"])
    return out, (xq, xkv, qh, kh, vh, P, O, scale)


def mha_b(dout, cache, p, name, H, grads):
    xq, xkv, qh, kh, vh, P, O, scale = cache
    dO = _split(linear_b(dout, O, p[name + ".o.W"], grads, name + ".o"), H)
    dP = dO @ vh.transpose(0, 1, 3, 2)
    dv = P.transpose(0, 1, 3, 2) @ dO
    dS = P * (dP - (dP * P).sum(-1, keepdims=True)) * scale
    dq = dS @ kh
    dk = dS.transpose(0, 1, 3, 2) @ qh
    dxq = linear_b(_merge(dq), xq, p[name + ".q.W"], grads, name + ".q")
    dxkv = linear_b(_merge(dk), xkv, p[name + ".k.W"], grads, name + ".k")
    dxkv = dxkv + linear_b(_merge(dv), xkv, p[name + ".v.W"], grads, name + ".v")
    return dxq, dxkv


def ffn_f(p, name, x):
    h, c1 = linear_f(x, p[name + ".ff1.W"], p[name + ".ff1.b"])
    a, c2 = gelu_f(h)
    y, c3 = linear_f(a, p[name + ".ff2.W"], p[name + ".ff2.b"])
    return y, (c1, c2, c3)


def ffn_b(dy, cache, p, name, grads):
    c1, c2, c3 = cache
    da = linear_b(dy, c3, p[name + ".ff2.W"], grads, name + ".ff2")
    dh = gelu_b(da, c2)
    return linear_b(dh, c1, p[name + ".ff1.W"], grads, name + ".ff1")


# ------------------------------------------------------------------ blocks

def enc_layer_f(p, pre, x, key_add, cfg, rng):
    h, c_ln1 = layernorm_f(x, p[pre + ".ln1.g"], p[pre + ".ln1.b"])
    a, c_att = mha_f(p, pre + ".attn", h, h, key_add, cfg.num_heads)
    a, k1 = dropout_f(a, cfg.dropout, rng)
    x = x + a
    h, c_ln2 = layernorm_f(x, p[pre + ".ln2.g"], p[pre + ".ln2.b"])
    f, c_ff = ffn_f(p, pre, h)
    f, k2 = dropout_f(f, cfg.dropout, rng)
    return x + f, (c_ln1, c_att, k1, c_ln2, c_ff, k2)


def enc_layer_b(dy, cache, p, pre, cfg, grads):
    c_ln1, c_att, k1, c_ln2, c_ff, k2 = cache
    dh = ffn_b(dropout_b(dy, k2), c_ff, p, pre, grads)
    dx = dy + layernorm_b(dh, c_ln2, p[pre + ".ln2.g"], grads, pre + ".ln2")
    dq, dkv = mha_b(dropout_b(dx, k1), c_att, p, pre + ".attn", cfg.num_heads, grads)
    return dx + layernorm_b(dq + dkv, c_ln1, p[pre + ".ln1.g"], grads, pre + ".ln1")


def dec_layer_f(p, pre, y, mem, self_add, cross_add, cfg, rng):
    h, c_ln1 = layernorm_f(y, p[pre + ".ln1.g"], p[pre + ".ln1.b"])
    a, c_self = mha_f(p, pre + ".self", h, h, self_add, cfg.num_heads)
    a, k1 = dropout_f(a, cfg.dropout, rng)
    y = y + a
    h, c_ln2 = layernorm_f(y, p[pre + ".ln2.g"], p[pre + ".ln2.b"])
    a, c_cross = mha_f(p, pre + ".cross", h, mem, cross_add, cfg.num_heads)
    a, k2 = dropout_f(a, cfg.dropout, rng)
    y = y + a
    h, c_ln3 = layernorm_f(y, p[pre + ".ln3.g"], p[pre + ".ln3.b"])
    f, c_ff = ffn_f(p, pre, h)
    f, k3 = dropout_f(f, cfg.dropout, rng)
    return y + f, (c_ln1, c_self, k1, c_ln2, c_cross, k2, c_ln3, c_ff, k3)


def dec_layer_b(dy, cache, p, pre, cfg, grads):
    """Returns (d input, d memory)."""
    c_ln1, c_self, k1, c_ln2, c_cross, k2, c_ln3, c_ff, k3 = cache
    dh = ffn_b(dropout_b(dy, k3), c_ff, p, pre, grads)
    dy = dy + layernorm_b(dh, c_ln3, p[pre + ".ln3.g"], grads, pre + ".ln3")
    dq, dmem = mha_b(dropout_b(dy, k2), c_cross, p, pre + ".cross", cfg.num_heads, grads)
    dy = dy + layernorm_b(dq, c_ln2, p[pre + ".ln2.g"], grads, pre + ".ln2")
    dq, dkv = mha_b(dropout_b(dy, k1), c_self, p, pre + ".self", cfg.num_heads, grads)
    dy = dy + layernorm_b(dq + dkv, c_ln1, p[pre + ".ln1.g"], grads, pre + ".ln1")
    return dy, dmem


# ------------------------------------------------------------------ model

def _check_ids(ids, vocab, what, cfg):
    if ids.ndim != 2:
        raise DimensionError(f"{what} ids must be 2-D [batch, seq], got shape {ids.shape}")
    if ids.shape[1] > cfg.max_len:
        raise DimensionError(f"{what} length {ids.shape[1]} exceeds max_len {cfg.max_len}")
    if ids.size and (ids.min() < 0 or ids.max() >= vocab):
        raise DimensionError(f"{what} ids must lie in [0, {vocab})")


def key_mask(mask, dtype):
    """[B, S] bool -> additive [B, 1, 1, S]."""
    return np.where(mask, 0.0, NEG).astype(dtype)[:, None, None, :]


def causal_mask(T, dtype):
    i = np.arange(T)
    return np.where(i[None, :] > i[:, None], NEG, 0.0).astype(dtype)[None, None]


def encode(p, cfg, src, src_mask, rng=None):
    src = np.asarray(src)
    _check_ids(src, cfg.input_vocab, "input", cfg)
    if src_mask.shape != src.shape:
        raise DimensionError("input mask shape differs from input ids")
    dtype = p["enc.tok"].dtype
    S = src.shape[1]
    x, k0 = dropout_f(p["enc.tok"][src] + p["enc.pos"][:S], cfg.dropout, rng)
    add = key_mask(src_mask, dtype)
    caches = []
    for i in range(cfg.encoder_layers):
        x, c = enc_layer_f(p, f"enc.{i}", x, add, cfg, rng)
        caches.append(c)
    mem, c_ln = layernorm_f(x, p["enc.ln.g"], p["enc.ln.b"])
    return mem, (src, k0, caches, c_ln)


def encode_b(dmem, cache, p, cfg, grads):
    src, k0, caches, c_ln = cache
    dx = layernorm_b(dmem, c_ln, p["enc.ln.g"], grads, "enc.ln")
    for i in reversed(range(cfg.encoder_layers)):
        dx = enc_layer_b(dx, caches[i], p, f"enc.{i}", cfg, grads)
    dx = dropout_b(dx, k0)
    S = src.shape[1]
    dtok = np.zeros_like(p["enc.tok"])
    np.add.at(dtok, src, dx)
    _acc(grads, "enc.tok", dtok)
    dpos = np.zeros_like(p["enc.pos"])
    dpos[:S] = dx.sum(0)
    _acc(grads, "enc.pos", dpos)


def decode(p, cfg, mem, src_mask, tgt_in, rng=None):
    """Token logits [B, T, V] for teacher-forced decoder input ``tgt_in``."""
    tgt_in = np.asarray(tgt_in)
    _check_ids(tgt_in, cfg.output_vocab, "target", cfg)
    if mem.shape[0] != tgt_in.shape[0]:
        raise DimensionError("memory and target batch sizes differ")
    dtype = p["dec.tok"].dtype
    T = tgt_in.shape[1]
    y, k0 = dropout_f(p["dec.tok"][tgt_in] + p["dec.pos"][:T], cfg.dropout, rng)
    self_add = causal_mask(T, dtype)
    cross_add = key_mask(src_mask, dtype)
    caches = []
    for i in range(cfg.decoder_layers):
        y, c = dec_layer_f(p, f"dec.{i}", y, mem, self_add, cross_add, cfg, rng)
        caches.append(c)
    z, c_ln = layernorm_f(y, p["dec.ln.g"], p["dec.ln.b"])
    logits, _ = linear_f(z, p["out.W"], p["out.b"])
    return logits, (tgt_in, k0, caches, c_ln, z)


def decode_b(dlogits, cache, p, cfg, grads):
    """Returns d memory."""
    tgt_in, k0, caches, c_ln, z = cache
    dz = linear_b(dlogits, z, p["out.W"], grads, "out")
    dy = layernorm_b(dz, c_ln, p["dec.ln.g"], grads, "dec.ln")
    dmem = None
    for i in reversed(range(cfg.decoder_layers)):
        dy, dm = dec_layer_b(dy, caches[i], p, f"dec.{i}", cfg, grads)
        dmem = dm if dmem is None else dmem + dm
    dy = dropout_b(dy, k0)
    T = tgt_in.shape[1]
    dtok = np.zeros_like(p["dec.tok"])
    np.add.at(dtok, tgt_in, dy)
    _acc(grads, "dec.tok", dtok)
    dpos = np.zeros_like(p["dec.pos"])
    dpos[:T] = dy.sum(0)
    _acc(grads, "dec.pos", dpos)
    return dmem


def pool(mem, src_mask):
    """Masked mean over source positions; all-padding rows pool to zero."""
    m = src_mask.astype(mem.dtype)[:, :, None]
    cnt = np.maximum(m.sum(1), 1.0)
    return (mem * m).sum(1) / cnt, (m, cnt)


def pool_b(dpooled, cache):
    m, cnt = cache
    return m * (dpooled / cnt)[:, None, :]


def fp_head_f(p, pooled):
    h, c1 = linear_f(pooled, p["fp.1.W"], p["fp.1.b"])
    a, c2 = gelu_f(h)
    out, c3 = linear_f(a, p["fp.2.W"], p["fp.2.b"])
    return out, (c1, c2, c3)


def fp_head_b(dout, cache, p, grads):
    c1, c2, c3 = cache
    da = linear_b(dout, c3, p["fp.2.W"], grads, "fp.2")
    return linear_b(gelu_b(da, c2), c1, p["fp.1.W"], grads, "fp.1")


def fingerprint_logits(p, cfg, src, src_mask):
    mem, _ = encode(p, cfg, src, src_mask)
    pooled, _ = pool(mem, src_mask)
    out, _ = fp_head_f(p, pooled)
    return out


def forward(p, cfg, batch, rng=None, return_cache=False):
    """Token logits [B, T, V], fingerprint logits [B, W], pooled encoder state [B, D].

    ``rng`` switches dropout on; ``None`` is the deterministic eval mode.
    """
    if batch.tgt_in.shape[0] != batch.src.shape[0]:
        raise DimensionError("input and target batch sizes differ")
    mem, c_enc = encode(p, cfg, batch.src, batch.src_mask, rng)
    logits, c_dec = decode(p, cfg, mem, batch.src_mask, batch.tgt_in, rng)
    pooled, c_pool = pool(mem, batch.src_mask)
    fp, c_fp = fp_head_f(p, pooled)
    if return_cache:
        return logits, fp, pooled, (c_enc, c_dec, c_pool, c_fp)
    return logits, fp, pooled


def backward_from_logits(p, cfg, cache, dlogits, dfp) -> dict:
    c_enc, c_dec, c_pool, c_fp = cache
    grads = {}
    dmem = decode_b(dlogits, c_dec, p, cfg, grads)
    dmem = dmem + pool_b(fp_head_b(dfp, c_fp, p, grads), c_pool)
    encode_b(dmem, c_enc, p, cfg, grads)
    for k, v in p.items():
        if k not in grads:
            grads[k] = np.zeros_like(v)
    return {k: grads[k].astype(p[k].dtype, copy=False) for k in p}
