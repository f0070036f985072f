"""Test-time tuning: adapt the model on pool samples that resemble the test inputs.

Each update picks a few random test points, takes the pool records whose
fingerprint logits are most cosine-similar to each, and runs one training
step on the union. Pool embeddings are cached and only recomputed at refresh
boundaries. Large pools are first narrowed by k-means to the cluster whose
centroid best matches the mean test embedding. Tuning stops once the
cumulative set of selected pool records stops growing.
"""

from __future__ import annotations

import hashlib
import json
import warnings
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .chem import canonical_smiles
from .errors import DomainError, NumericsError
from .model import transformer
from .model.batch import collate, make_example
from .model.train import lr_schedule, train_step
from .spectra import SpectrumRecord, render_peaks


@dataclass(frozen=True)
class TttConfig:
    test_points_per_iter: int = 4
    neighbors_per_point: int = 64
    refresh_interval: int = 10
    kmeans_k: int = 32
    kmeans_iters: int = 50
    kmeans_threshold: int = 10_000
    patience: int = 50
    max_updates: int = 1_000
    lam: float = 1.0
    lr: Optional[float] = None      # None: phase default
    gamma: Optional[float] = None
    seed: int = 0
    true_fingerprints: bool = False
    dropout: bool = False
    max_peaks: int = 512
    embed_batch: int = 64

    def __post_init__(self):
        for name in ("test_points_per_iter", "neighbors_per_point", "refresh_interval", "kmeans_k",
                     "kmeans_iters", "patience", "max_updates", "embed_batch"):
            if getattr(self, name) < 1:
                raise DomainError(f"{name} must be >= 1")

    @property
    def batch_size(self):
        return self.test_points_per_iter * self.neighbors_per_point


# ------------------------------------------------------------------ pool

def spectrum_hash(rec: SpectrumRecord) -> str:
    return hashlib.sha1(render_peaks(rec.spectrum).encode()).hexdigest()


class CandidatePool:
    """Labeled records plus a cached fingerprint-logit matrix."""

    def __init__(self, records, vocab, fp_width: int, max_peaks: int = 512):
        self.records = list(records)
        if any(r.smiles is None for r in self.records):
            raise DomainError("pool records must carry SMILES labels")
        self.examples = [make_example(r, vocab, fp_width, max_peaks) for r in self.records]
        self.fp_width = fp_width
        self.logits_cache: Optional[np.ndarray] = None
        self.cache_rows: Optional[np.ndarray] = None
        self.cache_step: Optional[int] = None
        self.n_embeds = 0

    def __len__(self):
        return len(self.records)

    def true_fingerprints(self, rows) -> np.ndarray:
        return np.stack([self.examples[i].fp for i in rows]).astype(np.float64)

    def refresh(self, state, rows, cfg: TttConfig):
        rows = np.asarray(rows, dtype=np.int64)
        self.logits_cache = embed_examples(state, [self.examples[i] for i in rows], cfg.embed_batch)
        self.cache_rows = rows
        self.cache_step = state.step
        self.n_embeds += 1

    def is_valid(self, state) -> bool:
        return self.cache_step is not None and self.cache_step == state.step


def embed_examples(state, examples, batch_size: int = 64) -> np.ndarray:
    if not examples:
        raise DomainError("cannot embed an empty subset")
    cfg = state.config
    out = np.empty((len(examples), cfg.fingerprint_width), dtype=np.float64)
    order = sorted(range(len(examples)), key=lambda i: len(examples[i].src))
    for start in range(0, len(order), batch_size):
        idx = order[start : start + batch_size]
        b = collate([examples[i] for i in idx], cfg.max_len, cfg.fingerprint_width)
        out[idx] = transformer.fingerprint_logits(state.params, cfg, b.src, b.src_mask)
    return out


def embed_pool(state, records, max_peaks: int = 512, batch_size: int = 64) -> np.ndarray:
    """Fingerprint logits [n, W] of records' spectrum+formula inputs (dropout off)."""
    records = list(records)
    if not records:
        raise DomainError("cannot embed an empty subset")
    ex = [make_example(SpectrumRecord(r.spectrum, r.formula), None, state.config.fingerprint_width,
                       max_peaks) for r in records]
    return embed_examples(state, ex, batch_size)


# ------------------------------------------------------------------ selection

def _unit_rows(M, what):
    M = np.asarray(M, dtype=np.float64)
    norms = np.linalg.norm(M, axis=-1)
    bad = np.flatnonzero(norms == 0)
    if bad.size:
        raise NumericsError(f"zero-norm {what} row {int(bad[0])}")
    return M / norms[..., None]


def cosine_scores(query, pool_logits) -> np.ndarray:
    q = _unit_rows(np.atleast_2d(query), "query")[0]
    return _unit_rows(pool_logits, "pool") @ q


def select_neighbors(query, pool_logits, n: int) -> np.ndarray:
    """Indices of the ``n`` rows with largest cosine similarity; ties go to the lower index."""
    sims = cosine_scores(query, pool_logits)
    if not 1 <= n <= sims.shape[0]:
        raise DomainError(f"n must be in [1, {sims.shape[0]}], got {n}")
    order = np.lexsort((np.arange(sims.shape[0]), -sims))
    return order[:n]


def kmeans(X, k: int, iters: int = 50, seed: int = 0, tol: float = 1e-6):
    """Lloyd's algorithm with k-means++ seeding. Returns ``(labels, centroids)``."""
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    if not 1 <= k <= n:
        raise DomainError(f"k must be in [1, {n}], got {k}")
    rng = np.random.default_rng(seed)
    C = np.empty((k, X.shape[1]))
    C[0] = X[rng.integers(n)]
    d2 = ((X - C[0]) ** 2).sum(1)
    for j in range(1, k):
        total = d2.sum()
        idx = rng.choice(n, p=d2 / total) if total > 0 else int(rng.integers(n))
        C[j] = X[idx]
        d2 = np.minimum(d2, ((X - C[j]) ** 2).sum(1))
    labels = np.zeros(n, dtype=np.int64)
    for _ in range(iters):
        dist = (X * X).sum(1)[:, None] - 2 * X @ C.T + (C * C).sum(1)[None, :]
        labels = dist.argmin(1)
        new = C.copy()
        taken = set()
        for j in range(k):
            members = labels == j
            if members.any():
                new[j] = X[members].mean(0)
                continue
            # re-seed an empty cluster at the point farthest from its centroid
            far = dist[np.arange(n), labels]
            for i in np.argsort(-far, kind="stable"):
                if int(i) not in taken:
                    taken.add(int(i))
                    new[j] = X[i]
                    labels[i] = j
                    break
        moved = np.sqrt(((new - C) ** 2).sum(1)).max()
        C = new
        if moved < tol:
            break
    dist = (X * X).sum(1)[:, None] - 2 * X @ C.T + (C * C).sum(1)[None, :]
    labels = dist.argmin(1)
    return labels, C


def kmeans_select(pool_logits, test_logits, k: int, iters: int = 50, seed: int = 0):
    """``(member indices, cluster id)`` of the cluster best aligned with the test mean."""
    labels, C = kmeans(pool_logits, k, iters, seed)
    target = np.asarray(test_logits, dtype=np.float64).mean(0)
    occupied = np.unique(labels)
    sims = _unit_rows(C[occupied], "centroid") @ _unit_rows(target[None], "test mean")[0]
    best = int(occupied[np.lexsort((occupied, -sims))[0]])
    return np.flatnonzero(labels == best), best


def kmeans_preselect(pool_logits, test_logits, k: int, iters: int = 50, seed: int = 0) -> np.ndarray:
    return kmeans_select(pool_logits, test_logits, k, iters, seed)[0]


# ------------------------------------------------------------------ tuning loop

@dataclass
class TttTrace:
    records: list = field(default_factory=list)
    reason: Optional[str] = None

    def cumulative(self):
        return [r["cum_selected"] for r in self.records]

    def to_jsonl(self) -> str:
        lines = [json.dumps(r) for r in self.records]
        lines.append(json.dumps({"final": True, "reason": self.reason, "updates": len(self.records)}))
        return "\n".join(lines) + "\n"


class _Work:
    """Working-set bookkeeping between refreshes."""

    def __init__(self, pool, test_examples, cfg):
        self.pool = pool
        self.test_examples = test_examples
        self.cfg = cfg
        self.large = len(pool) > cfg.kmeans_threshold
        self.rows = np.arange(len(pool))
        self.cluster = None
        self.test_logits = None
        self.side = None

    def refresh(self, state, n_refresh):
        cfg = self.cfg
        self.test_logits = embed_examples(state, self.test_examples, cfg.embed_batch)
        self.pool.refresh(state, np.arange(len(self.pool)), cfg)
        if self.large:
            k = min(cfg.kmeans_k, len(self.pool))
            members, self.cluster = kmeans_select(self.pool.logits_cache, self.test_logits, k,
                                                  cfg.kmeans_iters, cfg.seed + n_refresh)
            self.rows = members
        if cfg.true_fingerprints:
            self.side = self.pool.true_fingerprints(self.rows)
        else:
            self.side = self.pool.logits_cache[self.rows]


def ttt_step(state, pool: CandidatePool, test_logits, test_ids, cfg: TttConfig,
             rows=None, side=None):
    """One adaptation update. Returns ``(new state, sorted selected pool ids)``."""
    rows = np.arange(len(pool)) if rows is None else np.asarray(rows)
    if side is None:
        if pool.logits_cache is None:
            raise DomainError("pool cache is empty; call pool.refresh first")
        side = pool.logits_cache[rows]
    n = cfg.neighbors_per_point
    if n > len(rows):
        warnings.warn(f"neighbors_per_point {n} exceeds working pool {len(rows)}; clamped",
                      RuntimeWarning, stacklevel=2)
        n = len(rows)
    chosen = set()
    for t in test_ids:
        chosen.update(int(rows[j]) for j in select_neighbors(test_logits[t], side, n))
    selected = sorted(chosen)
    batch = collate([pool.examples[i] for i in selected], state.config.max_len, state.config.fingerprint_width)
    return train_step(state, batch, cfg.lam, dropout=cfg.dropout), selected


def ttt_run(state, pool: CandidatePool, test_records, cfg: TttConfig = TttConfig(),
            trace_path=None):
    """Tune until the selected set saturates. Returns ``(state, TttTrace)``."""
    test_records = list(test_records)
    if not test_records or not len(pool):
        raise DomainError("ttt_run needs a non-empty pool and test set")
    test_ex = [make_example(SpectrumRecord(r.spectrum, r.formula), None, state.config.fingerprint_width,
                            cfg.max_peaks) for r in test_records]
    rng = np.random.default_rng(cfg.seed)
    trace = TttTrace()
    work = _Work(pool, test_ex, cfg)
    state = state.copy()
    state.phase = "ttt"
    selected_all = set()
    stale = 0
    n_refresh = 0
    fh = open(trace_path, "w", encoding="utf-8") if trace_path else None
    try:
        for update in range(cfg.max_updates):
            refreshed = update % cfg.refresh_interval == 0
            if refreshed:
                work.refresh(state, n_refresh)
                n_refresh += 1
            state.lr = lr_schedule("ttt", update, cfg.lr, cfg.gamma)
            n_tp = min(cfg.test_points_per_iter, len(test_ex))
            test_ids = sorted(int(i) for i in rng.choice(len(test_ex), n_tp, replace=False))
            lr = state.lr
            state, selected = ttt_step(state, pool, work.test_logits, test_ids, cfg, work.rows, work.side)
            new = [i for i in selected if i not in selected_all]
            selected_all.update(new)
            stale = 0 if new else stale + 1
            rec = {"step": state.step, "update": update + 1, "test_ids": test_ids, "selected_ids": selected,
                   "new_ids": len(new), "cum_selected": len(selected_all), "batch_size": len(selected),
                   "ce": state.metrics["ce"], "bce": state.metrics["bce"], "lr": lr,
                   "cluster": work.cluster, "refreshed": refreshed, "cache_step": pool.cache_step,
                   "working_size": int(len(work.rows))}
            trace.records.append(rec)
            if fh:
                fh.write(json.dumps(rec) + "\n")
            if stale >= cfg.patience:
                trace.reason = "saturated"
                break
        else:
            trace.reason = "max_updates"
    except BaseException as exc:
        trace.reason = f"error: {type(exc).__name__}: {exc}"
        raise
    finally:
        if fh:
            fh.write(json.dumps({"final": True, "reason": trace.reason, "updates": len(trace.records)}) + "\n")
            fh.close()
    return state, trace


# ------------------------------------------------------------------ pool extension

def extend_pool(sources):
    """Concatenate ``[(name, records)]`` dropping (canonical SMILES, spectrum) duplicates.

    Returns ``(records, manifest)``; each kept record gets a ``pool_source`` tag.
    """
    seen = set()
    out = []
    manifest = {"sources": [], "total": 0, "duplicates": 0}
    for name, records in sources:
        added = dup = 0
        for r in records:
            key = (canonical_smiles(r.smiles) or r.smiles, spectrum_hash(r))
            if key in seen:
                dup += 1
                continue
            seen.add(key)
            extra = dict(r.extra)
            extra["pool_source"] = name
            out.append(SpectrumRecord(r.spectrum, r.formula, r.smiles, extra))
            added += 1
        manifest["sources"].append({"name": name, "records": added + dup, "added": added, "duplicates": dup})
        manifest["duplicates"] += dup
    manifest["total"] = len(out)
    return out, manifest


def config_dict(cfg: TttConfig) -> dict:
    return asdict(cfg)
