import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from oracles import cosine_topn

from specnovo import synth
from specnovo.errors import DomainError, NumericsError
from specnovo.model import OutputVocab, new_state, preset, train_step
from specnovo.model.batch import collate
from specnovo.spectra import SpectrumRecord
from specnovo.ttt import (
    CandidatePool, TttConfig, embed_pool, extend_pool, kmeans, kmeans_preselect, select_neighbors,
    ttt_run, ttt_step,
)

MAX_PEAKS = 3


@pytest.fixture(scope="module")
def corpus():
    smi = synth.molecule_set(31, 24, "A", 3, 6)
    return smi, synth.make_records(smi, seed=4)


@pytest.fixture(scope="module")
def base(corpus):
    smi, _ = corpus
    return new_state(preset("micro", max_len=256), OutputVocab.build(smi), seed=2)


def unlabeled(records):
    return [SpectrumRecord(r.spectrum, r.formula) for r in records]


class TestSelect:
    def test_self_first(self):
        rng = np.random.default_rng(0)
        M = rng.normal(size=(50, 8))
        out = select_neighbors(M[17], M, 5)
        assert out[0] == 17
        q = M[17] / np.linalg.norm(M[17])
        assert np.isclose(q @ (M[17] / np.linalg.norm(M[17])), 1.0)

    def test_orthogonal_ties_by_index(self):
        M = np.zeros((6, 4))
        M[:, 1] = np.arange(1, 7)
        assert list(select_neighbors(np.array([1.0, 0, 0, 0]), M, 4)) == [0, 1, 2, 3]

    def test_zero_norm(self):
        M = np.ones((4, 3))
        M[2] = 0
        with pytest.raises(NumericsError, match="row 2"):
            select_neighbors(np.ones(3), M, 2)
        with pytest.raises(NumericsError, match="query"):
            select_neighbors(np.zeros(3), np.ones((4, 3)), 2)

    def test_n_range(self):
        with pytest.raises(DomainError):
            select_neighbors(np.ones(3), np.ones((4, 3)), 5)

    @given(st.integers(0, 2 ** 32 - 1), st.lists(st.integers(0, 4), min_size=2, max_size=60), st.data())
    def test_oracle_with_ties(self, seed, picks, data):
        # rows repeat a few base vectors, so exact ties occur and must break to the lower index
        basis = np.random.default_rng(seed).normal(size=(5, 6))
        M = basis[picks]
        q = basis[data.draw(st.integers(0, 4))] + data.draw(st.sampled_from([0.0, 0.3]))
        n = data.draw(st.integers(1, len(M)))
        assert list(select_neighbors(q, M, n)) == cosine_topn(q, M, n)


class TestKmeans:
    def test_k_one(self):
        X = np.random.default_rng(1).normal(size=(30, 4))
        labels, C = kmeans(X, 1)
        assert (labels == 0).all() and np.allclose(C[0], X.mean(0))
        assert list(kmeans_preselect(X, X[:3], 1)) == list(range(30))

    def test_blobs(self):
        rng = np.random.default_rng(7)
        a = rng.normal(size=(40, 6)) * 0.1 + np.array([5, 0, 0, 0, 0, 0])
        b = rng.normal(size=(40, 6)) * 0.1 + np.array([0, 5, 0, 0, 0, 0])
        X = np.concatenate([a, b])
        assert list(kmeans_preselect(X, a[:5] + 0.01, 2, seed=3)) == list(range(40))

    def test_k_equals_n(self):
        rng = np.random.default_rng(2)
        X = rng.normal(size=(12, 3))
        labels, _ = kmeans(X, 12)
        assert len(set(labels.tolist())) == 12
        sel = kmeans_preselect(X, X[[4]], 12)
        assert list(sel) == [int(np.argmax((X / np.linalg.norm(X, axis=1)[:, None]) @ X[4]))]

    def test_k_range(self):
        with pytest.raises(DomainError):
            kmeans(np.ones((3, 2)), 4)

    def test_deterministic(self):
        X = np.random.default_rng(3).normal(size=(100, 5))
        a, b = kmeans(X, 6, seed=9), kmeans(X, 6, seed=9)
        assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


class TestEmbed:
    def test_shape_and_duplicates(self, base, corpus):
        _, recs = corpus
        E = embed_pool(base, [recs[0], recs[1], recs[0]], max_peaks=MAX_PEAKS)
        assert E.shape == (3, base.config.fingerprint_width)
        assert np.array_equal(E[0], E[2])

    def test_batching_invariant(self, base, corpus):
        _, recs = corpus
        a = embed_pool(base, recs, MAX_PEAKS, batch_size=64)
        b = embed_pool(base, recs, MAX_PEAKS, batch_size=5)
        assert np.allclose(a, b, atol=1e-5)

    def test_empty(self, base):
        with pytest.raises(DomainError):
            embed_pool(base, [])

    def test_cache_invalidated_by_update(self, base, corpus):
        _, recs = corpus
        pool = CandidatePool(recs, base.vocab, base.config.fingerprint_width, MAX_PEAKS)
        pool.refresh(base, np.arange(len(pool)), TttConfig())
        assert pool.is_valid(base)
        s = base.copy()
        s.lr = 1e-2
        cfg = s.config
        s = train_step(s, collate(pool.examples[:4], cfg.max_len, cfg.fingerprint_width), dropout=False)
        assert not pool.is_valid(s)
        assert not np.array_equal(embed_pool(s, recs[:3], MAX_PEAKS), pool.logits_cache[:3])

    def test_pool_needs_labels(self, base, corpus):
        _, recs = corpus
        with pytest.raises(DomainError):
            CandidatePool(unlabeled(recs), base.vocab, 16)


class TestStep:
    def test_defaults_batch_bound(self):
        assert TttConfig().batch_size == 256

    def test_identical_points_collapse(self, base, corpus):
        _, recs = corpus
        pool = CandidatePool(recs * 3, base.vocab, base.config.fingerprint_width, MAX_PEAKS)
        cfg = TttConfig(neighbors_per_point=8, max_peaks=MAX_PEAKS)
        pool.refresh(base, np.arange(len(pool)), cfg)
        test_logits = np.repeat(pool.logits_cache[:1], 4, axis=0)
        _, sel = ttt_step(base, pool, test_logits, [0, 1, 2, 3], cfg)
        assert len(sel) == 8

    def test_zero_lr(self, base, corpus):
        _, recs = corpus
        pool = CandidatePool(recs, base.vocab, base.config.fingerprint_width, MAX_PEAKS)
        cfg = TttConfig(neighbors_per_point=4, max_peaks=MAX_PEAKS)
        pool.refresh(base, np.arange(len(pool)), cfg)
        s = base.copy()
        s.lr = 0.0
        new, sel = ttt_step(s, pool, pool.logits_cache[:2], [0, 1], cfg)
        assert sel and all(np.array_equal(new.params[k], s.params[k]) for k in s.params)

    def test_clamp_warning(self, base, corpus):
        _, recs = corpus
        pool = CandidatePool(recs[:5], base.vocab, base.config.fingerprint_width, MAX_PEAKS)
        cfg = TttConfig(neighbors_per_point=64, max_peaks=MAX_PEAKS)
        pool.refresh(base, np.arange(len(pool)), cfg)
        with pytest.warns(RuntimeWarning, match="clamped"):
            _, sel = ttt_step(base, pool, pool.logits_cache[:1], [0], cfg)
        assert sel == [0, 1, 2, 3, 4]


class TestRun:
    def test_saturating_pool(self, base, corpus, tmp_path):
        _, recs = corpus
        pool = CandidatePool([recs[0]] * 64, base.vocab, base.config.fingerprint_width, MAX_PEAKS)
        cfg = TttConfig(patience=5, max_peaks=MAX_PEAKS)
        _, trace = ttt_run(base, pool, unlabeled(recs[:6]), cfg, tmp_path / "t.jsonl")
        assert trace.reason == "saturated" and len(trace.records) <= 6
        lines = (tmp_path / "t.jsonl").read_text().splitlines()
        assert json.loads(lines[-1]) == {"final": True, "reason": "saturated", "updates": len(trace.records)}

    def test_lr_zero_and_trace(self, base, corpus):
        _, recs = corpus
        pool = CandidatePool(recs, base.vocab, base.config.fingerprint_width, MAX_PEAKS)
        cfg = TttConfig(test_points_per_iter=2, neighbors_per_point=3, lr=0.0, patience=4,
                        max_updates=30, max_peaks=MAX_PEAKS)
        out, trace = ttt_run(base, pool, unlabeled(recs[:5]), cfg)
        assert all(np.array_equal(out.params[k], base.params[k]) for k in base.params)
        cum = trace.cumulative()
        assert cum == sorted(cum) and trace.reason in ("saturated", "max_updates")
        for r in trace.records:
            assert r["batch_size"] <= cfg.batch_size and len(r["test_ids"]) == 2
            assert set(r["selected_ids"]) <= set(range(len(pool)))

    def test_max_updates(self, base, corpus):
        _, recs = corpus
        pool = CandidatePool(recs, base.vocab, base.config.fingerprint_width, MAX_PEAKS)
        cfg = TttConfig(neighbors_per_point=1, test_points_per_iter=1, max_updates=3, max_peaks=MAX_PEAKS)
        _, trace = ttt_run(base, pool, unlabeled(recs[:5]), cfg)
        assert trace.reason == "max_updates" and len(trace.records) == 3

    def test_large_pool_refresh(self, base, corpus):
        _, recs = corpus
        pool = CandidatePool(recs, base.vocab, base.config.fingerprint_width, MAX_PEAKS)
        cfg = TttConfig(neighbors_per_point=2, refresh_interval=3, kmeans_threshold=10, kmeans_k=3,
                        max_updates=8, patience=100, max_peaks=MAX_PEAKS, lr=1e-3)
        _, trace = ttt_run(base, pool, unlabeled(recs[:4]), cfg)
        refreshed = [r["update"] for r in trace.records if r["refreshed"]]
        assert refreshed == [1, 4, 7]
        steps = [r["cache_step"] for r in trace.records]
        for r, prev in zip(trace.records[1:], trace.records):
            if not r["refreshed"]:
                assert r["cache_step"] == prev["cache_step"]
            else:
                assert r["cache_step"] == r["step"] - 1
        assert steps[0] == base.step
        assert all(r["cluster"] is not None and r["working_size"] < len(pool) or r["working_size"] == len(pool)
                   for r in trace.records)

    def test_empty_inputs(self, base, corpus):
        _, recs = corpus
        pool = CandidatePool(recs, base.vocab, base.config.fingerprint_width, MAX_PEAKS)
        with pytest.raises(DomainError):
            ttt_run(base, pool, [], TttConfig())

    def test_config_validation(self):
        with pytest.raises(DomainError):
            TttConfig(patience=0)


def test_extend_pool(corpus):
    _, recs = corpus
    out, manifest = extend_pool([("a", recs[:10]), ("b", recs[5:15])])
    assert len(out) == 15 and manifest["duplicates"] == 5
    assert [s["name"] for s in manifest["sources"]] == ["a", "b"]
    assert {r.extra["pool_source"] for r in out} == {"a", "b"}
