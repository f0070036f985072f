import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from specnovo import decode as dec
from specnovo.chem import canonical_smiles, formula_of, parse_smiles
from specnovo.decode import (
    Budget, Hypothesis, TokenTable, allowed_tokens, beam_search, length_penalty, predict_topk,
)
from specnovo.errors import DeadEnd, DomainError, EmptyBeam
from specnovo.model import OutputVocab, new_state, preset
from specnovo.spectra import Spectrum, SpectrumRecord, parse_formula

VOCAB = OutputVocab.build(["CCO", "c1ccncc1", "C1CC1", "CC(=O)N", "[NH4+]"])
TABLE = TokenTable(VOCAB)


def walk(formula, text):
    h = Hypothesis((), 0.0, Budget.from_formula(parse_formula(formula)))
    for tid in VOCAB.encode(text):
        h = h.extend(tid, 0.0, TABLE.info[tid])
    return h


def allowed_texts(h):
    return {VOCAB.itos[i] for i in np.flatnonzero(allowed_tokens(h, TABLE))}


class TestMask:
    def test_budget_exhausted(self):
        a = allowed_texts(walk("CH4", "C"))
        assert "C" not in a and "<eos>" in a

    def test_absent_element(self):
        a = allowed_texts(walk("C2H6O", ""))
        assert not {"N", "n", "[NH4+]"} & a
        assert "C" in a and "O" in a

    def test_no_eos_with_open_branch(self):
        a = allowed_texts(walk("C3H8", "C(C"))
        assert "<eos>" not in a and ")" in a and "C" in a
        assert "<eos>" not in allowed_texts(walk("C3H8", "C(CC"))

    def test_ring_rules(self):
        assert "1" not in allowed_texts(walk("C2H4", "C"))      # too few atoms left for a ring
        assert "1" in allowed_texts(walk("C3H6", "C"))
        assert "1" not in allowed_texts(walk("C3H6", "C1"))     # cannot close on the opener
        a = allowed_texts(walk("C3H6", "C1CC"))
        assert "1" in a and "<eos>" not in a

    def test_dead_end(self):
        h = walk("C3H6", "C1CC")
        h = Hypothesis(h.ids, 0.0, h.budget, h.depth, ((1, h.n_atoms - 1),), h.state, h.n_atoms)
        with pytest.raises(DeadEnd):
            allowed_tokens(h, TABLE)

    def test_length_room(self):
        h = walk("C3H8", "CC")
        assert "(" not in {VOCAB.itos[i] for i in np.flatnonzero(allowed_tokens(h, TABLE, max_len=4))}
        assert "(" in allowed_texts(h)

    def test_specials_never_allowed(self):
        m = allowed_tokens(walk("CH4", ""), TABLE)
        assert not m[[VOCAB.pad_id, VOCAB.bos_id, VOCAB.unk_id]].any()


FORMULAS = ["C2H6O", "C5H5N", "C3H6", "C3H7NO", "C6H12", "C4H8O2"]


@given(st.sampled_from(FORMULAS), st.lists(st.integers(0, 10 ** 6), min_size=1, max_size=40))
def test_mask_never_overspends(formula, picks):
    f = parse_formula(formula)
    h = Hypothesis((), 0.0, Budget.from_formula(f))
    for pick in picks:
        try:
            ok = np.flatnonzero(allowed_tokens(h, TABLE, 2 * 10 + 16))
        except DeadEnd:
            break
        tid = int(ok[pick % len(ok)])
        if tid == TABLE.eos:
            assert h.budget.heavy_left() == 0 and h.depth == 0 and not h.rings
            break
        h = h.extend(tid, 0.0, TABLE.info[tid])
        assert all(c >= 0 for c in h.budget.remaining.values())
        assert h.budget.emitted_h <= f.get("H", 0)
        used = parse_formula(formula).heavy() - h.budget.remaining
        assert used.fits_within(f)


def test_length_penalty():
    assert length_penalty(1) == 1.0
    assert math.isclose(length_penalty(7), 2.0 ** 0.6)


class ScriptedDecoder:
    """Stand-in decoder that prefers continuing the given strings, best first."""

    def __init__(self, strings):
        self.seqs = [VOCAB.encode(s) + [VOCAB.eos_id] for s in strings]

    def __call__(self, params, cfg, mem, src_mask, tgt, rng=None):
        B, T = tgt.shape
        logits = np.zeros((B, T, len(VOCAB)))
        for b in range(B):
            prefix = list(tgt[b, 1:])
            for rank, seq in enumerate(self.seqs):
                if seq[: len(prefix)] == prefix and len(prefix) < len(seq):
                    nxt = seq[len(prefix)]
                    logits[b, -1, nxt] = max(logits[b, -1, nxt], 8.0 - rank)
        return logits, None


@pytest.fixture
def state():
    return new_state(preset("micro", max_len=128), VOCAB, seed=0)


def _record(formula, smiles=None):
    return SpectrumRecord(Spectrum(((50.0, 100.0), (80.0, 20.0))), parse_formula(formula), smiles)


def _search(monkeypatch, state, strings, formula, beam=8, k=5, **kw):
    monkeypatch.setattr(dec.transformer, "decode", ScriptedDecoder(strings))
    src = list(range(4, 12))
    return beam_search(state, src, parse_formula(formula), beam, k, **kw)


class TestBeam:
    def test_preferred_first(self, monkeypatch, state):
        out = _search(monkeypatch, state, ["CC(=O)N", "NC(C)=O", "CNC=O"], "C2H5NO")
        assert out[0][0] == "CC(=O)N"
        assert [s for s, _ in out].count("NC(C)=O") == 0  # same molecule, deduplicated
        assert all(formula_of(parse_smiles(s)) == parse_formula("C2H5NO") for s, _ in out)
        scores = [sc for _, sc in out]
        assert scores == sorted(scores, reverse=True)

    def test_hydrogen_filter(self, monkeypatch, state):
        res = _search(monkeypatch, state, ["C=CC", "CCC"], "C3H8", detailed=True)
        assert res.candidates[0][0] == "CCC"
        assert any(f["text"] == "C=CC" and f["reason"] == "formula_mismatch" for f in res.filtered)

    def test_k_one(self, monkeypatch, state):
        assert len(_search(monkeypatch, state, ["CCO"], "C2H6O", beam=4, k=1)) == 1

    def test_beam_below_k(self, monkeypatch, state):
        with pytest.raises(DomainError):
            _search(monkeypatch, state, ["CCO"], "C2H6O", beam=2, k=3)

    def test_empty_beam(self, monkeypatch, state):
        # a formula no valence-respecting string can match
        with pytest.raises(EmptyBeam) as ei:
            _search(monkeypatch, state, ["C"], "CH9", beam=2, k=1)
        assert ei.value.result.candidates == []

    def test_predict_empty_beam_gives_empty_set(self, monkeypatch, state):
        monkeypatch.setattr(dec.transformer, "decode", ScriptedDecoder(["C"]))
        p = predict_topk(state, _record("CH9"), k=1, beam=2)
        assert p.pset.candidates == [] and p.to_json_obj()["candidates"] == []

    def test_predict_record(self, monkeypatch, state):
        monkeypatch.setattr(dec.transformer, "decode", ScriptedDecoder(["c1ccncc1"]))
        p = predict_topk(state, _record("C5H5N", "n1ccccc1"), k=3, beam=6)
        assert p.pset.candidates[0] == canonical_smiles("n1ccccc1")
        assert p.to_json_obj()["target"] == "n1ccccc1" and p.formula == "C5H5N"

    def test_tokens_in_vocab(self, state):
        try:
            res = beam_search(state, list(range(4, 12)), parse_formula("C3H8O"), 6, 3, detailed=True)
        except EmptyBeam as exc:
            res = exc.result
        assert res.candidates or res.filtered
        for text in [c for c, _ in res.candidates] + [f["text"] for f in res.filtered]:
            assert VOCAB.decode(VOCAB.encode(text)) == text and VOCAB.unk_id not in VOCAB.encode(text)

    def test_monotone_beam_scripted(self, monkeypatch, state):
        prev = -math.inf
        for beam in (1, 2, 4, 8):
            top = _search(monkeypatch, state, ["OCC", "CCO", "COC"], "C2H6O", beam=beam, k=1)[0][1]
            assert top >= prev
            prev = top
