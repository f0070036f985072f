import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from oracles import mces_exhaustive

from specnovo import synth
from specnovo.chem import Fingerprint, parse_smiles
from specnovo.errors import DimensionError, DomainError, ParseError, SizeError
from specnovo.metrics import (
    EmptyInputWarning, MatchClass, PredictionSet, evaluate_run, match_class, mces_distance,
    read_predictions, tanimoto, topk_accuracy, validity_rate,
)

P = parse_smiles
small_mol = st.tuples(st.integers(0, 10 ** 6), st.integers(1, 7), st.sampled_from(["A", "B"])).map(
    lambda t: synth.random_molecule(np.random.default_rng(t[0]), t[1], t[2]))


class TestTanimoto:
    def test_disjoint(self):
        assert tanimoto(Fingerprint.from_indices([1], 8), Fingerprint.from_indices([2], 8)) == 0.0

    def test_overlap(self):
        assert tanimoto(Fingerprint.from_indices([1, 2, 3], 8), Fingerprint.from_indices([2, 3, 4], 8)) == 0.5

    def test_width(self):
        with pytest.raises(DimensionError):
            tanimoto(Fingerprint.from_indices([1], 8), Fingerprint.from_indices([1], 16))

    @given(st.sets(st.integers(0, 63)), st.sets(st.integers(0, 63)))
    def test_properties(self, a, b):
        fa, fb = Fingerprint.from_indices(a, 64), Fingerprint.from_indices(b, 64)
        t = tanimoto(fa, fb)
        assert t == tanimoto(fb, fa) and 0.0 <= t <= 1.0
        assert (t == 1.0) == (a == b)


class TestMces:
    def test_ethane_methane(self):
        assert mces_distance(P("CC"), P("C")) == 1.0

    def test_double_bond_mismatch_costs_more(self):
        assert mces_distance(P("C=CC"), P("CCC")) == 1.0
        assert mces_distance(P("CCC"), P("CCCC")) == 1.0
        assert mces_distance(P("C=C"), P("C#C")) == 1.0

    def test_aromatic_weight(self):
        assert mces_distance(P("c1ccccc1"), P("C1CCCCC1")) == 6 * 1.5 + 6 * 1.0 - 2 * 6 * 1.0

    def test_size_limit(self):
        big = "C" * 21
        with pytest.raises(SizeError):
            mces_distance(P(big), P("CC"))
        assert mces_distance(P(big), P(big[:-1]), bound=10.0) == 1.0

    def test_negative_bound(self):
        with pytest.raises(DomainError):
            mces_distance(P("C"), P("C"), bound=-1)

    @given(small_mol, small_mol)
    def test_oracle(self, a, b):
        assert mces_distance(P(a), P(b)) == mces_exhaustive(P(a), P(b))

    @given(small_mol, small_mol)
    def test_symmetric_and_identity(self, a, b):
        ga, gb = P(a), P(b)
        assert mces_distance(ga, gb) == mces_distance(gb, ga)
        assert mces_distance(ga, ga) == 0.0

    @given(small_mol, small_mol, st.sampled_from([0.5, 1.0, 2.0, 3.5, 6.0]))
    def test_bounded_mode(self, a, b, bound):
        exact = mces_exhaustive(P(a), P(b))
        got = mces_distance(P(a), P(b), bound=bound)
        assert got >= min(exact, bound)
        if exact < bound:
            assert got == exact
        else:
            assert got == bound


class TestAccuracy:
    def test_rank_two(self):
        p = [PredictionSet("CCO", ["CCC", "OCC"])]
        assert topk_accuracy(p, 1) == 0.0 and topk_accuracy(p, 10) == 1.0

    def test_empty_candidates(self):
        assert topk_accuracy([PredictionSet("CCO", [])], 10) == 0.0

    def test_k_validated(self):
        with pytest.raises(DomainError):
            topk_accuracy([PredictionSet("C", [])], 0)

    def test_too_many_candidates(self):
        with pytest.raises(DomainError):
            PredictionSet("C", ["C"] * 3, k=2)

    @given(st.lists(st.lists(st.sampled_from(["CCO", "OCC", "CC", "C((", "CCN"]), max_size=10),
                    min_size=1, max_size=5))
    def test_monotone_in_k(self, cand_lists):
        preds = [PredictionSet("CCO", c) for c in cand_lists]
        accs = [topk_accuracy(preds, k) for k in range(1, 11)]
        assert accs == sorted(accs)


class TestMatchClass:
    @pytest.mark.parametrize("t,c", [(0.5, MatchClass.MEANINGFUL), (0.7, MatchClass.CLOSE),
                                     (0.4, MatchClass.MEANINGFUL), (0.675, MatchClass.CLOSE),
                                     (0.39, MatchClass.NONE), (0.0, MatchClass.NONE)])
    def test_classes(self, t, c):
        assert match_class(t) is c

    @pytest.mark.parametrize("t", [-0.1, 1.1, math.nan])
    def test_domain(self, t):
        with pytest.raises(DomainError):
            match_class(t)

    @given(st.floats(0, 1))
    def test_nesting(self, t):
        if match_class(t) is MatchClass.CLOSE:
            assert t >= 0.4


class TestValidity:
    def test_values(self):
        assert validity_rate(["CCO", "C(("]) == 0.5
        assert validity_rate(["C1CC1", "CCO"]) == 1.0

    def test_empty(self):
        with pytest.warns(EmptyInputWarning):
            assert validity_rate([]) == 0.0


class TestEvaluate:
    def test_single_exact(self):
        r = evaluate_run([PredictionSet("CCO", ["OCC"])])
        assert r.top1_accuracy == 1.0 and r.mean_tanimoto_top1 == 1.0 and r.mean_mces_top1 == 0.0

    def test_all_invalid_excluded_from_means(self):
        r = evaluate_run([PredictionSet("CCO", ["CCO"]), PredictionSet("CCN", ["C((", "C1C"])])
        assert r.top1_accuracy == 0.5 and r.n_similarity_sets == 1 and r.n_all_invalid_sets == 1
        assert r.mean_tanimoto_top1 == 1.0
        assert r.meaningful_rate_top1 == 0.5

    def test_mean_reduction(self):
        preds = [PredictionSet("CCO", ["CCO", "CCC"])]
        assert evaluate_run(preds, mces_reduction="min").mean_mces_topk == 0.0
        mean = evaluate_run(preds, mces_reduction="mean").mean_mces_topk
        assert mean == (0.0 + mces_distance(P("CCO"), P("CCC"))) / 2

    def test_empty(self):
        with pytest.raises(DomainError):
            evaluate_run([])

    def test_table_mentions_reductions(self):
        txt = evaluate_run([PredictionSet("CCO", ["CCO"])]).to_table()
        assert "max over valid" in txt and "min over valid" in txt

    def test_read_predictions(self, tmp_path):
        p = tmp_path / "p.jsonl"
        p.write_text('{"target": "CCO", "candidates": ["OCC"], "scores": [-1.0]}\n')
        (ps,) = read_predictions(p)
        assert ps.candidates == ["OCC"]
        p.write_text("")
        with pytest.raises(ParseError):
            read_predictions(p)
        p.write_text('{"candidates": ["OCC"]}\n')
        with pytest.raises(ParseError):
            read_predictions(p)
