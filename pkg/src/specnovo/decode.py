"""Formula-constrained beam search over the SMILES token vocabulary.

At every step each live hypothesis gets a mask of admissible tokens: atoms
must fit the remaining heavy-atom budget (bracket H against the H target),
structure tokens must keep the string well formed, and end-of-sequence needs
an exhausted budget with no open branch or ring. The decoder distribution is
renormalized over the admissible set. Finished strings are re-parsed and
only exact formula matches survive.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .chem import canonicalize, formula_of, parse_smiles
from .chem.smiles import TokenKind, token_from_text
from .errors import DeadEnd, DomainError, EmptyBeam, ParseError, StructureError, ValenceError
from .metrics import PredictionSet
from .model import transformer
from .model.batch import make_example
from .spectra import ElementCounts, SpectrumRecord

DEFAULT_BEAM = 16
DEFAULT_K = 10
LP_ALPHA = 0.6

# grammar states: what the previous token was
START, ATOM, BOND, OPEN, CLOSE, RING, DOT = range(7)
_KIND_STATE = {
    TokenKind.ORGANIC_ATOM: ATOM,
    TokenKind.BRACKET_ATOM: ATOM,
    TokenKind.BOND: BOND,
    TokenKind.BRANCH_OPEN: OPEN,
    TokenKind.BRANCH_CLOSE: CLOSE,
    TokenKind.RING_BOND: RING,
    TokenKind.DOT: DOT,
}
_AFTER_ATOMLIKE = (ATOM, RING, CLOSE)


def length_penalty(n: int, alpha: float = LP_ALPHA) -> float:
    return ((5.0 + n) / 6.0) ** alpha


@dataclass(frozen=True)
class TokenInfo:
    state: int
    element: Optional[str] = None
    h: int = 0
    ring: Optional[int] = None


class TokenTable:
    """Per-id grammar metadata for an OutputVocab."""

    def __init__(self, vocab):
        self.vocab = vocab
        self.info = [None] * len(vocab)  # None: never emitted (specials, unknown)
        for i, text in enumerate(vocab.itos):
            if i < 4:
                continue
            try:
                tok = token_from_text(text)
            except ParseError:
                continue
            self.info[i] = TokenInfo(_KIND_STATE[tok.kind], tok.element, tok.explicit_h or 0, tok.ring)
        self.eos = vocab.eos_id


@dataclass(frozen=True)
class Budget:
    remaining: ElementCounts
    h_target: int
    emitted_h: int = 0

    @classmethod
    def from_formula(cls, f: ElementCounts) -> "Budget":
        heavy = ElementCounts({e: c for e, c in f.items() if e != "H"})
        return cls(heavy, f.get("H", 0), 0)

    def heavy_left(self) -> int:
        return self.remaining.total()

    def fits(self, element: str, h: int) -> bool:
        return self.remaining.get(element, 0) >= 1 and self.emitted_h + h <= self.h_target

    def spend(self, element: str, h: int) -> "Budget":
        return Budget(self.remaining - ElementCounts({element: 1}), self.h_target, self.emitted_h + h)


@dataclass(frozen=True)
class Hypothesis:
    ids: tuple
    logp: float
    budget: Budget
    depth: int = 0
    rings: tuple = ()      # open ring bonds as (digit, atom index)
    state: int = START
    n_atoms: int = 0

    def extend(self, tid: int, lp: float, info: Optional[TokenInfo]) -> "Hypothesis":
        if info is None:  # end of sequence
            return replace(self, ids=self.ids + (tid,), logp=self.logp + lp)
        budget, depth, rings, n_atoms = self.budget, self.depth, self.rings, self.n_atoms
        if info.state == ATOM:
            budget = budget.spend(info.element, info.h)
            n_atoms += 1
        elif info.state == OPEN:
            depth += 1
        elif info.state == CLOSE:
            depth -= 1
        elif info.state == RING:
            hit = [r for r in rings if r[0] == info.ring]
            if hit:
                rings = tuple(r for r in rings if r[0] != info.ring)
            else:
                rings = rings + ((info.ring, n_atoms - 1),)
        return Hypothesis(self.ids + (tid,), self.logp + lp, budget, depth, rings, info.state, n_atoms)


def _min_to_finish(left, rings, depth):
    # one token per atom, ring closure and branch close, plus end-of-sequence
    return left + rings + depth + 1


def allowed_tokens(h: Hypothesis, table: TokenTable, max_len: Optional[int] = None) -> np.ndarray:
    """Boolean mask over the vocabulary. Raises DeadEnd if nothing is admissible.

    With ``max_len`` a token is also rejected when the hypothesis could no
    longer finish within ``max_len`` emitted tokens after taking it.
    """
    mask = np.zeros(len(table.info), dtype=bool)
    prev = h.state
    left = h.budget.heavy_left()
    open_digits = {d: a for d, a in h.rings}
    need = _min_to_finish(left, len(h.rings), h.depth)
    room = None if max_len is None else max_len - len(h.ids) - 1  # after this token
    for i, info in enumerate(table.info):
        if info is None:
            continue
        s = info.state
        if s == ATOM:
            ok = h.budget.fits(info.element, info.h)
        elif s == BOND:
            # a bond needs a following atom, or a ring digit that closes
            closable = any(a != h.n_atoms - 1 for a in open_digits.values())
            ok = prev in (ATOM, RING, OPEN, CLOSE) and (left > 0 or (prev in (ATOM, RING) and closable))
        elif s == OPEN:
            ok = prev in _AFTER_ATOMLIKE and left > 0
        elif s == CLOSE:
            ok = h.depth > 0 and prev in _AFTER_ATOMLIKE
        elif s == RING:
            if prev not in (ATOM, RING, BOND) or h.n_atoms == 0:
                ok = False
            elif info.ring in open_digits:
                ok = open_digits[info.ring] != h.n_atoms - 1
            else:
                ok = left >= 2
        else:  # DOT
            ok = prev in _AFTER_ATOMLIKE and h.depth == 0 and left > 0
        if ok and room is not None:
            if s == ATOM or s == CLOSE or (s == RING and info.ring in open_digits):
                ok = need - 1 <= room
            elif s == OPEN or s == RING:
                ok = need + 1 <= room
            else:
                ok = need <= room
        mask[i] = ok
    if left == 0 and h.depth == 0 and not h.rings and prev in _AFTER_ATOMLIKE:
        mask[table.eos] = True
    if not mask.any():
        raise DeadEnd("no admissible continuation")
    return mask


@dataclass
class BeamResult:
    candidates: list                       # [(smiles, score)] best first
    filtered: list = field(default_factory=list)   # [{"text", "reason"}]


def _check(text: str, formula: ElementCounts):
    try:
        g = parse_smiles(text)
    except ValenceError:
        return None, "valence_error"
    except (ParseError, StructureError):
        return None, "parse_error"
    if formula_of(g) != formula:
        return None, "formula_mismatch"
    return g, None


def _masked_log_softmax(row, mask):
    z = np.where(mask, row.astype(np.float64), -np.inf)
    z = z - z[mask].max()
    return z - np.log(np.exp(z[mask]).sum())


def beam_search(state, src_ids, formula: ElementCounts, beam: int = DEFAULT_BEAM,
                k: int = DEFAULT_K, table: Optional[TokenTable] = None,
                detailed: bool = False):
    """Ranked ``[(smiles, score)]``; ``detailed`` returns a BeamResult instead.

    Score is the summed token log-probability divided by the length penalty
    ``((5 + n) / 6) ** 0.6`` where ``n`` counts emitted tokens including
    end-of-sequence.
    """
    if not beam >= k >= 1:
        raise DomainError(f"need beam >= k >= 1, got beam={beam}, k={k}")
    params, cfg = state.params, state.config
    table = table or TokenTable(state.vocab)
    src = np.asarray(src_ids, dtype=np.int64)[None, : cfg.max_len]
    src_mask = np.ones_like(src, dtype=bool)
    mem, _ = transformer.encode(params, cfg, src, src_mask)

    heavy = sum(c for e, c in formula.items() if e != "H")
    max_len = min(2 * heavy + 16, cfg.max_len - 1)
    live = [Hypothesis((), 0.0, Budget.from_formula(formula))]
    finished = []
    bos = state.vocab.bos_id
    while live:
        masks, keep = [], []
        for h in live:
            try:
                masks.append(allowed_tokens(h, table, max_len))
                keep.append(h)
            except DeadEnd:
                pass
        live = keep
        if not live:
            break
        tgt = np.array([(bos,) + h.ids for h in live], dtype=np.int64)
        logits, _ = transformer.decode(params, cfg, np.repeat(mem, len(live), 0),
                                       np.repeat(src_mask, len(live), 0), tgt)
        cands = []
        for hi, (h, m) in enumerate(zip(live, masks)):
            lp = _masked_log_softmax(logits[hi, -1], m)
            for tid in np.flatnonzero(m):
                cands.append((h.logp + lp[tid], hi, int(tid), lp[tid]))
        cands.sort(key=lambda c: (-c[0], c[1], c[2]))
        nxt = []
        for total, hi, tid, lp in cands[:beam]:
            h = live[hi]
            if tid == table.eos:
                finished.append(h.extend(tid, lp, None))
            else:
                nxt.append(h.extend(tid, lp, table.info[tid]))
        live = nxt

    result = BeamResult([])
    best = {}
    for h in finished:
        text = state.vocab.decode(h.ids)
        score = h.logp / length_penalty(len(h.ids))
        g, reason = _check(text, formula)
        if reason:
            result.filtered.append({"text": text, "reason": reason, "score": score})
            continue
        key = canonicalize(g)
        if key not in best or score > best[key][1]:
            best[key] = (text, score)
    ranked = sorted(best.values(), key=lambda c: (-c[1], c[0]))
    result.candidates = ranked[:k]
    if not result.candidates:
        err = EmptyBeam(f"no candidate survived ({len(result.filtered)} filtered)")
        err.result = result
        raise err
    return result if detailed else result.candidates


@dataclass
class Prediction:
    """A PredictionSet plus the decoder's raw strings and filter log."""

    pset: PredictionSet
    raw: list
    filtered: list
    formula: str

    def to_json_obj(self) -> dict:
        obj = {"formula": self.formula, "candidates": self.raw, "canonical": self.pset.candidates,
               "scores": self.pset.scores, "filtered": self.filtered}
        if self.pset.target is not None:
            obj = {"target": self.pset.target, **obj}
        return obj


def predict_topk(state, record: SpectrumRecord, k: int = DEFAULT_K, beam: int = DEFAULT_BEAM,
                 max_peaks: Optional[int] = None, table: Optional[TokenTable] = None) -> Prediction:
    kw = {} if max_peaks is None else {"max_peaks": max_peaks}
    ex = make_example(SpectrumRecord(record.spectrum, record.formula), None,
                      state.config.fingerprint_width, **kw)
    try:
        res = beam_search(state, ex.src, record.formula, max(beam, k), k, table, detailed=True)
    except EmptyBeam as exc:
        res = getattr(exc, "result", BeamResult([]))
    raw = [t for t, _ in res.candidates]
    canon = [canonicalize(parse_smiles(t)) for t in raw]
    scores = [float(s) for _, s in res.candidates]
    return Prediction(PredictionSet(record.smiles, canon, k, scores), raw, res.filtered,
                      record.formula.hill())


__all__ = ["Budget", "BeamResult", "Hypothesis", "Prediction", "TokenTable", "allowed_tokens",
           "beam_search", "length_penalty", "predict_topk"]
