"""Evaluation metrics: Top-k accuracy, Tanimoto, MCES distance, validity."""

from __future__ import annotations

import enum
import json
import math
import warnings
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from . import kernels
from .chem.canon import canonicalize
from .chem.fingerprint import DEFAULT_WIDTH, Fingerprint, fingerprint
from .chem.graph import AROMATIC, MolGraph, try_parse
from .errors import DimensionError, DomainError, ParseError, SizeError
from .spectra import ELEMENTS

MEANINGFUL_CUTOFF = 0.4
CLOSE_CUTOFF = 0.675
MCES_SIZE_LIMIT = 20
MCES_FALLBACK_BOUND = 10.0


def tanimoto(a: Fingerprint, b: Fingerprint) -> float:
    if a.width != b.width:
        raise DimensionError(f"fingerprint widths differ: {a.width} vs {b.width}")
    union = int(np.count_nonzero(a.bits | b.bits))
    if union == 0:
        return 1.0
    return int(np.count_nonzero(a.bits & b.bits)) / union


# ---------------------------------------------------------------- MCES

def _half_weight(order) -> int:
    return 3 if order == AROMATIC else 2 * int(order)


def heavy_graph(g: MolGraph):
    """Labels and half-unit weight matrix of the heavy-atom skeleton."""
    keep = [k for k, a in enumerate(g.atoms) if a.element != "H"]
    index = {k: i for i, k in enumerate(keep)}
    labels = np.array([ELEMENTS.index(g.atoms[k].element) for k in keep], dtype=np.int32)
    adj = np.zeros((len(keep), len(keep)), dtype=np.int32)
    for i, j, o in g.bonds:
        if i in index and j in index:
            w = _half_weight(o)
            adj[index[i], index[j]] = adj[index[j], index[i]] = w
    return labels, adj


def _search_order(adj) -> list:
    """Branch order: grow outward from the highest-degree atom."""
    n = adj.shape[0]
    deg = (adj > 0).sum(axis=1)
    order, placed = [], np.zeros(n, dtype=bool)
    links = np.zeros(n, dtype=int)
    for _ in range(n):
        cand = [k for k in range(n) if not placed[k]]
        k = max(cand, key=lambda x: (links[x], deg[x], -x))
        order.append(k)
        placed[k] = True
        links += adj[k] > 0
    return order


def mces_distance(g1: MolGraph, g2: MolGraph, bound: Optional[float] = None,
                  size_limit: int = MCES_SIZE_LIMIT) -> float:
    """Edge-weighted MCES distance ``w(E1) + w(E2) - 2 w(MCES)``.

    Bond orders weigh 1/2/3 and aromatic bonds 1.5; matched bonds share
    the smaller of their two weights. With ``bound`` the search only has
    to decide whether the distance is below it, and returns ``bound``
    otherwise.
    """
    if bound is not None and bound < 0:
        raise DomainError("bound must be non-negative")
    lab1, adj1 = heavy_graph(g1)
    lab2, adj2 = heavy_graph(g2)
    if bound is None and max(len(lab1), len(lab2)) > size_limit:
        raise SizeError(
            f"exact MCES limited to {size_limit} heavy atoms "
            f"(got {len(lab1)} and {len(lab2)}); pass a bound"
        )
    if len(lab1) > len(lab2):
        lab1, adj1, lab2, adj2 = lab2, adj2, lab1, adj1
    w1 = int(adj1.sum()) // 2
    w2 = int(adj2.sum()) // 2
    lower = -1
    if bound is not None:
        if abs(w1 - w2) / 2 >= bound:
            return float(bound)
        lower = max(math.floor((w1 + w2 - 2 * bound) / 2), -1)
    if len(lab1) == 0 or len(lab2) == 0:
        common = 0
    else:
        common = kernels.mces_search(lab1, adj1, lab2, adj2, _search_order(adj1), lower)
    if common <= lower:
        return float(bound)
    return (w1 + w2 - 2 * common) / 2


# ---------------------------------------------------------------- accuracy

class MatchClass(enum.Enum):
    NONE = "None"
    MEANINGFUL = "Meaningful"
    CLOSE = "Close"


def match_class(t: float) -> MatchClass:
    if not 0.0 <= t <= 1.0:
        raise DomainError(f"Tanimoto similarity must lie in [0, 1], got {t}")
    if t >= CLOSE_CUTOFF:
        return MatchClass.CLOSE
    if t >= MEANINGFUL_CUTOFF:
        return MatchClass.MEANINGFUL
    return MatchClass.NONE


@dataclass
class PredictionSet:
    target: Optional[str]
    candidates: list
    k: int = 10
    scores: list = field(default_factory=list)

    def __post_init__(self):
        if len(self.candidates) > self.k:
            raise DomainError(f"{len(self.candidates)} candidates exceed k={self.k}")


class EmptyInputWarning(UserWarning):
    pass


def validity_rate(candidates) -> float:
    candidates = list(candidates)
    if not candidates:
        warnings.warn("validity_rate of an empty candidate list is defined as 0.0", EmptyInputWarning)
        return 0.0
    return sum(try_parse(c) is not None for c in candidates) / len(candidates)


class _Canon:
    """Memoized parse/canonicalize/fingerprint for candidate strings."""

    def __init__(self, keep_stereo=False, width=DEFAULT_WIDTH):
        self.keep_stereo = keep_stereo
        self.width = width
        self._cache = {}

    def get(self, smiles):
        if smiles not in self._cache:
            g = try_parse(smiles)
            if g is None:
                self._cache[smiles] = None
            else:
                self._cache[smiles] = (g, canonicalize(g, self.keep_stereo))
        return self._cache[smiles]

    def key(self, smiles):
        hit = self.get(smiles)
        return None if hit is None else hit[1]

    def fp(self, smiles):
        fkey = ("fp", smiles)
        if fkey not in self._cache:
            self._cache[fkey] = fingerprint(self.get(smiles)[0], self.width)
        return self._cache[fkey]


def topk_accuracy(preds, k: int, keep_stereo: bool = False, _canon=None) -> float:
    if k < 1:
        raise DomainError(f"k must be >= 1, got {k}")
    preds = list(preds)
    if not preds:
        raise DomainError("no prediction sets")
    canon = _canon or _Canon(keep_stereo)
    hits = 0
    for p in preds:
        target = canon.key(p.target)
        if target is None:
            raise DomainError(f"target {p.target!r} is not a valid SMILES")
        if any(canon.key(c) == target for c in p.candidates[:k]):
            hits += 1
    return hits / len(preds)


@dataclass
class EvalReport:
    n_sets: int
    k: int
    top1_accuracy: float
    topk_accuracy: float
    mean_tanimoto_top1: Optional[float]
    mean_tanimoto_topk: Optional[float]
    mean_mces_top1: Optional[float]
    mean_mces_topk: Optional[float]
    validity_rate: float
    meaningful_rate_top1: float
    close_rate_top1: float
    meaningful_rate_topk: float
    close_rate_topk: float
    n_candidates: int
    n_valid_candidates: int
    n_similarity_sets: int
    n_all_invalid_sets: int
    n_mces_bounded: int = 0
    mces_topk_reduction: str = "min"
    tanimoto_topk_reduction: str = "max"

    def to_dict(self):
        return asdict(self)

    def to_json(self, indent=2):
        return json.dumps(self.to_dict(), indent=indent)

    def to_table(self) -> str:
        rows = [
            ("metric", "top-1", f"top-{self.k}"),
            ("accuracy", _fmt(self.top1_accuracy), _fmt(self.topk_accuracy)),
            ("tanimoto", _fmt(self.mean_tanimoto_top1), _fmt(self.mean_tanimoto_topk)),
            ("mces", _fmt(self.mean_mces_top1), _fmt(self.mean_mces_topk)),
            (f"meaningful (>= {MEANINGFUL_CUTOFF})", _fmt(self.meaningful_rate_top1),
             _fmt(self.meaningful_rate_topk)),
            (f"close (>= {CLOSE_CUTOFF})", _fmt(self.close_rate_top1), _fmt(self.close_rate_topk)),
        ]
        widths = [max(len(r[c]) for r in rows) for c in range(3)]
        lines = [
            f"# sets={self.n_sets}  valid SMILES={_fmt(self.validity_rate)} "
            f"({self.n_valid_candidates}/{self.n_candidates})  "
            f"similarity sets={self.n_similarity_sets}  all-invalid sets={self.n_all_invalid_sets}",
            f"# top-{self.k} tanimoto = {self.tanimoto_topk_reduction} over valid candidates; "
            f"top-{self.k} mces = {self.mces_topk_reduction} over valid candidates; "
            f"bounded mces pairs = {self.n_mces_bounded}",
        ]
        for r in rows:
            lines.append("  ".join(r[c].ljust(widths[c]) if c == 0 else r[c].rjust(widths[c])
                                   for c in range(3)))
        return "\n".join(lines) + "\n"


def _fmt(x):
    return "-" if x is None else f"{x:.4f}"


def _mean(xs):
    return sum(xs) / len(xs) if xs else None


def evaluate_run(preds, k: Optional[int] = None, keep_stereo: bool = False,
                 mces_reduction: str = "min", fp_width: int = DEFAULT_WIDTH,
                 mces_size_limit: int = MCES_SIZE_LIMIT,
                 mces_fallback_bound: float = MCES_FALLBACK_BOUND) -> EvalReport:
    """Aggregate every metric over a run.

    Similarity means skip sets without a valid candidate; such sets still
    count in the accuracy, match-rate and validity denominators.
    """
    preds = list(preds)
    if not preds:
        raise DomainError("evaluate_run needs at least one prediction set")
    if mces_reduction not in ("min", "mean"):
        raise DomainError("mces_reduction must be 'min' or 'mean'")
    k = k or max(p.k for p in preds)
    canon = _Canon(keep_stereo, fp_width)
    top1 = topk_accuracy(preds, 1, keep_stereo, canon)
    topk = topk_accuracy(preds, k, keep_stereo, canon)

    tan1, tank, mces1, mcesk = [], [], [], []
    m1 = c1 = mk = ck = 0
    n_cand = n_valid = n_all_invalid = n_bounded = 0
    for p in preds:
        cands = p.candidates[:k]
        n_cand += len(cands)
        valid = [c for c in cands if canon.get(c) is not None]
        n_valid += len(valid)
        if not valid:
            n_all_invalid += 1
            continue
        tg = canon.get(p.target)[0]
        tfp = canon.fp(p.target)
        sims = [tanimoto(tfp, canon.fp(c)) for c in valid]
        dists = []
        for c in valid:
            g = canon.get(c)[0]
            if max(g.heavy_atom_count(), tg.heavy_atom_count()) > mces_size_limit:
                n_bounded += 1
                dists.append(mces_distance(tg, g, bound=mces_fallback_bound))
            else:
                dists.append(mces_distance(tg, g, size_limit=mces_size_limit))
        tan1.append(sims[0])
        tank.append(max(sims))
        mces1.append(dists[0])
        mcesk.append(min(dists) if mces_reduction == "min" else sum(dists) / len(dists))
        cls1, clsk = match_class(sims[0]), match_class(max(sims))
        m1 += cls1 is not MatchClass.NONE
        c1 += cls1 is MatchClass.CLOSE
        mk += clsk is not MatchClass.NONE
        ck += clsk is MatchClass.CLOSE

    n = len(preds)
    return EvalReport(
        n_sets=n,
        k=k,
        top1_accuracy=top1,
        topk_accuracy=topk,
        mean_tanimoto_top1=_mean(tan1),
        mean_tanimoto_topk=_mean(tank),
        mean_mces_top1=_mean(mces1),
        mean_mces_topk=_mean(mcesk),
        validity_rate=n_valid / n_cand if n_cand else 0.0,
        meaningful_rate_top1=m1 / n,
        close_rate_top1=c1 / n,
        meaningful_rate_topk=mk / n,
        close_rate_topk=ck / n,
        n_candidates=n_cand,
        n_valid_candidates=n_valid,
        n_similarity_sets=len(tan1),
        n_all_invalid_sets=n_all_invalid,
        n_mces_bounded=n_bounded,
        mces_topk_reduction=mces_reduction,
    )


def read_prediction_file(path, k: int = 10):
    """``(PredictionSets, n_error_records)``; lines carrying an ``error`` key are skipped."""
    out, n_err = [], 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"line {lineno}: malformed JSON: {exc.msg}", lineno) from None
            if isinstance(obj, dict) and "error" in obj:
                n_err += 1
                continue
            if not isinstance(obj, dict) or "candidates" not in obj or not isinstance(obj["candidates"], list):
                raise ParseError(f"line {lineno}: record needs a 'candidates' list", lineno)
            if not obj.get("target"):
                raise ParseError(f"line {lineno}: record has no 'target'", lineno)
            cands = [str(c) for c in obj["candidates"]]
            out.append(PredictionSet(obj["target"], cands, max(k, len(cands)), list(obj.get("scores", []))))
    if not out:
        raise ParseError(f"{path}: no prediction records")
    return out, n_err


def read_predictions(path, k: int = 10) -> list:
    """Load ``{target, candidates, scores}`` JSONL records as PredictionSets."""
    return read_prediction_file(path, k)[0]
