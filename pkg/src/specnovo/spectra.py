"""Spectrum and formula handling: parsing, preprocessing and input tokenization.

A spectrum plus a molecular formula is rendered into one text line, e.g.::

    C10H5F3INO|126.9045:100.00 145.0260:12.50

and that line is tokenized at character level (element symbols are single
tokens) for the encoder.
"""

from __future__ import annotations

import enum
import json
import math
from collections.abc import Mapping
from dataclasses import dataclass, field
from typing import Iterable, Iterator, NamedTuple, Optional

import numpy as np

from .errors import DomainError, EmptySpectrumError, FormulaError, ParseError, TokenError

ELEMENTS = ("C", "H", "N", "O", "S", "P", "F", "Cl", "Br", "I", "B", "Si", "Se", "As")
_ELEMENT_SET = frozenset(ELEMENTS)

MZ_DECIMALS = 4
INTENSITY_DECIMALS = 2
DEFAULT_MAX_PEAKS = 512
NOISE_THRESHOLD = 1.0


class Peak(NamedTuple):
    mz: float
    intensity: float


class Adduct(str, enum.Enum):
    H = "H+"
    NA = "Na+"


_ADDUCT_ALIASES = {
    "h+": Adduct.H,
    "[m+h]+": Adduct.H,
    "[m+h]": Adduct.H,
    "m+h": Adduct.H,
    "mh+": Adduct.H,
    "na+": Adduct.NA,
    "[m+na]+": Adduct.NA,
    "[m+na]": Adduct.NA,
    "m+na": Adduct.NA,
}


def parse_adduct(text) -> Adduct:
    if isinstance(text, Adduct):
        return text
    key = str(text).strip().replace(" ", "").lower()
    try:
        return _ADDUCT_ALIASES[key]
    except KeyError:
        raise DomainError(f"unknown adduct {text!r}") from None


@dataclass(frozen=True)
class Spectrum:
    peaks: tuple = ()
    adduct: Adduct = Adduct.H
    collision_energy: Optional[float] = None
    source: str = ""

    def __post_init__(self):
        peaks = tuple(Peak(float(mz), float(i)) for mz, i in self.peaks)
        for p in peaks:
            if not p.mz > 0 or not math.isfinite(p.mz):
                raise DomainError(f"peak m/z must be positive, got {p.mz}")
            if not p.intensity >= 0 or not math.isfinite(p.intensity):
                raise DomainError(f"peak intensity must be non-negative, got {p.intensity}")
        # stable: duplicate m/z values keep input order
        peaks = tuple(sorted(peaks, key=lambda p: p.mz))
        object.__setattr__(self, "peaks", peaks)

    def __len__(self):
        return len(self.peaks)

    @property
    def mz(self) -> np.ndarray:
        return np.array([p.mz for p in self.peaks], dtype=float)

    @property
    def intensity(self) -> np.ndarray:
        return np.array([p.intensity for p in self.peaks], dtype=float)

    def with_peaks(self, peaks) -> "Spectrum":
        return Spectrum(tuple(peaks), self.adduct, self.collision_energy, self.source)


class ElementCounts(Mapping):
    """Immutable element -> count multiset restricted to the supported alphabet."""

    __slots__ = ("_counts", "_hash")

    def __init__(self, counts=None, **kwargs):
        merged = {}
        for src in (counts or {}), kwargs:
            for el, n in dict(src).items():
                if el not in _ELEMENT_SET:
                    raise FormulaError(f"unsupported element {el!r}", symbol=el)
                n = int(n)
                if n < 0:
                    raise DomainError(f"negative count for {el}: {n}")
                merged[el] = merged.get(el, 0) + n
        self._counts = {el: n for el, n in merged.items() if n > 0}
        self._hash = None

    def __getitem__(self, el):
        return self._counts[el]

    def __iter__(self):
        return iter(self._counts)

    def __len__(self):
        return len(self._counts)

    def __hash__(self):
        if self._hash is None:
            self._hash = hash(frozenset(self._counts.items()))
        return self._hash

    def __eq__(self, other):
        if isinstance(other, Mapping):
            return self._counts == {k: v for k, v in other.items() if v}
        return NotImplemented

    def __repr__(self):
        inner = ", ".join(f"{el}:{self._counts[el]}" for el in hill_order(self._counts))
        return f"ElementCounts({{{inner}}})"

    def __add__(self, other):
        out = dict(self._counts)
        for el, n in other.items():
            out[el] = out.get(el, 0) + n
        return ElementCounts(out)

    def __sub__(self, other):
        out = dict(self._counts)
        for el, n in other.items():
            out[el] = out.get(el, 0) - n
            if out[el] < 0:
                raise DomainError(f"count for {el} would become negative")
        return ElementCounts(out)

    def fits_within(self, other) -> bool:
        return all(other.get(el, 0) >= n for el, n in self._counts.items())

    def heavy(self) -> "ElementCounts":
        return ElementCounts({el: n for el, n in self._counts.items() if el != "H"})

    def total(self) -> int:
        return sum(self._counts.values())

    def hill(self) -> str:
        return "".join(
            el + (str(self._counts[el]) if self._counts[el] != 1 else "")
            for el in hill_order(self._counts)
        )

    __str__ = hill


def hill_order(elements: Iterable[str]) -> list:
    elements = list(elements)
    if "C" in elements:
        rest = sorted(el for el in elements if el not in ("C", "H"))
        return ["C"] + (["H"] if "H" in elements else []) + rest
    return sorted(elements)


def parse_formula(f: str) -> ElementCounts:
    """Parse ``C10H5F3INO``-style text; a missing count means 1."""
    if not isinstance(f, str) or not f.strip():
        raise FormulaError("empty formula", position=0)
    f = f.strip()
    counts: dict = {}
    i, n = 0, len(f)
    while i < n:
        ch = f[i]
        if not ch.isupper():
            raise FormulaError(f"unexpected character {ch!r}", symbol=ch, position=i)
        start = i
        sym = ch
        if i + 1 < n and f[i + 1].islower():
            sym = f[i : i + 2]
        if sym not in _ELEMENT_SET:
            raise FormulaError(f"unknown element {sym!r}", symbol=sym, position=start)
        i += len(sym)
        j = i
        while j < n and f[j].isdigit():
            j += 1
        count = int(f[i:j]) if j > i else 1
        counts[sym] = counts.get(sym, 0) + count
        i = j
    return ElementCounts(counts)


def normalize_spectrum(s: Spectrum) -> Spectrum:
    """Scale intensities so the base peak is exactly 100."""
    if not s.peaks:
        raise EmptySpectrumError("cannot normalize an empty spectrum")
    top = max(p.intensity for p in s.peaks)
    if top <= 0:
        raise DomainError("maximum intensity is zero")
    factor = 100.0 / top
    return s.with_peaks(
        Peak(p.mz, 100.0 if p.intensity == top else p.intensity * factor) for p in s.peaks
    )


def filter_peaks(s: Spectrum, threshold: float = NOISE_THRESHOLD) -> Spectrum:
    return s.with_peaks(p for p in s.peaks if not p.intensity < threshold)


def cap_peaks(s: Spectrum, max_peaks: int = DEFAULT_MAX_PEAKS) -> Spectrum:
    """Keep the ``max_peaks`` most intense peaks (ties favour lower m/z)."""
    if len(s.peaks) <= max_peaks:
        return s
    order = sorted(range(len(s.peaks)), key=lambda k: (-s.peaks[k].intensity, k))
    keep = sorted(order[:max_peaks])
    return s.with_peaks(s.peaks[k] for k in keep)


def preprocess(s: Spectrum, threshold: float = NOISE_THRESHOLD,
               max_peaks: int = DEFAULT_MAX_PEAKS) -> Spectrum:
    return cap_peaks(filter_peaks(normalize_spectrum(s), threshold), max_peaks)


class InputVocab:
    """Fixed character-level vocabulary for encoder input lines."""

    PAD, BOS, EOS, UNK = "<pad>", "<bos>", "<eos>", "<unk>"
    SPECIALS = (PAD, BOS, EOS, UNK)
    CHARS = tuple("0123456789.: |+")
    SYMBOLS = ELEMENTS + ("Na",)

    def __init__(self):
        self.itos = list(self.SPECIALS + self.CHARS + self.SYMBOLS)
        self.stoi = {t: k for k, t in enumerate(self.itos)}

    def __len__(self):
        return len(self.itos)

    @property
    def pad_id(self):
        return self.stoi[self.PAD]

    def split(self, raw: str) -> list:
        out = []
        i, n = 0, len(raw)
        while i < n:
            ch = raw[i]
            if ch in self.CHARS:
                out.append(ch)
                i += 1
                continue
            if ch.isupper():
                if raw[i : i + 2] in self.stoi and i + 1 < n and raw[i + 1].islower():
                    out.append(raw[i : i + 2])
                    i += 2
                    continue
                if ch in self.stoi:
                    out.append(ch)
                    i += 1
                    continue
            raise TokenError(f"cannot tokenize input character {ch!r}", i)
        return out

    def encode(self, raw: str) -> list:
        return [self.stoi[t] for t in self.split(raw)]

    def decode(self, ids: Iterable[int]) -> str:
        return "".join(self.itos[i] for i in ids if self.itos[i] not in self.SPECIALS)


INPUT_VOCAB = InputVocab()


@dataclass(frozen=True)
class InputSequence:
    tokens: tuple
    raw: str


def render_peaks(s: Spectrum) -> str:
    return " ".join(
        f"{p.mz:.{MZ_DECIMALS}f}:{p.intensity:.{INTENSITY_DECIMALS}f}" for p in s.peaks
    )


def format_input(s: Spectrum, f: ElementCounts, include_adduct: bool = False,
                 include_collision_energy: bool = False) -> InputSequence:
    if not s.peaks:
        raise EmptySpectrumError("spectrum has no peaks to encode")
    parts = [f.hill(), render_peaks(s)]
    if include_adduct:
        parts.append(s.adduct.value)
    if include_collision_energy and s.collision_energy is not None:
        parts.append(f"{s.collision_energy:.1f}")
    raw = "|".join(parts)
    return InputSequence(tuple(INPUT_VOCAB.encode(raw)), raw)


def detokenize(seq) -> str:
    tokens = seq.tokens if isinstance(seq, InputSequence) else seq
    return INPUT_VOCAB.decode(tokens)


@dataclass
class SpectrumRecord:
    spectrum: Spectrum
    formula: ElementCounts
    smiles: Optional[str] = None
    extra: dict = field(default_factory=dict)

    def to_json(self) -> str:
        obj = {}
        if self.smiles is not None:
            obj["smiles"] = self.smiles
        obj["formula"] = self.formula.hill()
        obj["spectrum"] = [[p.mz, p.intensity] for p in self.spectrum.peaks]
        obj["adduct"] = self.spectrum.adduct.value
        if self.spectrum.collision_energy is not None:
            obj["collision_energy"] = self.spectrum.collision_energy
        if self.spectrum.source:
            obj["source"] = self.spectrum.source
        obj.update(self.extra)
        return json.dumps(obj)


_KNOWN_KEYS = {"smiles", "formula", "spectrum", "adduct", "collision_energy", "source"}


def _record_from_obj(obj) -> SpectrumRecord:
    if not isinstance(obj, dict):
        raise ParseError("record must be a JSON object")
    if "spectrum" not in obj or "formula" not in obj:
        raise ParseError("record needs 'spectrum' and 'formula'")
    raw_peaks = obj["spectrum"]
    if not isinstance(raw_peaks, list):
        raise ParseError("'spectrum' must be a list of [mz, intensity] pairs")
    peaks = []
    for pair in raw_peaks:
        if (not isinstance(pair, (list, tuple)) or len(pair) != 2
                or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in pair)):
            raise ParseError(f"bad peak entry {pair!r}")
        if pair[0] <= 0:
            raise DomainError(f"peak m/z must be positive, got {pair[0]}")
        if pair[1] < 0:
            raise DomainError(f"peak intensity must be non-negative, got {pair[1]}")
        peaks.append((float(pair[0]), float(pair[1])))
    adduct = parse_adduct(obj.get("adduct") or "H+")
    ce = obj.get("collision_energy")
    if ce is not None:
        ce = float(ce)
    spectrum = Spectrum(tuple(peaks), adduct, ce, str(obj.get("source") or ""))
    formula = parse_formula(obj["formula"])
    smiles = obj.get("smiles")
    extra = {k: v for k, v in obj.items() if k not in _KNOWN_KEYS}
    return SpectrumRecord(spectrum, formula, smiles, extra)


record_from_obj = _record_from_obj


def parse_spectrum_record(line: str):
    """Parse one JSONL line into ``(Spectrum, ElementCounts, smiles or None)``."""
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ParseError(f"malformed JSON: {exc.msg}", exc.pos) from None
    rec = _record_from_obj(obj)
    return rec.spectrum, rec.formula, rec.smiles


def iter_records(path) -> Iterator[SpectrumRecord]:
    """Yield records from a JSONL file; errors carry the 1-based line number."""
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                err = ParseError(f"line {lineno}: malformed JSON: {exc.msg}", lineno)
                err.line = lineno
                raise err from None
            try:
                rec = _record_from_obj(obj)
            except (ParseError, DomainError) as exc:
                exc.line = lineno
                exc.args = (f"line {lineno}: {exc.args[0] if exc.args else exc}",)
                raise
            yield rec


def load_records(path) -> list:
    return list(iter_records(path))


def write_records(path, records: Iterable[SpectrumRecord]) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(rec.to_json() + "\n")
            n += 1
    return n
