"""SMILES tokenization and per-token element accounting."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional

from ..errors import TokenError
from ..spectra import ELEMENTS, ElementCounts


class TokenKind(enum.Enum):
    ORGANIC_ATOM = "OrganicAtom"
    BRACKET_ATOM = "BracketAtom"
    BOND = "Bond"
    RING_BOND = "RingBond"
    BRANCH_OPEN = "BranchOpen"
    BRANCH_CLOSE = "BranchClose"
    DOT = "Dot"


ORGANIC = ("B", "C", "N", "O", "P", "S", "F", "Cl", "Br", "I")
AROMATIC_ORGANIC = ("b", "c", "n", "o", "p", "s")
# bracket-only aromatic symbols
AROMATIC_BRACKET = AROMATIC_ORGANIC + ("se", "as", "si")
BOND_CHARS = "-=#:/\\"


@dataclass(frozen=True)
class SmilesToken:
    text: str
    kind: TokenKind
    element: Optional[str] = None
    explicit_h: Optional[int] = None
    aromatic: bool = False
    charge: int = 0
    isotope: Optional[int] = None
    chirality: Optional[str] = None
    ring: Optional[int] = None

    def __str__(self):
        return self.text

    @property
    def is_atom(self):
        return self.kind in (TokenKind.ORGANIC_ATOM, TokenKind.BRACKET_ATOM)


def _element_from_symbol(sym):
    if sym in ELEMENTS:
        return sym, False
    if sym in AROMATIC_BRACKET:
        return sym.capitalize(), True
    return None, False


def parse_bracket(text: str, position: int = 0) -> SmilesToken:
    """Parse the contents of a ``[...]`` atom (``text`` includes brackets)."""
    body = text[1:-1]
    i, n = 0, len(body)

    def fail(msg):
        raise TokenError(f"{msg} in bracket atom {text!r}", position + 1 + i)

    j = i
    while j < n and body[j].isdigit():
        j += 1
    isotope = int(body[i:j]) if j > i else None
    i = j
    if i >= n:
        fail("missing element")
    sym = None
    for width in (2, 1):
        cand = body[i : i + width]
        if len(cand) == width and _element_from_symbol(cand)[0] is not None:
            # two-letter symbol only if it really reads as one (e.g. "Cl", "se")
            sym = cand
            break
    if sym is None:
        fail("unknown element")
    element, aromatic = _element_from_symbol(sym)
    i += len(sym)
    chirality = None
    if body.startswith("@@", i):
        chirality, i = "@@", i + 2
    elif body.startswith("@", i):
        chirality, i = "@", i + 1
    if i < n and body[i].isalpha() and body[i] != "H":
        fail("unsupported chirality class or trailing symbol")
    h = 0
    if i < n and body[i] == "H":
        i += 1
        j = i
        while j < n and body[j].isdigit():
            j += 1
        h = int(body[i:j]) if j > i else 1
        i = j
    charge = 0
    if i < n and body[i] in "+-":
        sign = 1 if body[i] == "+" else -1
        ch = body[i]
        i += 1
        j = i
        while j < n and body[j].isdigit():
            j += 1
        if j > i:
            charge = sign * int(body[i:j])
            i = j
        else:
            charge = sign
            while i < n and body[i] == ch:
                charge += sign
                i += 1
    if i < n and body[i] == ":":
        j = i + 1
        while j < n and body[j].isdigit():
            j += 1
        if j == i + 1:
            fail("empty atom class")
        i = j
    if i != n:
        fail("unexpected character")
    return SmilesToken(text, TokenKind.BRACKET_ATOM, element, h, aromatic, charge, isotope, chirality)


def tokenize_smiles(s: str) -> list:
    """Greedy left-to-right SMILES tokenization."""
    out = []
    i, n = 0, len(s)
    while i < n:
        ch = s[i]
        if ch == "[":
            j = s.find("]", i + 1)
            if j < 0:
                raise TokenError("unterminated bracket atom", i)
            if "[" in s[i + 1 : j]:
                raise TokenError("nested bracket", i)
            out.append(parse_bracket(s[i : j + 1], i))
            i = j + 1
        elif s.startswith("Cl", i) or s.startswith("Br", i):
            out.append(SmilesToken(s[i : i + 2], TokenKind.ORGANIC_ATOM, s[i : i + 2]))
            i += 2
        elif ch in ORGANIC:
            out.append(SmilesToken(ch, TokenKind.ORGANIC_ATOM, ch))
            i += 1
        elif ch in AROMATIC_ORGANIC:
            out.append(SmilesToken(ch, TokenKind.ORGANIC_ATOM, ch.upper(), aromatic=True))
            i += 1
        elif ch in BOND_CHARS:
            out.append(SmilesToken(ch, TokenKind.BOND))
            i += 1
        elif ch.isdigit():
            out.append(SmilesToken(ch, TokenKind.RING_BOND, ring=int(ch)))
            i += 1
        elif ch == "%":
            if i + 2 < n and s[i + 1 : i + 3].isdigit():
                out.append(SmilesToken(s[i : i + 3], TokenKind.RING_BOND, ring=int(s[i + 1 : i + 3])))
                i += 3
            else:
                raise TokenError("'%' must be followed by two digits", i)
        elif ch == "(":
            out.append(SmilesToken(ch, TokenKind.BRANCH_OPEN))
            i += 1
        elif ch == ")":
            out.append(SmilesToken(ch, TokenKind.BRANCH_CLOSE))
            i += 1
        elif ch == ".":
            out.append(SmilesToken(ch, TokenKind.DOT))
            i += 1
        else:
            raise TokenError(f"unrecognized character {ch!r}", i)
    return out


def token_from_text(text: str) -> SmilesToken:
    toks = tokenize_smiles(text)
    if len(toks) != 1:
        raise TokenError(f"{text!r} is not a single SMILES token", 0)
    return toks[0]


def token_atom_cost(t) -> ElementCounts:
    """Elements consumed by emitting token ``t`` (explicit bracket H included)."""
    if isinstance(t, str):
        t = token_from_text(t)
    if not t.is_atom:
        return ElementCounts()
    counts = {t.element: 1}
    if t.explicit_h:
        counts["H"] = counts.get("H", 0) + t.explicit_h
    return ElementCounts(counts)
