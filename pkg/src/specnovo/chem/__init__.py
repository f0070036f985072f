"""SMILES handling, molecular graphs, canonical forms and fingerprints."""

from .canon import canonical_smiles, canonicalize
from .fingerprint import DEFAULT_WIDTH, Fingerprint, fingerprint
from .graph import AROMATIC, Atom, MolGraph, formula_of, parse_smiles, try_parse
from .smiles import SmilesToken, TokenKind, token_atom_cost, tokenize_smiles

__all__ = [
    "AROMATIC",
    "Atom",
    "DEFAULT_WIDTH",
    "Fingerprint",
    "MolGraph",
    "SmilesToken",
    "TokenKind",
    "canonical_smiles",
    "canonicalize",
    "fingerprint",
    "formula_of",
    "parse_smiles",
    "token_atom_cost",
    "tokenize_smiles",
    "try_parse",
]
