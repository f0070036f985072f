"""Hashed linear-path fingerprints."""

from __future__ import annotations

import numpy as np

from .. import kernels
from ..errors import DomainError
from ..spectra import ELEMENTS
from .graph import AROMATIC, MolGraph

DEFAULT_WIDTH = 2048
MAX_PATH_BONDS = 7

BOND_CODES = {1: 65, 2: 66, 3: 67, AROMATIC: 68}


def atom_code(element: str, aromatic: bool) -> int:
    return 1 + 2 * ELEMENTS.index(element) + int(aromatic)


class Fingerprint:
    __slots__ = ("bits", "popcount")

    def __init__(self, bits):
        bits = np.asarray(bits, dtype=bool)
        if bits.ndim != 1:
            raise DomainError("fingerprint must be a 1-D bit vector")
        self.bits = bits
        self.popcount = int(bits.sum())

    @classmethod
    def from_indices(cls, indices, width=DEFAULT_WIDTH):
        bits = np.zeros(width, dtype=bool)
        bits[list(indices)] = True
        return cls(bits)

    @property
    def width(self):
        return self.bits.shape[0]

    def on_bits(self):
        return np.flatnonzero(self.bits)

    def __eq__(self, other):
        return isinstance(other, Fingerprint) and np.array_equal(self.bits, other.bits)

    def __repr__(self):
        return f"Fingerprint(width={self.width}, popcount={self.popcount})"


def graph_arrays(g: MolGraph):
    """Atom codes plus CSR adjacency (indptr, indices, bond codes)."""
    n = len(g.atoms)
    codes = np.array([atom_code(a.element, a.aromatic) for a in g.atoms], dtype=np.int32)
    adj = g.adjacency
    indptr = np.zeros(n + 1, dtype=np.int32)
    indices, bcodes = [], []
    for k in range(n):
        for nb in sorted(adj[k]):
            indices.append(nb)
            bcodes.append(BOND_CODES[adj[k][nb]])
        indptr[k + 1] = len(indices)
    return codes, indptr, np.array(indices, dtype=np.int32), np.array(bcodes, dtype=np.int32)


def fingerprint(g: MolGraph, width: int = DEFAULT_WIDTH, max_len: int = MAX_PATH_BONDS) -> Fingerprint:
    if width < 1 or width & (width - 1):
        raise DomainError(f"fingerprint width must be a power of two, got {width}")
    codes, indptr, indices, bcodes = graph_arrays(g)
    bits = kernels.path_bits(codes, indptr, indices, bcodes, max_len, width)
    return Fingerprint(bits.astype(bool))
