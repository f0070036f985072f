"""Molecular graphs built from SMILES tokens, with valence bookkeeping."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from ..errors import ParseError, StructureError, ValenceError
from ..spectra import ElementCounts
from .smiles import SmilesToken, TokenKind, tokenize_smiles

AROMATIC = 1.5

# smallest valence first; implicit H uses the smallest one that fits
VALENCES = {
    "H": (1,),
    "B": (3,),
    "C": (4,),
    "N": (3,),
    "O": (2,),
    "P": (3, 5),
    "S": (2, 4, 6),
    "F": (1,),
    "Cl": (1,),
    "Br": (1,),
    "I": (1,),
    "Si": (4,),
    "Se": (2, 4, 6),
    "As": (3, 5),
}


def allowed_valences(element: str, charge: int = 0) -> tuple:
    base = VALENCES[element]
    if charge == 0:
        return base
    if element in ("C", "Si"):
        vals = tuple(v - abs(charge) for v in base)
    elif element == "B":
        vals = tuple(v - charge for v in base)
    else:
        vals = tuple(v + charge for v in base)
    return tuple(v for v in vals if v >= 0)


@dataclass
class Atom:
    element: str
    charge: int = 0
    aromatic: bool = False
    explicit_h: int = 0
    isotope: Optional[int] = None
    chirality: Optional[str] = None
    bracket: bool = False


@dataclass
class MolGraph:
    atoms: list = field(default_factory=list)
    bonds: list = field(default_factory=list)  # (i, j, order), i < j
    implicit_h: list = field(default_factory=list)
    # per-atom neighbour order as written (-1 marks the bracket H), for stereo
    neighbor_order: list = field(default_factory=list)

    def __post_init__(self):
        self._adj = None

    def __len__(self):
        return len(self.atoms)

    @property
    def adjacency(self) -> list:
        """``adjacency[i]`` maps neighbour index -> bond order."""
        if self._adj is None or len(self._adj) != len(self.atoms):
            adj = [dict() for _ in self.atoms]
            for i, j, order in self.bonds:
                adj[i][j] = order
                adj[j][i] = order
            self._adj = adj
        return self._adj

    def bond_order(self, i, j):
        return self.adjacency[i].get(j)

    def total_h(self, i) -> int:
        return self.atoms[i].explicit_h + self.implicit_h[i]

    def heavy_atom_count(self) -> int:
        return sum(1 for a in self.atoms if a.element != "H")

    def permuted(self, perm) -> "MolGraph":
        """Relabel atoms: old atom ``k`` becomes new atom ``perm[k]``."""
        n = len(self.atoms)
        inv = [0] * n
        for old, new in enumerate(perm):
            inv[new] = old
        atoms = [self.atoms[inv[k]] for k in range(n)]
        bonds = sorted(
            (min(perm[i], perm[j]), max(perm[i], perm[j]), o) for i, j, o in self.bonds
        )
        implicit = [self.implicit_h[inv[k]] for k in range(n)]
        order = [[-1 if x < 0 else perm[x] for x in self.neighbor_order[inv[k]]] for k in range(n)]
        return MolGraph(atoms, bonds, implicit, order)


def valence_state(atom: Atom, orders) -> tuple:
    """Return ``(implicit_h, has_pi)`` for an atom with the given bond orders.

    Aromatic bonds count 1 here; an aromatic atom contributes one extra
    valence unit to the pi system when it has room for it.
    """
    n_arom = sum(1 for o in orders if o == AROMATIC)
    v = sum(o for o in orders if o != AROMATIC) + n_arom
    vals = allowed_valences(atom.element, atom.charge)
    if atom.bracket:
        total = v + atom.explicit_h
        if not vals or total > max(vals):
            raise ValueError
        has_pi = atom.aromatic and any(val >= total + 1 for val in vals)
        return 0, has_pi
    fitting = [val for val in vals if val >= v]
    if not fitting:
        raise ValueError
    slack = fitting[0] - v
    if atom.aromatic and slack >= 1:
        return slack - 1, True
    return slack, False


def _assign_hydrogens(g: MolGraph):
    adj = g.adjacency
    pi = []
    g.implicit_h = []
    for idx, atom in enumerate(g.atoms):
        orders = list(adj[idx].values())
        n_arom = sum(1 for o in orders if o == AROMATIC)
        if n_arom and not atom.aromatic:
            raise StructureError(f"aromatic bond on non-aromatic atom {idx}")
        if atom.aromatic and n_arom < 2:
            raise StructureError(f"aromatic atom {idx} is not in an aromatic ring")
        try:
            h, has_pi = valence_state(atom, orders)
        except ValueError:
            raise ValenceError(f"valence exceeded on atom {idx} ({atom.element})", idx) from None
        g.implicit_h.append(h)
        pi.append(has_pi)
    # each aromatic system must pair up its pi atoms into double bonds
    seen = [False] * len(g.atoms)
    for start, atom in enumerate(g.atoms):
        if not atom.aromatic or seen[start]:
            continue
        stack, count = [start], 0
        seen[start] = True
        while stack:
            k = stack.pop()
            count += pi[k]
            for nb, o in adj[k].items():
                if o == AROMATIC and not seen[nb]:
                    seen[nb] = True
                    stack.append(nb)
        if count % 2:
            raise StructureError(f"aromatic system at atom {start} has odd pi count")


def _bond_order(tok: Optional[SmilesToken], a: Atom, b: Atom):
    if tok is None or tok.text in "/\\":
        return AROMATIC if (tok is None and a.aromatic and b.aromatic) else 1
    return {"-": 1, "=": 2, "#": 3, ":": AROMATIC}[tok.text]


def parse_smiles(tokens) -> MolGraph:
    """Build a MolGraph from tokens (or raw SMILES text)."""
    if isinstance(tokens, str):
        tokens = tokenize_smiles(tokens)
    g = MolGraph()
    prev = None
    pending = None
    branch_stack = []
    branch_has_atom = []
    rings = {}  # digit -> (atom, bond token, slot in neighbour order)
    pairs = set()

    def add_bond(i, j, order):
        if i == j:
            raise StructureError(f"ring bond closes on atom {i} itself")
        key = (min(i, j), max(i, j))
        if key in pairs:
            raise StructureError(f"duplicate bond between atoms {i} and {j}")
        pairs.add(key)
        g.bonds.append((key[0], key[1], order))

    for pos, tok in enumerate(tokens):
        kind = tok.kind
        if tok.is_atom:
            atom = Atom(
                tok.element,
                tok.charge,
                tok.aromatic,
                tok.explicit_h or 0,
                tok.isotope,
                tok.chirality,
                kind is TokenKind.BRACKET_ATOM,
            )
            idx = len(g.atoms)
            g.atoms.append(atom)
            g.neighbor_order.append([])
            if prev is not None:
                add_bond(prev, idx, _bond_order(pending, g.atoms[prev], atom))
                g.neighbor_order[prev].append(idx)
                g.neighbor_order[idx].append(prev)
            elif pending is not None:
                raise StructureError(f"bond symbol without a preceding atom at token {pos}")
            if atom.bracket and atom.explicit_h:
                g.neighbor_order[idx].append(-1)
            pending = None
            prev = idx
            if branch_has_atom:
                branch_has_atom[-1] = True
        elif kind is TokenKind.BOND:
            if prev is None or pending is not None:
                raise StructureError(f"misplaced bond symbol at token {pos}")
            pending = tok
        elif kind is TokenKind.RING_BOND:
            if prev is None:
                raise StructureError(f"ring-bond digit without an atom at token {pos}")
            if tok.ring in rings:
                other, other_tok, slot = rings.pop(tok.ring)
                if (pending is not None and other_tok is not None
                        and pending.text != other_tok.text
                        and not (pending.text in "/\\" and other_tok.text in "/\\")):
                    raise StructureError(f"conflicting ring-bond orders for digit {tok.ring}")
                use = pending if pending is not None else other_tok
                add_bond(other, prev, _bond_order(use, g.atoms[other], g.atoms[prev]))
                g.neighbor_order[other][slot] = prev
                g.neighbor_order[prev].append(other)
            else:
                rings[tok.ring] = (prev, pending, len(g.neighbor_order[prev]))
                g.neighbor_order[prev].append(None)
            pending = None
        elif kind is TokenKind.BRANCH_OPEN:
            if prev is None or pending is not None:
                raise StructureError(f"misplaced '(' at token {pos}")
            branch_stack.append(prev)
            branch_has_atom.append(False)
        elif kind is TokenKind.BRANCH_CLOSE:
            if not branch_stack:
                raise StructureError(f"unmatched ')' at token {pos}")
            if pending is not None or not branch_has_atom[-1]:
                raise StructureError(f"empty or dangling branch at token {pos}")
            prev = branch_stack.pop()
            branch_has_atom.pop()
        elif kind is TokenKind.DOT:
            if prev is None or pending is not None:
                raise StructureError(f"misplaced '.' at token {pos}")
            prev = None
    if pending is not None:
        raise StructureError("SMILES ends with a bond symbol")
    if branch_stack:
        raise StructureError("unclosed branch")
    if rings:
        raise StructureError(f"unmatched ring-bond digit(s) {sorted(rings)}")
    if not g.atoms:
        raise StructureError("empty SMILES")
    _assign_hydrogens(g)
    return g


def formula_of(g: MolGraph) -> ElementCounts:
    counts = {}
    h = 0
    for k, atom in enumerate(g.atoms):
        counts[atom.element] = counts.get(atom.element, 0) + 1
        h += atom.explicit_h + g.implicit_h[k]
    counts["H"] = counts.get("H", 0) + h
    return ElementCounts(counts)


def try_parse(smiles: str) -> Optional[MolGraph]:
    try:
        return parse_smiles(tokenize_smiles(smiles))
    except (ParseError, StructureError):
        return None
