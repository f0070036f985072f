"""Canonical SMILES by iterative rank refinement plus exhaustive tie breaking.

Atoms are ranked by local invariants and refined Morgan-style until the
partition stabilises. Remaining ties are broken by individualizing each
member of the first tied class in turn; the lexicographically smallest
SMILES over all leaves is the canonical form. The leaf count is capped
(``MAX_LEAVES``); past the cap only the first branch is followed.
"""

from __future__ import annotations

from typing import Optional

from ..errors import ParseError, StructureError
from ..spectra import ELEMENTS
from .graph import AROMATIC, MolGraph, parse_smiles, valence_state
from .smiles import ORGANIC, tokenize_smiles

MAX_LEAVES = 2000
_BOND_CODE = {1: 1, 2: 2, 3: 3, AROMATIC: 4}


def _dense_rank(keys):
    uniq = sorted(set(keys))
    index = {k: r for r, k in enumerate(uniq)}
    return [index[k] for k in keys]


def _initial_ranks(g: MolGraph, keep_stereo: bool):
    adj = g.adjacency
    keys = []
    for k, a in enumerate(g.atoms):
        keys.append((
            ELEMENTS.index(a.element),
            a.isotope or 0,
            a.charge,
            a.aromatic,
            g.total_h(k),
            len(adj[k]),
            (a.chirality is not None) if keep_stereo else False,
        ))
    return _dense_rank(keys)


def _refine(g: MolGraph, ranks):
    adj = g.adjacency
    n_classes = len(set(ranks))
    while True:
        keys = [
            (ranks[k], tuple(sorted((ranks[j], _BOND_CODE[o]) for j, o in adj[k].items())))
            for k in range(len(ranks))
        ]
        new = _dense_rank(keys)
        m = len(set(new))
        if m == n_classes:
            return new
        ranks, n_classes = new, m


def _organic_ok(g: MolGraph, k: int, keep_stereo: bool) -> bool:
    a = g.atoms[k]
    if a.element not in ORGANIC or a.charge or a.isotope is not None:
        return False
    if keep_stereo and a.chirality:
        return False
    probe = type(a)(a.element, 0, a.aromatic, 0, None, None, False)
    try:
        h, _ = valence_state(probe, list(g.adjacency[k].values()))
    except ValueError:
        return False
    return h == g.total_h(k)


def _atom_text(g: MolGraph, k: int, keep_stereo: bool, chirality: Optional[str]) -> str:
    a = g.atoms[k]
    sym = a.element.lower() if a.aromatic else a.element
    if _organic_ok(g, k, keep_stereo):
        return sym
    out = ["[", str(a.isotope) if a.isotope is not None else "", sym]
    if keep_stereo and chirality:
        out.append(chirality)
    h = g.total_h(k)
    if h:
        out.append("H" if h == 1 else f"H{h}")
    if a.charge:
        sign = "+" if a.charge > 0 else "-"
        out.append(sign if abs(a.charge) == 1 else f"{sign}{abs(a.charge)}")
    out.append("]")
    return "".join(out)


def _bond_text(g: MolGraph, i: int, j: int) -> str:
    o = g.bond_order(i, j)
    if o == 2:
        return "="
    if o == 3:
        return "#"
    if o == 1 and g.atoms[i].aromatic and g.atoms[j].aromatic:
        return "-"
    return ""


def _permutation_parity(a, b) -> int:
    """Parity of the permutation taking sequence ``a`` to ``b``."""
    pos = {x: k for k, x in enumerate(b)}
    perm = [pos[x] for x in a]
    seen = [False] * len(perm)
    parity = 0
    for s in range(len(perm)):
        if seen[s]:
            continue
        length = 0
        k = s
        while not seen[k]:
            seen[k] = True
            k = perm[k]
            length += 1
        parity ^= (length - 1) & 1
    return parity


def write_smiles(g: MolGraph, ranks, keep_stereo: bool = False) -> str:
    """Serialize ``g`` by DFS, always taking the lowest-ranked neighbour first."""
    n = len(g.atoms)
    adj = g.adjacency
    visited = [False] * n
    parent = [-1] * n
    children = [[] for _ in range(n)]
    ring_open = [[] for _ in range(n)]   # partners closed later
    ring_close = [[] for _ in range(n)]  # partners opened earlier
    seen_pairs = set()
    preorder = []

    def dfs(v):
        visited[v] = True
        preorder.append(v)
        for nb in sorted(adj[v], key=lambda x: ranks[x]):
            if nb == parent[v]:
                continue
            if visited[nb]:
                key = (min(v, nb), max(v, nb))
                if key not in seen_pairs:
                    seen_pairs.add(key)
                    ring_open[nb].append(v)
                    ring_close[v].append(nb)
                continue
            parent[nb] = v
            seen_pairs.add((min(v, nb), max(v, nb)))
            children[v].append(nb)
            dfs(nb)

    roots = []
    for v in sorted(range(n), key=lambda x: ranks[x]):
        if not visited[v]:
            roots.append(v)
            dfs(v)
    order_pos = {v: k for k, v in enumerate(preorder)}

    free_digits = []
    next_digit = [1]
    digit_of = {}

    def take_digit():
        if free_digits:
            free_digits.sort()
            return free_digits.pop(0)
        d = next_digit[0]
        next_digit[0] += 1
        return d

    def digit_text(d):
        return str(d) if d < 10 else f"%{d:02d}"

    out = []

    def emit(v):
        # ring bonds at v: closings first (partner written earlier), then openings
        closings = sorted(ring_close[v], key=lambda x: order_pos[x])
        openings = sorted(ring_open[v], key=lambda x: ranks[x])
        ring_parts = []
        ring_nbrs = []
        for x in closings:
            d = digit_of.pop((x, v))
            ring_parts.append(digit_text(d))
            ring_nbrs.append(x)
            free_digits.append(d)
        for x in openings:
            d = take_digit()
            digit_of[(v, x)] = d
            ring_parts.append(_bond_text(g, v, x) + digit_text(d))
            ring_nbrs.append(x)
        chir = None
        a = g.atoms[v]
        if keep_stereo and a.chirality:
            written = ([parent[v]] if parent[v] >= 0 else [])
            if g.total_h(v):
                written = written + [-1]
            written = written + ring_nbrs + children[v]
            stored = list(g.neighbor_order[v])
            if sorted(stored) == sorted(written):
                flip = _permutation_parity(stored, written)
                chir = a.chirality if not flip else ("@" if a.chirality == "@@" else "@@")
        out.append(_atom_text(g, v, keep_stereo, chir))
        out.extend(ring_parts)
        kids = children[v]
        for k, c in enumerate(kids):
            last = k == len(kids) - 1
            if not last:
                out.append("(")
            out.append(_bond_text(g, v, c))
            emit(c)
            if not last:
                out.append(")")

    for k, r in enumerate(roots):
        if k:
            out.append(".")
        emit(r)
    return "".join(out)


def canonical_ranks(g: MolGraph, keep_stereo: bool = False):
    """Return the canonical SMILES and the atom ranking that produced it."""
    best = [None, None]
    leaves = [0]

    def search(ranks):
        ranks = _refine(g, ranks)
        counts = {}
        for r in ranks:
            counts[r] = counts.get(r, 0) + 1
        tied = [r for r, c in counts.items() if c > 1]
        if not tied:
            leaves[0] += 1
            s = write_smiles(g, ranks, keep_stereo)
            if best[0] is None or s < best[0]:
                best[0], best[1] = s, ranks
            return
        target = min(tied)
        members = [k for k, r in enumerate(ranks) if r == target]
        for m in members:
            doubled = [2 * r for r in ranks]
            doubled[m] -= 1
            search(doubled)
            if leaves[0] >= MAX_LEAVES:
                return

    search(_initial_ranks(g, keep_stereo))
    return best[0], best[1]


def canonicalize(g: MolGraph, keep_stereo: bool = False) -> str:
    if not g.atoms:
        return ""
    return canonical_ranks(g, keep_stereo)[0]


def canonical_smiles(smiles: str, keep_stereo: bool = False) -> Optional[str]:
    """Canonical form of a SMILES string, or None if it does not parse."""
    try:
        g = parse_smiles(tokenize_smiles(smiles))
    except (ParseError, StructureError):
        return None
    return canonicalize(g, keep_stereo)
