"""Independent reference implementations used as test oracles.

None of these share code paths with the package beyond the parsed MolGraph
and the published code tables (element order, bond codes, FNV constants).
"""

import itertools

import networkx as nx
import numpy as np

from specnovo.spectra import ELEMENTS

FNV_OFFSET = 14695981039346656037
FNV_PRIME = 1099511628211


def fnv1a(data):
    h = FNV_OFFSET
    for byte in data:
        h = ((h ^ byte) * FNV_PRIME) % 2 ** 64
    return h


def _code(atom):
    return 1 + 2 * ELEMENTS.index(atom.element) + (1 if atom.aromatic else 0)


def _bond_code(order):
    return {1: 65, 2: 66, 3: 67}.get(order, 68)


def to_nx(g):
    G = nx.Graph()
    for k, a in enumerate(g.atoms):
        G.add_node(k, element=a.element, aromatic=a.aromatic, h=g.total_h(k), charge=a.charge)
    for i, j, o in g.bonds:
        G.add_edge(i, j, order=o)
    return G


def path_fingerprint(g, width=2048, max_bonds=7):
    """Bit indices from every simple path, listed by networkx."""
    G = to_nx(g)
    paths = [[n] for n in G.nodes]
    for s, t in itertools.permutations(G.nodes, 2):
        paths.extend(nx.all_simple_paths(G, s, t, cutoff=max_bonds))
    bits = set()
    for p in paths:
        seq = [_code(g.atoms[p[0]])]
        for a, b in zip(p, p[1:]):
            seq += [_bond_code(G.edges[a, b]["order"]), _code(g.atoms[b])]
        seq = min(seq, seq[::-1])
        bits.add(fnv1a(seq) % width)
    return bits


def tanimoto_sets(a, b):
    union = len(a | b)
    return 1.0 if union == 0 else len(a & b) / union


def _weights(g):
    heavy = [k for k, a in enumerate(g.atoms) if a.element != "H"]
    idx = {k: i for i, k in enumerate(heavy)}
    W = np.zeros((len(heavy), len(heavy)), dtype=np.int64)
    for i, j, o in g.bonds:
        if i in idx and j in idx:
            w = 3 if o == 1.5 else int(2 * o)
            W[idx[i], idx[j]] = W[idx[j], idx[i]] = w
    return [g.atoms[k].element for k in heavy], W


def mces_exhaustive(g1, g2):
    """MCES distance by scoring every maximal label-preserving atom correspondence.

    Adding a pair to a correspondence never removes a common edge, so the
    maximum over maximal correspondences is the maximum common edge weight.
    Weights are half bond-order units internally.
    """
    l1, W1 = _weights(g1)
    l2, W2 = _weights(g2)
    n1, n2 = len(l1), len(l2)
    total = (W1.sum() + W2.sum()) // 2
    if n1 == 0 or n2 == 0:
        return total / 2
    W2p = np.zeros((n2 + 1, n2 + 1), dtype=np.int64)  # row/col n2: unmapped
    W2p[:n2, :n2] = W2
    per_label = []
    for lab in sorted(set(l1)):
        A = [k for k in range(n1) if l1[k] == lab]
        B = [k for k in range(n2) if l2[k] == lab]
        opts = []
        if len(A) <= len(B):
            for img in itertools.permutations(B, len(A)):
                opts.append(dict(zip(A, img)))
        else:
            for pre in itertools.permutations(A, len(B)):
                m = {a: n2 for a in A}
                m.update(zip(pre, B))
                opts.append(m)
        per_label.append(opts)
    maps = []
    for combo in itertools.product(*per_label):
        row = [n2] * n1
        for part in combo:
            for a, b in part.items():
                row[a] = b
        maps.append(row)
    P = np.array(maps, dtype=np.int64)
    common = np.zeros(len(P), dtype=np.int64)
    for u in range(n1):
        for v in range(u + 1, n1):
            if W1[u, v]:
                common += np.minimum(W1[u, v], W2p[P[:, u], P[:, v]])
    return (total - 2 * int(common.max())) / 2


def isomorphic(g1, g2):
    """Graph isomorphism respecting element, aromaticity, hydrogens, charge and bond order."""
    def nm(a, b):
        return all(a[k] == b[k] for k in ("element", "aromatic", "h", "charge"))

    return nx.is_isomorphic(to_nx(g1), to_nx(g2), node_match=nm,
                            edge_match=lambda a, b: a["order"] == b["order"])


def cosine_topn(q, M, n):
    """Brute-force ranking: cosine descending, then lower index first."""
    qn = q / np.linalg.norm(q)
    sims = [(float(np.dot(qn, row / np.linalg.norm(row))), j) for j, row in enumerate(M)]
    sims.sort(key=lambda t: (-t[0], t[1]))
    return [j for _, j in sims[:n]]
