"""Pure-Python kernels. Mirrors ``_ckernels.pyx`` call-for-call."""

import numpy as np

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
MASK64 = 0xFFFFFFFFFFFFFFFF


def fnv1a64(seq):
    h = FNV_OFFSET
    for b in seq:
        h ^= b
        h = (h * FNV_PRIME) & MASK64
    return h


def path_bits(atom_codes, indptr, indices, bond_codes, max_len, width):
    """Set one bit per simple path of 0..max_len bonds.

    A path is the byte sequence ``a0 b01 a1 b12 a2 ...`` read in whichever
    direction is lexicographically smaller, hashed with 64-bit FNV-1a.
    """
    n = len(atom_codes)
    bits = np.zeros(width, dtype=np.uint8)
    atom_codes = [int(c) for c in atom_codes]
    indptr = [int(x) for x in indptr]
    indices = [int(x) for x in indices]
    bond_codes = [int(x) for x in bond_codes]
    on_path = [False] * n

    def emit(seq):
        rev = seq[::-1]
        h = fnv1a64(rev if rev < seq else seq)
        bits[h % width] = 1

    def walk(atom, seq, depth):
        emit(seq)
        if depth == max_len:
            return
        for k in range(indptr[atom], indptr[atom + 1]):
            nb = indices[k]
            if on_path[nb]:
                continue
            on_path[nb] = True
            seq.append(bond_codes[k])
            seq.append(atom_codes[nb])
            walk(nb, seq, depth + 1)
            seq.pop()
            seq.pop()
            on_path[nb] = False

    for start in range(n):
        on_path[start] = True
        walk(start, [atom_codes[start]], 0)
        on_path[start] = False
    return bits


WEIGHT_CLASSES = (6, 4, 3, 2)


def typed_edges(lab1, A1, lab2, A2):
    """Edge lists ``(u, x, weight, type)`` for both graphs.

    The type is the unordered endpoint-label pair; only types present in
    both graphs are kept since no other edge can ever be matched.
    """
    def collect(lab, A):
        out = []
        n = len(lab)
        for u in range(n):
            for x in range(u + 1, n):
                if A[u][x]:
                    out.append((u, x, int(A[u][x]), (min(lab[u], lab[x]), max(lab[u], lab[x]))))
        return out

    raw1, raw2 = collect(lab1, A1), collect(lab2, A2)
    shared = sorted({t for *_, t in raw1} & {t for *_, t in raw2})
    tid = {t: k for k, t in enumerate(shared)}
    e1 = [(u, x, w, tid[t]) for u, x, w, t in raw1 if t in tid]
    e2 = [(v, y, w, tid[t]) for v, y, w, t in raw2 if t in tid]
    return e1, e2, len(shared)


def paired_min_sum(c1, c2):
    """Max of sum(min(w1, w2)) over matchings between two weight multisets.

    ``c1``/``c2`` are counts per entry of WEIGHT_CLASSES (descending).
    """
    total = 0
    i = j = 0
    r1, r2 = c1[0], c2[0]
    while True:
        while i < 4 and r1 == 0:
            i += 1
            r1 = c1[i] if i < 4 else 0
        while j < 4 and r2 == 0:
            j += 1
            r2 = c2[j] if j < 4 else 0
        if i >= 4 or j >= 4:
            return total
        m = r1 if r1 < r2 else r2
        w = WEIGHT_CLASSES[i] if WEIGHT_CLASSES[i] < WEIGHT_CLASSES[j] else WEIGHT_CLASSES[j]
        total += m * w
        r1 -= m
        r2 -= m


_WIDX = {w: k for k, w in enumerate(WEIGHT_CLASSES)}


def label_paired(a, b):
    """Sum of min weights pairing two ``(label, -weight)`` lists sorted ascending."""
    total = 0
    i = j = 0
    while i < len(a) and j < len(b):
        if a[i][0] < b[j][0]:
            i += 1
        elif a[i][0] > b[j][0]:
            j += 1
        else:
            w1, w2 = -a[i][1], -b[j][1]
            total += w1 if w1 < w2 else w2
            i += 1
            j += 1
    return total


def mces_search(lab1, adj1, lab2, adj2, order, lower):
    """Maximum common edge weight between two labeled graphs.

    Weights are integers (half bond-order units). Only solutions strictly
    better than ``lower`` are searched for; returns ``lower`` if none exists.
    """
    n1, n2 = len(lab1), len(lab2)
    lab1 = [int(x) for x in lab1]
    lab2 = [int(x) for x in lab2]
    A1 = [[int(x) for x in row] for row in adj1]
    A2 = [[int(x) for x in row] for row in adj2]
    order = [int(x) for x in order]
    edges1, edges2, n_types = typed_edges(lab1, A1, lab2, A2)
    edges1 = [(u, x, _WIDX[w], t) for u, x, w, t in edges1]
    edges2 = [(v, y, _WIDX[w], t) for v, y, w, t in edges2]

    UNDECIDED, UNMAPPED = -2, -1
    mapping = [UNDECIDED] * n1
    used = [False] * n2
    best = [int(lower)]
    nbrs1 = [[x for x in range(n1) if A1[u][x]] for u in range(n1)]
    nbrs2 = [[y for y in range(n2) if A2[v][y]] for v in range(n2)]

    def edge_bound():
        c1 = [[0, 0, 0, 0] for _ in range(n_types)]
        c2 = [[0, 0, 0, 0] for _ in range(n_types)]
        for u, x, wi, t in edges1:
            mu, mx = mapping[u], mapping[x]
            if (mu == UNDECIDED or mx == UNDECIDED) and mu != UNMAPPED and mx != UNMAPPED:
                c1[t][wi] += 1
        for v, y, wi, t in edges2:
            if not (used[v] and used[y]):
                c2[t][wi] += 1
        return sum(paired_min_sum(c1[t], c2[t]) for t in range(n_types))

    def vertex_bound():
        # twice the extra weight is at most the sum over undecided atoms of
        # 2 * (edges to mapped atoms) + (label-paired edges to free atoms)
        free2 = []
        for v in range(n2):
            if used[v]:
                free2.append(None)
            else:
                free2.append(sorted(((lab2[y], -A2[v][y]) for y in nbrs2[v] if not used[y])))
        total = 0
        for u in range(n1):
            if mapping[u] != UNDECIDED:
                continue
            live = sorted((lab1[x], -A1[u][x]) for x in nbrs1[u] if mapping[x] == UNDECIDED)
            best_u = 0
            for v in range(n2):
                if used[v] or lab2[v] != lab1[u]:
                    continue
                val = 2 * gain(u, v) + label_paired(live, free2[v])
                if val > best_u:
                    best_u = val
            total += best_u
        return total // 2

    def bound(score):
        b = edge_bound()
        if score + b <= best[0]:
            return b
        v = vertex_bound()
        return v if v < b else b

    def gain(u, v):
        g = 0
        row1, row2 = A1[u], A2[v]
        for x in range(n1):
            mx = mapping[x]
            if mx >= 0 and row1[x]:
                w2 = row2[mx]
                if w2:
                    g += row1[x] if row1[x] < w2 else w2
        return g

    def rec(depth, score):
        if score > best[0]:
            best[0] = score
        if depth == n1:
            return
        if score + bound(score) <= best[0]:
            return
        u = order[depth]
        options = []
        for v in range(n2):
            if not used[v] and lab2[v] == lab1[u]:
                options.append((-gain(u, v), v))
        options.sort()
        for neg, v in options:
            mapping[u] = v
            used[v] = True
            rec(depth + 1, score - neg)
            used[v] = False
            mapping[u] = UNDECIDED
        mapping[u] = UNMAPPED
        rec(depth + 1, score)
        mapping[u] = UNDECIDED

    rec(0, 0)
    return best[0]
