# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels: hashed path enumeration and MCES branch-and-bound."""

import numpy as np
cimport numpy as cnp
from libc.stdint cimport uint64_t, int32_t, uint8_t
from libc.stdlib cimport malloc, free

cnp.import_array()

cdef uint64_t FNV_OFFSET = 0xCBF29CE484222325ULL
cdef uint64_t FNV_PRIME = 0x100000001B3ULL


cdef struct PathCtx:
    int n
    int max_len
    uint64_t width
    const int32_t* codes
    const int32_t* indptr
    const int32_t* indices
    const int32_t* bonds
    uint8_t* on_path
    int32_t* seq
    uint8_t* bits


cdef inline void _emit(PathCtx* c, int length) noexcept nogil:
    cdef int i, cmp = 0
    cdef uint64_t h = FNV_OFFSET
    for i in range(length):
        if c.seq[i] != c.seq[length - 1 - i]:
            cmp = -1 if c.seq[length - 1 - i] < c.seq[i] else 1
            break
    if cmp < 0:
        for i in range(length - 1, -1, -1):
            h ^= <uint64_t>c.seq[i]
            h *= FNV_PRIME
    else:
        for i in range(length):
            h ^= <uint64_t>c.seq[i]
            h *= FNV_PRIME
    c.bits[h % c.width] = 1


cdef void _walk(PathCtx* c, int atom, int length, int depth) noexcept nogil:
    cdef int k, nb
    _emit(c, length)
    if depth == c.max_len:
        return
    for k in range(c.indptr[atom], c.indptr[atom + 1]):
        nb = c.indices[k]
        if c.on_path[nb]:
            continue
        c.on_path[nb] = 1
        c.seq[length] = c.bonds[k]
        c.seq[length + 1] = c.codes[nb]
        _walk(c, nb, length + 2, depth + 1)
        c.on_path[nb] = 0


def path_bits(atom_codes, indptr, indices, bond_codes, int max_len, int width):
    cdef int32_t[::1] codes = np.ascontiguousarray(atom_codes, dtype=np.int32)
    cdef int32_t[::1] ip = np.ascontiguousarray(indptr, dtype=np.int32)
    cdef int32_t[::1] ix = np.ascontiguousarray(indices, dtype=np.int32)
    cdef int32_t[::1] bc = np.ascontiguousarray(bond_codes, dtype=np.int32)
    cdef int n = codes.shape[0]
    out = np.zeros(width, dtype=np.uint8)
    cdef uint8_t[::1] bits = out
    cdef PathCtx c
    cdef int start
    if n == 0:
        return out
    c.n = n
    c.max_len = max_len
    c.width = <uint64_t>width
    c.codes = &codes[0]
    c.indptr = &ip[0]
    c.indices = &ix[0] if ix.shape[0] > 0 else NULL
    c.bonds = &bc[0] if bc.shape[0] > 0 else NULL
    c.bits = &bits[0]
    c.on_path = <uint8_t*>malloc(n * sizeof(uint8_t))
    c.seq = <int32_t*>malloc((2 * max_len + 2) * sizeof(int32_t))
    if c.on_path == NULL or c.seq == NULL:
        free(c.on_path)
        free(c.seq)
        raise MemoryError()
    try:
        with nogil:
            for start in range(n):
                c.on_path[start] = 0
            for start in range(n):
                c.on_path[start] = 1
                c.seq[0] = c.codes[start]
                _walk(&c, start, 1, 0)
                c.on_path[start] = 0
    finally:
        free(c.on_path)
        free(c.seq)
    return out


cdef int[4] WCLASS = [6, 4, 3, 2]


cdef struct McesCtx:
    int n1
    int n2
    const int32_t* lab1
    const int32_t* lab2
    const int32_t* A1
    const int32_t* A2
    const int32_t* order
    int ne1
    int ne2
    int ntypes
    const int32_t* e1   # quadruples (u, x, weight class, type)
    const int32_t* e2
    int32_t* mapping
    uint8_t* used
    int32_t* opt_v      # per-depth scratch, n2 slots each
    int32_t* opt_g
    int32_t* cnt1       # ntypes * 4
    int32_t* cnt2
    const int32_t* ip1  # CSR neighbour lists
    const int32_t* ix1
    const int32_t* ip2
    const int32_t* ix2
    int32_t* free2      # per g2 atom: sorted keys of edges to free atoms
    int32_t* nfree2
    int32_t* live1
    int maxdeg2
    long best


cdef inline long _paired(const int32_t* c1, const int32_t* c2) noexcept nogil:
    cdef long total = 0
    cdef int i = 0, j = 0, r1 = c1[0], r2 = c2[0], m, w
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
        w = WCLASS[i] if WCLASS[i] < WCLASS[j] else WCLASS[j]
        total += m * w
        r1 -= m
        r2 -= m


cdef inline long _bound(McesCtx* c) noexcept nogil:
    cdef long b = 0
    cdef int k, mu, mx
    for k in range(4 * c.ntypes):
        c.cnt1[k] = 0
        c.cnt2[k] = 0
    for k in range(c.ne1):
        mu = c.mapping[c.e1[4 * k]]
        mx = c.mapping[c.e1[4 * k + 1]]
        if (mu == -2 or mx == -2) and mu != -1 and mx != -1:
            c.cnt1[4 * c.e1[4 * k + 3] + c.e1[4 * k + 2]] += 1
    for k in range(c.ne2):
        if not (c.used[c.e2[4 * k]] and c.used[c.e2[4 * k + 1]]):
            c.cnt2[4 * c.e2[4 * k + 3] + c.e2[4 * k + 2]] += 1
    for k in range(c.ntypes):
        b += _paired(c.cnt1 + 4 * k, c.cnt2 + 4 * k)
    return b


cdef inline long _gain(McesCtx* c, int u, int v) noexcept nogil:
    cdef long g = 0
    cdef int x, mx, w1, w2
    for x in range(c.n1):
        mx = c.mapping[x]
        if mx >= 0:
            w1 = c.A1[u * c.n1 + x]
            if w1:
                w2 = c.A2[v * c.n2 + mx]
                if w2:
                    g += w1 if w1 < w2 else w2
    return g


cdef inline void _sort_keys(int32_t* a, int m) noexcept nogil:
    cdef int i, j, t
    for i in range(1, m):
        t = a[i]
        j = i - 1
        while j >= 0 and a[j] > t:
            a[j + 1] = a[j]
            j -= 1
        a[j + 1] = t


cdef inline long _label_paired(const int32_t* a, int na, const int32_t* b, int nb) noexcept nogil:
    # keys are label * 8 + (7 - weight): label ascending, weight descending
    cdef long total = 0
    cdef int i = 0, j = 0, w1, w2
    while i < na and j < nb:
        if (a[i] >> 3) < (b[j] >> 3):
            i += 1
        elif (a[i] >> 3) > (b[j] >> 3):
            j += 1
        else:
            w1 = 7 - (a[i] & 7)
            w2 = 7 - (b[j] & 7)
            total += w1 if w1 < w2 else w2
            i += 1
            j += 1
    return total


cdef long _vertex_bound(McesCtx* c) noexcept nogil:
    cdef int u, v, k, x, m, nl
    cdef long total = 0, best_u, val
    cdef int32_t* f
    for v in range(c.n2):
        if c.used[v]:
            continue
        f = c.free2 + v * c.maxdeg2
        m = 0
        for k in range(c.ip2[v], c.ip2[v + 1]):
            x = c.ix2[k]
            if not c.used[x]:
                f[m] = c.lab2[x] * 8 + 7 - c.A2[v * c.n2 + x]
                m += 1
        _sort_keys(f, m)
        c.nfree2[v] = m
    for u in range(c.n1):
        if c.mapping[u] != -2:
            continue
        nl = 0
        for k in range(c.ip1[u], c.ip1[u + 1]):
            x = c.ix1[k]
            if c.mapping[x] == -2:
                c.live1[nl] = c.lab1[x] * 8 + 7 - c.A1[u * c.n1 + x]
                nl += 1
        _sort_keys(c.live1, nl)
        best_u = 0
        for v in range(c.n2):
            if c.used[v] or c.lab2[v] != c.lab1[u]:
                continue
            val = 2 * _gain(c, u, v) + _label_paired(c.live1, nl, c.free2 + v * c.maxdeg2, c.nfree2[v])
            if val > best_u:
                best_u = val
        total += best_u
    return total // 2


cdef void _rec(McesCtx* c, int depth, long score) noexcept nogil:
    cdef int u, v, k, m, i, j, tv, tg
    cdef long b, vb
    cdef int32_t* ov
    cdef int32_t* og
    if score > c.best:
        c.best = score
    if depth == c.n1:
        return
    b = _bound(c)
    if score + b <= c.best:
        return
    vb = _vertex_bound(c)
    if score + vb <= c.best:
        return
    u = c.order[depth]
    ov = c.opt_v + depth * c.n2
    og = c.opt_g + depth * c.n2
    m = 0
    for v in range(c.n2):
        if not c.used[v] and c.lab2[v] == c.lab1[u]:
            ov[m] = v
            og[m] = <int32_t>_gain(c, u, v)
            m += 1
    # insertion sort: gain descending, then vertex ascending
    for i in range(1, m):
        tv = ov[i]
        tg = og[i]
        j = i - 1
        while j >= 0 and (og[j] < tg or (og[j] == tg and ov[j] > tv)):
            ov[j + 1] = ov[j]
            og[j + 1] = og[j]
            j -= 1
        ov[j + 1] = tv
        og[j + 1] = tg
    for k in range(m):
        v = ov[k]
        c.mapping[u] = v
        c.used[v] = 1
        _rec(c, depth + 1, score + og[k])
        c.used[v] = 0
        c.mapping[u] = -2
    c.mapping[u] = -1
    _rec(c, depth + 1, score)
    c.mapping[u] = -2


_WIDX = {6: 0, 4: 1, 3: 2, 2: 3}


def _csr(a):
    rows, cols = np.nonzero(a)
    ip = np.zeros(a.shape[0] + 1, dtype=np.int32)
    np.add.at(ip, rows + 1, 1)
    ip = np.cumsum(ip).astype(np.int32)
    ix = np.append(cols, 0).astype(np.int32)
    return ip, ix


def mces_search(lab1, adj1, lab2, adj2, order, long lower):
    from ._pykernels import typed_edges

    l1 = np.ascontiguousarray(lab1, dtype=np.int32)
    l2 = np.ascontiguousarray(lab2, dtype=np.int32)
    a1 = np.ascontiguousarray(adj1, dtype=np.int32).reshape(len(l1), len(l1))
    a2 = np.ascontiguousarray(adj2, dtype=np.int32).reshape(len(l2), len(l2))
    cdef int n1 = l1.shape[0], n2 = l2.shape[0]
    if n1 == 0 or n2 == 0:
        return lower
    raw1, raw2, ntypes = typed_edges(l1.tolist(), a1.tolist(), l2.tolist(), a2.tolist())
    e1 = np.array([(u, x, _WIDX[w], t) for u, x, w, t in raw1] + [(0, 0, 0, 0)], dtype=np.int32).ravel()
    e2 = np.array([(v, y, _WIDX[w], t) for v, y, w, t in raw2] + [(0, 0, 0, 0)], dtype=np.int32).ravel()
    cdef int32_t[::1] vl1 = l1, vl2 = l2
    cdef int32_t[::1] va1 = a1.ravel(), va2 = a2.ravel()
    cdef int32_t[::1] vord = np.ascontiguousarray(order, dtype=np.int32)
    cdef int32_t[::1] ve1 = e1, ve2 = e2
    cdef int32_t[::1] mapping = np.full(n1, -2, dtype=np.int32)
    cdef uint8_t[::1] used = np.zeros(n2, dtype=np.uint8)
    cdef int32_t[::1] opt_v = np.zeros((n1 + 1) * n2, dtype=np.int32)
    cdef int32_t[::1] opt_g = np.zeros((n1 + 1) * n2, dtype=np.int32)
    cdef int32_t[::1] cnt1 = np.zeros(4 * ntypes + 4, dtype=np.int32)
    cdef int32_t[::1] cnt2 = np.zeros(4 * ntypes + 4, dtype=np.int32)
    ip1, ix1 = _csr(a1)
    ip2, ix2 = _csr(a2)
    cdef int32_t[::1] vip1 = ip1, vix1 = ix1, vip2 = ip2, vix2 = ix2
    cdef int maxdeg1 = int(np.diff(ip1).max()) + 1, maxdeg2 = int(np.diff(ip2).max()) + 1
    cdef int32_t[::1] free2 = np.zeros(n2 * maxdeg2, dtype=np.int32)
    cdef int32_t[::1] nfree2 = np.zeros(n2, dtype=np.int32)
    cdef int32_t[::1] live1 = np.zeros(maxdeg1, dtype=np.int32)
    cdef McesCtx c
    c.ip1 = &vip1[0]
    c.ix1 = &vix1[0]
    c.ip2 = &vip2[0]
    c.ix2 = &vix2[0]
    c.free2 = &free2[0]
    c.nfree2 = &nfree2[0]
    c.live1 = &live1[0]
    c.maxdeg2 = maxdeg2
    c.n1 = n1
    c.n2 = n2
    c.lab1 = &vl1[0]
    c.lab2 = &vl2[0]
    c.A1 = &va1[0]
    c.A2 = &va2[0]
    c.order = &vord[0]
    c.ne1 = len(raw1)
    c.ne2 = len(raw2)
    c.ntypes = ntypes
    c.e1 = &ve1[0]
    c.e2 = &ve2[0]
    c.mapping = &mapping[0]
    c.used = &used[0]
    c.opt_v = &opt_v[0]
    c.opt_g = &opt_g[0]
    c.cnt1 = &cnt1[0]
    c.cnt2 = &cnt2[0]
    c.best = lower
    with nogil:
        _rec(&c, 0, 0)
    return c.best
