"""Synthetic molecules and spectra for fixtures, harnesses and benchmarks.

Molecules are random valence-respecting graphs in two structural regimes:

* ``"A"``: aliphatic C/N/O skeletons, occasional double bonds and one ring.
* ``"B"``: a benzene or pyridine core with substituents including halogens.

Spectra are [M+H]+ plus the protonated fragments from breaking every acyclic
bond, with random intensities and a few noise peaks, so different seeds give
different spectra of the same molecule.
"""

from __future__ import annotations

import numpy as np

from .chem import canonicalize, formula_of, parse_smiles
from .chem.graph import Atom, MolGraph, _assign_hydrogens
from .errors import SpecNovoError
from .spectra import Adduct, Spectrum, SpectrumRecord

MONO = {
    "H": 1.00782503, "C": 12.0, "N": 14.00307401, "O": 15.99491462, "S": 31.97207117,
    "P": 30.97376199, "F": 18.99840320, "Cl": 34.96885268, "Br": 78.9183371,
    "I": 126.904473, "B": 11.0093054, "Si": 27.9769265, "Se": 79.9165218, "As": 74.9215964,
}
PROTON = 1.00727646688

_CAPACITY = {"C": 4, "N": 3, "O": 2, "F": 1, "Cl": 1, "Br": 1, "S": 2}

REGIMES = {
    "A": {"elements": ("C", "N", "O"), "weights": (0.7, 0.15, 0.15), "double": 0.2, "ring": 0.3},
    "B": {"elements": ("C", "N", "O", "F", "Cl", "Br"), "weights": (0.5, 0.1, 0.15, 0.1, 0.1, 0.05),
          "double": 0.1, "ring": 0.0},
}


def _build(elements, aromatic, bonds):
    atoms = [Atom(el, aromatic=ar) for el, ar in zip(elements, aromatic)]
    nbrs = [[] for _ in atoms]
    for i, j, _ in bonds:
        nbrs[i].append(j)
        nbrs[j].append(i)
    g = MolGraph(atoms, sorted((min(i, j), max(i, j), o) for i, j, o in bonds), [], nbrs)
    _assign_hydrogens(g)
    return g


def random_molecule(rng, n_heavy: int, regime: str = "A") -> str:
    """Canonical SMILES of a random molecule with exactly ``n_heavy`` heavy atoms."""
    spec = REGIMES[regime]
    els, ar, bonds, cap = [], [], [], []
    if regime == "B":
        ring_n = rng.random() < 0.3
        for k in range(6):
            is_n = ring_n and k == 3
            els.append("N" if is_n else "C")
            ar.append(True)
            cap.append(0 if is_n else 1)
            bonds.append((k, (k + 1) % 6, 1.5))
        n_heavy = max(n_heavy, 6)
    else:
        els.append(str(rng.choice(spec["elements"], p=spec["weights"])))
        ar.append(False)
        cap.append(_CAPACITY[els[0]])
    tries = 0
    while len(els) < n_heavy and tries < 50 * n_heavy:
        tries += 1
        open_ = [k for k, c in enumerate(cap) if c > 0]
        if not open_:
            break
        at = int(rng.choice(open_))
        el = str(rng.choice(spec["elements"], p=spec["weights"]))
        order = 1
        room = min(cap[at], _CAPACITY[el])
        if room >= 2 and not ar[at] and rng.random() < spec["double"]:
            order = 2
        if room < order or _CAPACITY[el] - order < 0:
            continue
        if len(els) + 1 < n_heavy and _CAPACITY[el] - order == 0 and len(open_) == 1 and cap[at] == order:
            continue  # would leave nowhere to grow
        k = len(els)
        els.append(el)
        ar.append(False)
        cap.append(_CAPACITY[el] - order)
        cap[at] -= order
        bonds.append((at, k, order))
    if spec["ring"] and rng.random() < spec["ring"]:
        g = _build(els, ar, bonds)
        cand = []
        for i in range(len(els)):
            for j in range(i + 1, len(els)):
                if cap[i] and cap[j] and j not in g.adjacency[i] and 3 <= _path_len(g, i, j) + 1 <= 6:
                    cand.append((i, j))
        if cand:
            i, j = cand[int(rng.integers(len(cand)))]
            bonds.append((i, j, 1))
            cap[i] -= 1
            cap[j] -= 1
    return canonicalize(_build(els, ar, bonds))


def _path_len(g, a, b):
    dist = {a: 0}
    frontier = [a]
    while frontier:
        nxt = []
        for u in frontier:
            for v in g.adjacency[u]:
                if v not in dist:
                    dist[v] = dist[u] + 1
                    nxt.append(v)
        frontier = nxt
    return dist.get(b, 10 ** 6)


def molecule_set(seed: int, n: int, regime: str = "A", min_heavy: int = 4, max_heavy: int = 10) -> list:
    """``n`` distinct canonical SMILES."""
    rng = np.random.default_rng(seed)
    out, seen = [], set()
    tries = 0
    while len(out) < n:
        tries += 1
        if tries > 200 * n:
            raise SpecNovoError(f"could not draw {n} distinct molecules")
        s = random_molecule(rng, int(rng.integers(min_heavy, max_heavy + 1)), regime)
        if s not in seen:
            seen.add(s)
            out.append(s)
    return out


def _component(g, start, cut):
    seen = {start}
    stack = [start]
    while stack:
        u = stack.pop()
        for v in g.adjacency[u]:
            if {u, v} == cut or v in seen:
                continue
            seen.add(v)
            stack.append(v)
    return seen


def fragment_masses(smiles: str) -> list:
    """Neutral masses of the molecule and of both sides of every acyclic bond."""
    g = parse_smiles(smiles)
    mass = [MONO[a.element] + g.total_h(k) * MONO["H"] for k, a in enumerate(g.atoms)]
    out = [sum(mass)]
    for i, j, _ in g.bonds:
        side = _component(g, i, {i, j})
        if j in side:
            continue
        m = sum(mass[k] for k in side)
        out.extend([m, out[0] - m])
    return sorted(set(round(m, 4) for m in out))


def simulate_spectrum(smiles: str, rng, n_noise: int = 2, source: str = "synthetic",
                      collision_energy=None) -> Spectrum:
    peaks = {}
    for m in fragment_masses(smiles):
        mz = round(m + PROTON, 4)
        peaks[mz] = float(np.round(rng.uniform(5.0, 100.0), 2))
    top = max(peaks)
    for _ in range(n_noise):
        mz = round(float(rng.uniform(15.0, top)), 4)
        peaks.setdefault(mz, float(np.round(rng.uniform(0.2, 3.0), 2)))
    return Spectrum(tuple(sorted(peaks.items())), Adduct.H, collision_energy, source)


def make_records(smiles_list, seed: int, per_molecule: int = 1, source: str = "synthetic") -> list:
    rng = np.random.default_rng(seed)
    out = []
    for s in smiles_list:
        f = formula_of(parse_smiles(s))
        for r in range(per_molecule):
            spec = simulate_spectrum(s, rng, source=source, collision_energy=float(10 + 10 * r))
            out.append(SpectrumRecord(spec, f, s))
    return out
