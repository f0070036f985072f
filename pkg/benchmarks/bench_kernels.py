"""Compare the compiled and pure-Python kernels on synthetic molecules.

    python3 benchmarks/bench_kernels.py [--pairs 60] [--molecules 200] [--repeat 3]

Both backends are called directly, so results do not depend on
SPECNOVO_PURE_PYTHON. Outputs are checked for agreement before timing.
"""

import argparse
import itertools
import time

import numpy as np

from specnovo import synth
from specnovo.chem import parse_smiles
from specnovo.chem.fingerprint import DEFAULT_WIDTH, MAX_PATH_BONDS, graph_arrays
from specnovo.kernels import available_backends
from specnovo.metrics import _search_order, heavy_graph


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--pairs", type=int, default=60)
    ap.add_argument("--molecules", type=int, default=200)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    backends = available_backends()
    if "cython" not in backends:
        print("compiled kernels not built; only the Python backend is available")

    n_a = args.molecules // 2
    smiles = (synth.molecule_set(args.seed, n_a, "A", 6, 14)
              + synth.molecule_set(args.seed + 1, args.molecules - n_a, "B", 6, 14))
    graphs = [parse_smiles(s) for s in smiles]
    fp_inputs = [graph_arrays(g) for g in graphs]

    rng = np.random.default_rng(args.seed)
    all_pairs = list(itertools.combinations(range(len(graphs)), 2))
    picks = rng.choice(len(all_pairs), min(args.pairs, len(all_pairs)), replace=False)
    mces_inputs = []
    for p in picks:
        a, b = (heavy_graph(graphs[i]) for i in all_pairs[p])
        if len(a[0]) > len(b[0]):
            a, b = b, a
        mces_inputs.append((a[0], a[1], b[0], b[1], _search_order(a[1]), -1))

    def run_fp(mod):
        return [mod.path_bits(*x, MAX_PATH_BONDS, DEFAULT_WIDTH) for x in fp_inputs]

    def run_mces(mod):
        return [mod.mces_search(*x) for x in mces_inputs]

    ref_fp, ref_mces = run_fp(backends["python"]), run_mces(backends["python"])
    for name, mod in backends.items():
        assert all(np.array_equal(a, b) for a, b in zip(run_fp(mod), ref_fp)), name
        assert run_mces(mod) == ref_mces, name

    rows = []
    for kernel, fn, n in (("path_bits", run_fp, len(fp_inputs)), ("mces_search", run_mces, len(mces_inputs))):
        timings = {name: best_of(lambda: fn(mod), args.repeat) for name, mod in backends.items()}
        for name, t in timings.items():
            speedup = timings["python"] / t
            rows.append(f"{kernel:<12} {name:<7} {n:>5} calls  {t * 1e3:10.2f} ms  {speedup:7.1f}x")
    print(f"{'kernel':<12} {'backend':<7} {'n':>5}        {'best time':>13}  speedup")
    print("\n".join(rows))


if __name__ == "__main__":
    main()
