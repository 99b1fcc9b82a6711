"""Compare the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat N]

Checks that both backends agree and prints the best-of-N time for each kernel.
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from fluxlab import kernels
from fluxlab.lattice import TorusLattice, enumerate_sector
from fluxlab.models import build_preset


def cases():
    rng = np.random.default_rng(1)
    evals = np.sort(rng.normal(size=400))
    yield "filter_weight_matrix (400 levels)", lambda m: m.filter_weight_matrix(evals, 1.3)

    p = build_preset("random_gapped")
    sec = p.sector
    pat = p.spec.pattern(sec)
    angles = np.array([0.3, -0.2, 0.7, 0.1])
    deriv = np.array([1, 0, 0, 0])
    yield (
        f"assemble_dense (dim {sec.dim}, {len(pat.vals)} elements)",
        lambda m: m.assemble_dense(pat.rows, pat.cols, pat.vals, pat.winds, angles, sec.dim, deriv),
    )

    lat = TorusLattice(5, 1, 1)
    s3 = enumerate_sector(lat, 3)
    yield f"rank_configs ({s3.dim} configs)", lambda m: m.rank_configs(s3.basis, s3._table, 3)

    psi = rng.normal(size=s3.dim) + 1j * rng.normal(size=s3.dim)
    psi /= np.linalg.norm(psi)
    inner_sites = list(range(8))
    outer_sites = list(range(8, lat.n_sites))
    _, inner = np.unique(s3.basis[:, inner_sites], axis=0, return_inverse=True)
    _, outer = np.unique(s3.basis[:, outer_sites], axis=0, return_inverse=True)
    inner, outer = inner.ravel().astype(np.int64), outer.ravel().astype(np.int64)
    d_in, d_out = int(inner.max()) + 1, int(outer.max()) + 1
    yield f"reduced_density ({d_in} x {d_out})", lambda m: m.reduced_density(psi, inner, outer, d_in, d_out)


def main(argv=None) -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    py = kernels.backend_module("python")
    try:
        cy = kernels.backend_module("cython")
    except ImportError:
        print("compiled kernels not built; only the fallback is available")
        return
    print(f"{'kernel':45s} {'python':>10s} {'cython':>10s} {'speedup':>8s}  max|diff|")
    for name, fn in cases():
        diff = float(np.abs(np.asarray(fn(py)) - np.asarray(fn(cy))).max())
        tp = min(timeit.repeat(lambda: fn(py), number=1, repeat=args.repeat))
        tc = min(timeit.repeat(lambda: fn(cy), number=1, repeat=args.repeat))
        print(f"{name:45s} {tp * 1e3:9.2f}ms {tc * 1e3:9.2f}ms {tp / tc:7.1f}x  {diff:.1e}")


if __name__ == "__main__":
    main()
