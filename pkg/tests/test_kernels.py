import numpy as np
import pytest

from fluxlab import kernels
from fluxlab.lattice import TorusLattice, enumerate_sector
from fluxlab.models import build_preset

PY = kernels.backend_module("python")
try:
    CY = kernels.backend_module("cython")
except ImportError:  # pragma: no cover
    CY = None

needs_cy = pytest.mark.skipif(CY is None, reason="compiled kernels not built")


def test_backend_names():
    assert kernels.BACKEND in ("python", "cython")
    with pytest.raises(ValueError):
        kernels.backend_module("fortran")


@needs_cy
def test_filter_weight_matrix_agree():
    ev = np.sort(np.random.default_rng(0).normal(size=50))
    ev[3] = ev[2] + 1e-9  # exercise the series branch
    a, b = PY.filter_weight_matrix(ev, 1.1), CY.filter_weight_matrix(ev, 1.1)
    assert np.abs(a - b).max() < 1e-15
    assert np.abs(np.diag(a)).max() == 0


@needs_cy
def test_assemble_agree():
    p = build_preset("random_gapped")
    sec = p.sector
    pat = p.spec.pattern(sec)
    ang = np.array([0.3, -0.2, 0.7, 0.1])
    for d in ([0, 0, 0, 0], [1, 0, 0, 0], [0, 2, 0, 0]):
        d = np.array(d)
        a = PY.assemble_dense(pat.rows, pat.cols, pat.vals, pat.winds, ang, sec.dim, d)
        b = CY.assemble_dense(pat.rows, pat.cols, pat.vals, pat.winds, ang, sec.dim, d)
        assert np.abs(a - b).max() < 1e-14


@needs_cy
def test_rank_agree():
    s = enumerate_sector(TorusLattice(4), 3)
    a = PY.rank_configs(s.basis, s._table, 3)
    assert np.array_equal(a, CY.rank_configs(s.basis, s._table, 3))
    assert np.array_equal(a, np.arange(s.dim))


@needs_cy
def test_reduced_density_agree():
    rng = np.random.default_rng(2)
    s = enumerate_sector(TorusLattice(3), 2)
    psi = rng.normal(size=s.dim) + 1j * rng.normal(size=s.dim)
    _, inner = np.unique(s.basis[:, :4], axis=0, return_inverse=True)
    _, outer = np.unique(s.basis[:, 4:], axis=0, return_inverse=True)
    inner, outer = inner.ravel().astype(np.int64), outer.ravel().astype(np.int64)
    args = (psi, inner, outer, int(inner.max()) + 1, int(outer.max()) + 1)
    assert np.abs(PY.reduced_density(*args) - CY.reduced_density(*args)).max() < 1e-14


def test_fallback_env(monkeypatch):
    import importlib

    monkeypatch.setenv("FLUXLAB_KERNELS", "python")
    mod = importlib.reload(kernels)
    try:
        assert mod.BACKEND == "python"
    finally:
        monkeypatch.delenv("FLUXLAB_KERNELS")
        importlib.reload(kernels)
