import math

import numpy as np
import pytest

from fluxlab.errors import DomainError
from fluxlab.flux import LatticeFamily
from fluxlab.lattice import TorusLattice
from fluxlab.models import build_preset, two_level_toy
from fluxlab.quasiadiabatic import (
    C0_bound,
    C0_exact,
    FilterParams,
    alpha_of_L,
    envelopes,
    epsilon_fn,
    filter_weight,
    filter_weight_quadrature,
    g_alpha,
    generator,
    lieb_robinson_velocity,
    naive_bound,
    r_choice,
    s_op,
    s_op_quadrature,
    s_op_shell,
    s_op_truncated,
    shell_envelope,
    shell_norms,
    xi,
)
from fluxlab.spectral import eig

SX = np.array([[0, 1], [1, 0]], complex)


def rand_herm(n, rng):
    X = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    return (X + X.conj().T) / 2


def test_filter_weight_at_zero_and_bound():
    assert filter_weight(0.0, 1.3) == 0
    om = np.linspace(-20, 20, 4001)
    for a in (0.2, 1.0, 3.0):
        w = np.abs(filter_weight(om, a))
        assert w.max() <= 2 * a / math.sqrt(2 * math.pi) + 1e-15


def test_filter_weight_series_branch_continuous():
    a = 1.7
    om = np.array([1e-9, 1e-7, 1e-5, 1e-3])
    exact = -np.expm1(-((a * om) ** 2) / 2) / om
    assert np.allclose(np.imag(filter_weight(om, a)), exact, rtol=1e-9, atol=1e-16)


@pytest.mark.parametrize("omega,alpha", [(0.3, 1.0), (2.0, 0.5), (-1.1, 2.0), (5.0, 0.3)])
def test_filter_weight_matches_double_integral(omega, alpha):
    assert abs(filter_weight(omega, alpha) - filter_weight_quadrature(omega, alpha)) < 1e-9


def test_filter_params():
    with pytest.raises(DomainError):
        FilterParams(0.0)
    assert FilterParams(2.0, v=3.0).sigma == 12.0
    with pytest.raises(DomainError):
        FilterParams(1.0).sigma


@pytest.mark.parametrize("alpha,delta", [(1.0, 0.5), (2.0, 1.0), (0.7, 3.0)])
def test_two_level_closed_form(alpha, delta):
    S = s_op(eig(np.diag([0.0, delta]).astype(complex)), SX, alpha)
    want = (1 - math.exp(-(alpha * delta) ** 2 / 2)) / delta
    assert abs(abs(S[0, 1]) - want) < 1e-14
    assert abs(S[0, 0]) == 0 and abs(S[1, 1]) == 0


def test_spectral_vs_quadrature_small():
    rng = np.random.default_rng(11)
    for n in (3, 6):
        H = rand_herm(n, rng)
        H *= 2 / np.linalg.norm(H, 2)
        A = rand_herm(n, rng)
        assert np.abs(s_op(eig(H), A, 1.0) - s_op_quadrature(H, A, 1.0)).max() < 1e-8


def test_commuting_gives_zero_and_bound():
    rng = np.random.default_rng(2)
    H = rand_herm(6, rng)
    sd = eig(H)
    A = sd.eigenvectors @ np.diag(rng.normal(size=6)) @ sd.eigenvectors.conj().T
    assert np.abs(s_op(sd, A, 1.5)).max() < 1e-12
    B = rand_herm(6, rng)
    S = s_op(sd, B, 1.5)
    assert np.abs(S - S.conj().T).max() == 0
    assert np.linalg.norm(S, 2) <= naive_bound(1.5, np.linalg.norm(B, 2))


@pytest.fixture(scope="module")
def rg_family():
    p = build_preset("random_gapped")
    return LatticeFamily(p.spec, p.sector)


def test_truncation_at_full_size(rg_family):
    fam = rg_family
    lat = fam.spec.lattice
    k = fam.moving_terms("x")[0]
    A = fam.term_dh(0.3, 0.2, "x", k)
    Z = fam.spec.terms[k].support
    full = s_op(eig(fam.h(0.3, 0.2)), A, 1.0)
    assert np.abs(s_op_truncated(fam, A, Z, 0.3, 0.2, 1.0, lat.L) - full).max() < 1e-12
    with pytest.raises(DomainError):
        s_op_shell(fam, A, Z, 0.3, 0.2, 1.0, lat.R - 1)


def test_generator_truncated_vs_full(rg_family):
    fam = rg_family
    D = generator(fam, 0.1, 0.4, "x", 1.0)
    DM = generator(fam, 0.1, 0.4, "x", 1.0, M=fam.spec.lattice.L)
    assert np.abs(D - DM).max() < 1e-11
    psi = eig(fam.h(0.1, 0.4)).ground_state
    assert abs(np.vdot(psi, D @ psi)) < 1e-13


def test_generator_expectation_on_toy():
    fam = two_level_toy()
    for tx, ty in [(0.0, 0.0), (1.0, 2.0)]:
        sd = eig(fam.h(tx, ty))
        D = generator(fam, tx, ty, "y", 2.0, sd=sd)
        assert abs(np.vdot(sd.ground_state, D @ sd.ground_state)) < 1e-15


def test_shells_telescope_on_chain():
    p = build_preset("chain")
    fam = LatticeFamily(p.spec, p.sector)
    k = fam.moving_terms("x")[0]
    A = fam.term_dh(0.0, 0.0, "x", k)
    Z = fam.spec.terms[k].support
    norms, resid, trunc = shell_norms(fam, A, Z, 0.0, 0.0, 1.0, fam.spec.lattice.L)
    assert resid < 1e-9
    assert norms[0] < 1e-14
    assert np.abs(trunc[-1] - s_op(eig(fam.h(0.0, 0.0)), A, 1.0)).max() < 1e-12


def test_constants():
    assert lieb_robinson_velocity(1, 1.0) == pytest.approx(1056 * math.e)
    assert C0_bound(1.0) == 66
    assert xi(2, 1.0) == pytest.approx(1 / (2 * math.pi))
    assert epsilon_fn(0.0, 3.0) == 0.0
    assert math.isnan(g_alpha(0.5, 3.0, 1))
    assert C0_exact(TorusLattice(6), 1.0) <= C0_bound(1.0)


def test_envelope_decreasing():
    N = np.arange(0, 200)
    env = shell_envelope(N, 1.0, 20.0, 1, 1.0)
    assert np.all(np.diff(env) <= 0) and env[-1] < 1e-30
    assert env[0] == pytest.approx(4 / math.sqrt(2 * math.pi))


def test_envelopes_report_serializes():
    for L in (1e3, 1e6, 1e9):
        rep = envelopes(2, 1.0, 1, 1.0, L=L)
        d = rep.to_dict()
        assert d["G"] > 0 and isinstance(d["Lrequire_ok"], bool)
        assert d["alpha"] == pytest.approx(alpha_of_L(L, 2, 1.0, 1.0))
    with pytest.raises(DomainError):
        envelopes(0, 1.0, 1, 1.0, alpha=1.0)
    with pytest.raises(DomainError):
        envelopes(1, 1.0, 1, 1.0)


def test_r_choice():
    assert r_choice(1.0, 1.0, 1.0, 10.0, 1.0) > 0
    assert r_choice(1e-6, 1e-3, 1.0, 1.0, 0.0) == float("inf")
