import numpy as np
import pytest

from fluxlab.errors import DomainError
from fluxlab.hamiltonian import (
    InteractionTerm,
    TwistedHamiltonianSpec,
    apply_twists,
    charge_average,
    charge_symmetrize,
)
from fluxlab.lattice import (
    TorusLattice,
    region_all,
    region_omega_x,
    region_omega_y,
    region_omega_y_c,
)
from fluxlab.models import build_preset, hop_matrix
from fluxlab.spectral import eig


@pytest.fixture(scope="module")
def rg():
    p = build_preset("random_gapped")
    return p.spec, p.sector


def test_conserving_term_unchanged():
    t = InteractionTerm((0, 1), hop_matrix(0.7 - 0.2j, U=0.3), "hop")
    assert np.array_equal(charge_symmetrize(t, 2).local_matrix, t.local_matrix)


def test_raising_term_removed():
    m = np.zeros((2, 2), complex)
    m[1, 0] = m[0, 1] = 1.0
    assert np.abs(charge_symmetrize(InteractionTerm((0,), m), 2).local_matrix).max() == 0


def test_pairing_removed_hopping_kept():
    rng = np.random.default_rng(4)
    m = hop_matrix(0.4 + 0.1j).copy()
    pair = rng.normal() + 1j * rng.normal()
    m[3, 0] += pair
    m[0, 3] += np.conj(pair)
    t = InteractionTerm((0, 1), m)
    s = charge_symmetrize(t, 2).local_matrix
    # oracle: numeric angle average over the local charge
    assert np.abs(s - charge_average(t, 2)).max() < 1e-12
    assert np.abs(s - hop_matrix(0.4 + 0.1j)).max() < 1e-15
    assert np.linalg.norm(s, 2) <= np.linalg.norm(m, 2) + 1e-12


def test_J_is_validated():
    lat = TorusLattice(3)
    terms = [InteractionTerm((0, 1), hop_matrix(1.0))]
    with pytest.raises(DomainError):
        TwistedHamiltonianSpec(lat, terms, J=0.5)
    assert TwistedHamiltonianSpec(lat, terms).J == pytest.approx(1.0)


def test_range_and_hermiticity_checked():
    lat = TorusLattice(5)
    with pytest.raises(DomainError):
        TwistedHamiltonianSpec(lat, [InteractionTerm((lat.index((0, 0)), lat.index((2, 0))), hop_matrix(1.0))])
    with pytest.raises(DomainError):
        InteractionTerm((0,), np.array([[0, 1], [0, 0]], complex))


def test_zero_terms_zero_matrix():
    lat = TorusLattice(3)
    spec = TwistedHamiltonianSpec(lat, [])
    H = spec.assemble((0.3, 0.1, 0.2, 0.0), spec.sector(1))
    assert H.shape == (9, 9) and not H.any()


def test_apply_twists_trivial_cases(rg):
    spec, _ = rg
    for t in spec.terms[:20]:
        assert np.allclose(apply_twists(t, (0, 0, 0, 0), spec).local_matrix, t.local_matrix, atol=0)
        assert np.abs(apply_twists(t, (2 * np.pi, 0, 2 * np.pi, 0), spec).local_matrix - t.local_matrix).max() < 1e-14


def test_single_boundary_hop_matches_dense_conjugation():
    lat = TorusLattice(6)
    a, b = lat.index((1, 0)), lat.index((0, 0))
    spec = TwistedHamiltonianSpec(lat, [InteractionTerm((a, b), hop_matrix(0.8 + 0.3j))])
    sec = spec.sector(1)
    th = np.pi / 2
    H0 = spec.assemble((0, 0, 0, 0), sec)
    Ht = spec.assemble((th, 0, 0, 0), sec)
    q = spec.charge_diagonal("x", sec)
    ph = np.exp(1j * th * q)
    assert np.abs(Ht - ph[:, None] * H0 * ph.conj()[None, :]).max() < 1e-14
    # the local-term version agrees with the embedded matrix
    tw = apply_twists(spec.terms[0], (th, 0, 0, 0), spec)
    assert np.abs(TwistedHamiltonianSpec(lat, [tw]).assemble((0, 0, 0, 0), sec) - Ht).max() < 1e-14


def test_periodicity_and_hermiticity(rg):
    spec, sec = rg
    H0 = spec.assemble((0, 0, 0, 0), sec)
    assert np.array_equal(H0, spec.assemble((2 * np.pi, 0, 2 * np.pi, 0), sec)) or np.abs(
        H0 - spec.assemble((2 * np.pi, 0, 2 * np.pi, 0), sec)
    ).max() < 1e-13
    H = spec.assemble((0.3, -1.1, 2.0, 0.4), sec)
    assert np.abs(H - H.conj().T).max() < 1e-12


def test_twist_anti_twist_isospectral(rg):
    spec, sec = rg
    e0 = eig(spec.assemble((0, 0, 0, 0), sec)).eigenvalues
    for th, tp in [(0.4, 1.3), (2.0, -0.7)]:
        e = eig(spec.assemble((th, -th, tp, -tp), sec)).eigenvalues
        assert np.abs(e - e0).max() < 1e-10


def test_rotation_shifts_angles(rg):
    spec, sec = rg
    a = np.array([0.3, 0.5, -0.2, 0.9])
    th = 0.7
    H = spec.assemble(a, sec)
    lhs = spec.rotate("x", -th, H, sec)
    rhs = spec.assemble((a[0] - th, a[1] + th, a[2], a[3]), sec)
    assert np.abs(lhs - rhs).max() < 1e-10
    lhs = spec.rotate("y", -th, H, sec)
    rhs = spec.assemble((a[0], a[1], a[2] - th, a[3] + th), sec)
    assert np.abs(lhs - rhs).max() < 1e-10


@pytest.mark.parametrize("direction", ["theta_x", "phi_x", "theta_y", "phi_y"])
def test_derivative_matches_finite_difference(rg, direction):
    spec, sec = rg
    rng = np.random.default_rng(hash(direction) % 2**32)
    k = ["theta_x", "phi_x", "theta_y", "phi_y"].index(direction)
    h = 1e-5
    for _ in range(5):
        a = rng.uniform(-np.pi, np.pi, 4)
        e = np.zeros(4)
        e[k] = h
        fd = (spec.assemble(a + e, sec) - spec.assemble(a - e, sec)) / (2 * h)
        d = spec.twist_derivative(a, sec, direction)
        assert np.abs(d - fd).max() <= 1e-7 * max(1.0, np.abs(d).max())
        fd2 = (spec.assemble(a + e, sec) - 2 * spec.assemble(a, sec) + spec.assemble(a - e, sec)) / h**2
        assert np.abs(spec.twist_derivative(a, sec, direction, 2) - fd2).max() < 1e-3


def test_derivative_norm_bound():
    rng = np.random.default_rng(7)
    for name in ("random_gapped", "hofstadter_hardcore", "chain"):
        p = build_preset(name)
        spec, sec = p.spec, p.sector
        bound = spec.Q_max * spec.J * spec.lattice.L
        for _ in range(3):
            a = rng.uniform(-np.pi, np.pi, 4)
            for direction in ("theta_x", "phi_x", "theta_y", "phi_y"):
                d = spec.twist_derivative(a, sec, direction)
                assert np.linalg.norm(d, 2) <= bound + 1e-12


def test_untouched_terms_do_not_move():
    lat = TorusLattice(6)
    a, b = lat.index((-1, 0)), lat.index((-2, 0))
    spec = TwistedHamiltonianSpec(lat, [InteractionTerm((a, b), hop_matrix(1.0))])
    sec = spec.sector(1)
    assert not spec.twist_derivative((0, 0, 0, 0), sec, "theta_x").any()


def test_ball_restriction():
    p = build_preset("chain")
    spec, sec = p.spec, p.sector
    lat = spec.lattice
    Z = [0]
    full = spec.assemble((0, 0, 0, 0), sec)
    assert np.array_equal(spec.restrict_ball(Z, lat.L, (0, 0, 0, 0), sec), full)
    with pytest.raises(DomainError):
        spec.ball_terms(Z, 0)
    counts = [int(spec.ball_terms(Z, M).sum()) for M in range(1, lat.L + 1)]
    assert counts == sorted(counts)
    # brute force: terms X with d(X, Z) < M - R
    for M in (1, 2, 3):
        brute = sum(1 for t in spec.terms if min(lat.set_distance([s], Z) for s in t.support) < M - lat.R)
        assert counts[M - 1] == brute


def test_region_split():
    p = build_preset("chain", L=8)
    spec, sec = p.spec, p.sector
    lat = spec.lattice
    full = spec.assemble((0, 0, 0, 0), sec)
    assert np.array_equal(spec.restrict_region(region_all(lat), (0, 0, 0, 0), sec), full)
    ox = region_omega_x(lat)
    th = 0.9
    lhs = spec.restrict_region(ox, (th, 0, 0, 0), sec, "in") + spec.restrict_region(ox, (0, 0, 0, 0), sec, "out")
    assert np.abs(lhs - spec.assemble((th, 0, 0, 0), sec)).max() < 1e-14
    oy, oyc = region_omega_y(lat), region_omega_y_c(lat)
    out = spec.region_terms(oy, "out")
    assert all(oyc.contains_all(t.support) for t, o in zip(spec.terms, out) if o)


def test_json_round_trip(rg):
    spec, sec = rg
    back = TwistedHamiltonianSpec.from_json(spec.to_json())
    a = (0.2, 0.1, -0.4, 0.3)
    assert np.array_equal(back.assemble(a, sec), spec.assemble(a, sec))
    with pytest.raises(DomainError):
        TwistedHamiltonianSpec.from_json('{"lattice": {}}')


def test_collision_rule():
    p = build_preset("degenerate_pair", L=8)
    spec, sec = p.spec, p.sector
    assert spec.collisions["x"]
    spec.assemble((0, 0, 0, 0), sec)
    with pytest.raises(DomainError):
        spec.assemble((0.1, 0, 0, 0), sec)
