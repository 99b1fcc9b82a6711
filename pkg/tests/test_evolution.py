
import numpy as np
import pytest
from scipy.integrate import solve_ivp

from fluxlab.errors import AccuracyError, DomainError
from fluxlab.evolution import (
    TWO_PI,
    FluxPath,
    GeneratorField,
    IntegratorSettings,
    decompose_big_loop,
    diagnostics_csv,
    integrate_axis,
    loop_state,
    loop_unitary,
    path_evolve,
    rotated_loop_discrepancy,
)
from fluxlab.models import build_preset, two_level_toy
from fluxlab.quasiadiabatic import generator
from fluxlab.spectral import eig


@pytest.fixture(scope="module")
def gf():
    return GeneratorField(two_level_toy(), 2.0)


def unitarity(U):
    return np.linalg.norm(U.conj().T @ U - np.eye(U.shape[0]), 2)


def test_zero_span_identity(gf):
    assert np.array_equal(integrate_axis(gf, (0.3, 0.1), "y", 0.0).matrix, np.eye(2))
    assert np.array_equal(loop_unitary(gf, (0, 0), 0.0).matrix, np.eye(2))
    psi = np.array([1, 0], complex)
    assert np.array_equal(loop_state(gf, psi, 0.0), psi)


def test_bad_inputs(gf):
    with pytest.raises(DomainError):
        integrate_axis(gf, (0, 0), "z", 1.0)
    with pytest.raises(DomainError):
        GeneratorField(two_level_toy(), 0.0)
    with pytest.raises(DomainError):
        decompose_big_loop(gf, 0)
    with pytest.raises(DomainError):
        path_evolve(gf, (0, 0), (1, 1), "Q")


def test_against_ode_solver(gf):
    fam = two_level_toy()
    start, span = (0.4, -0.2), 1.3

    def rhs(t, y):
        U = y.reshape(2, 2)
        D = generator(fam, start[0], start[1] + t, "y", 2.0)
        return (1j * D @ U).ravel()

    sol = solve_ivp(rhs, (0, span), np.eye(2, dtype=complex).ravel(), rtol=1e-12, atol=1e-13, method="DOP853")
    ref = sol.y[:, -1].reshape(2, 2)
    out = integrate_axis(gf, start, "y", span)
    assert np.linalg.norm(out.matrix - ref, 2) < 1e-8
    assert out.error <= 1e-8
    assert unitarity(out.matrix) < 1e-12


def test_composition(gf):
    a = integrate_axis(gf, (0.1, 0.2), "x", 0.3)
    b = integrate_axis(gf, (0.4, 0.2), "x", 0.2)
    c = integrate_axis(gf, (0.1, 0.2), "x", 0.5)
    assert np.linalg.norm((b @ a).matrix - c.matrix, 2) < 1e-8


def test_reverse_is_inverse(gf):
    f = integrate_axis(gf, (0.0, 0.0), "x", 0.7)
    r = integrate_axis(gf, (0.7, 0.0), "x", -0.7)
    assert np.linalg.norm(r.matrix @ f.matrix - np.eye(2), 2) < 1e-8
    assert f.dagger().path.segments[0].start == pytest.approx((0.7, 0.0))


def test_loop_is_v_dagger_w(gf):
    r = 0.6
    V = path_evolve(gf, (0.2, 0.3), (0.8, 0.9), "V")
    W = path_evolve(gf, (0.2, 0.3), (0.8, 0.9), "W")
    L = loop_unitary(gf, (0.2, 0.3), r)
    assert np.linalg.norm(L.matrix - V.matrix.conj().T @ W.matrix, 2) < 1e-14
    assert len(L.path.segments) == 4


def test_flow_transports_ground_state(gf):
    fam = two_level_toy()
    psi0 = eig(fam.h(0.0, 0.0)).ground_state
    U = path_evolve(gf, (0, 0), (1.0, 0.7), "W").matrix
    psi1 = eig(fam.h(1.0, 0.7)).ground_state
    # alpha * gap is large so the flow follows the ground state closely
    assert abs(np.vdot(psi1, U @ psi0)) > 1 - 1e-3


def test_square_loop_path():
    p = FluxPath.square_loop((0.0, 0.0), 1.0)
    assert [s.axis for s in p.segments] == ["x", "y", "x", "y"]
    assert sum(s.span for s in p.segments) == 0


def test_decomposition_trivial_N1(gf):
    d = decompose_big_loop(gf, 1)
    assert d.residual < 1e-14
    assert len(d.unitaries) == 1


@pytest.mark.parametrize("N", [2, 3])
def test_decomposition_residual(gf, N):
    d = decompose_big_loop(gf, N)
    assert d.residual <= 1e-7
    assert len(d.unitaries) == N * N
    assert all(unitarity(u) < 1e-10 for u in d.unitaries)


def test_refinement_failure_raises(gf):
    s = IntegratorSettings(steps_per_2pi=2, tol=1e-15, max_refine=0)
    with pytest.raises(AccuracyError):
        integrate_axis(gf, (0, 0), "x", 2.0, s)


def test_fixed_step_order():
    g = GeneratorField(two_level_toy(), 2.0)
    ref = integrate_axis(g, (0, 0), "x", 2.0, IntegratorSettings(512, richardson=False)).matrix
    e1 = np.linalg.norm(integrate_axis(g, (0, 0), "x", 2.0, IntegratorSettings(16, richardson=False)).matrix - ref, 2)
    e2 = np.linalg.norm(integrate_axis(g, (0, 0), "x", 2.0, IntegratorSettings(32, richardson=False)).matrix - ref, 2)
    assert 10 < e1 / e2 < 24


def test_diagnostics_csv(gf):
    u = integrate_axis(gf, (0, 0), "x", 0.5, diagnostics=True)
    text = diagnostics_csv(u.diagnostics)
    lines = text.strip().split("\n")
    assert lines[0] == "theta_x,theta_y,gap,generator_norm,unitarity_defect"
    assert len(lines) == 1 + IntegratorSettings().steps(0.5)


def test_rotated_discrepancy_trivial_points():
    p = build_preset("random_gapped")
    assert rotated_loop_discrepancy(p.spec, p.sector, 0.0, 0.0, 0.3, 1.0)["plain"] < 1e-12
    assert rotated_loop_discrepancy(p.spec, p.sector, 0.5, 0.2, 0.0, 1.0)["plain"] == 0.0


def test_rotated_discrepancy_truncation_full_radius():
    p = build_preset("random_gapped")
    L = p.spec.lattice.L
    out = rotated_loop_discrepancy(p.spec, p.sector, 0.0, 0.0, 0.2, 1.0, M=L, settings=IntegratorSettings(64))
    assert out["truncation"] < 1e-9 and out["truncated"] < 1e-12


def test_big_loop_near_identity_on_ground_state():
    g = GeneratorField(two_level_toy(), 2.0)
    psi0 = eig(two_level_toy().h(0, 0)).ground_state
    big = loop_unitary(g, (0.0, 0.0), TWO_PI).matrix
    assert abs(abs(np.vdot(psi0, big @ psi0)) - 1) < 0.05


@pytest.mark.parametrize("name", ["random_gapped", "hofstadter_hardcore"])
def test_anti_twist_state_close_to_rotated_ground_state(name):
    from fluxlab.flux import LatticeFamily
    from fluxlab.lattice import region_all
    from fluxlab.observables import partial_trace_distance

    p = build_preset(name)
    spec, sec = p.spec, p.sector
    fam = LatticeFamily(spec, sec, "anti")
    sd = eig(fam.h(0.0, 0.0))
    prev = np.inf
    for alpha in (1.0, 2.0):
        gf = GeneratorField(fam, alpha)
        th = 0.5
        psi = integrate_axis(gf, (0.0, 0.0), "x", th).matrix @ sd.ground_state
        d = partial_trace_distance(psi, spec.rotate("x", th, sd.ground_state, sec), region_all(spec.lattice), sec)
        bound = th * spec.Q_max * spec.J / sd.gap * spec.lattice.L * np.exp(-((alpha * sd.gap) ** 2))
        assert d <= bound
        assert d < prev
        prev = d
