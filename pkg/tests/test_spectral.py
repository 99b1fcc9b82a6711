import dataclasses

import numpy as np
import pytest

from fluxlab.errors import CapabilityError, DegeneracyError, DomainError
from fluxlab.spectral import (
    SpectralData,
    check_hermitian,
    eig,
    ground_derivative,
    heisenberg,
    parallel_transport_oracle,
    reduced_resolvent,
)

SX = np.array([[0, 1], [1, 0]], complex)
SY = np.array([[0, -1j], [1j, 0]])
SZ = np.diag([1.0, -1.0]).astype(complex)


def rand_herm(n, seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    return (X + X.conj().T) / 2


def test_diagonal():
    sd = eig(np.diag([3.0, 1.0, 2.0]))
    assert np.allclose(sd.eigenvalues, [1, 2, 3])
    assert sd.E0 == 1.0 and sd.gap == 1.0
    assert np.allclose(np.abs(sd.ground_state), [0, 1, 0])


def test_pauli_x():
    sd = eig(SX)
    assert np.allclose(sd.eigenvalues, [-1, 1])
    assert sd.gap == pytest.approx(2.0)
    assert abs(abs(np.vdot(sd.ground_state, np.array([1, -1]) / np.sqrt(2))) - 1) < 1e-14


def test_reconstruction():
    H = rand_herm(12, 1)
    sd = eig(H)
    V, w = sd.eigenvectors, sd.eigenvalues
    assert np.abs(V @ np.diag(w) @ V.conj().T - H).max() < 1e-10
    assert np.all(np.diff(w) >= 0)


def test_non_hermitian_rejected():
    with pytest.raises(DomainError):
        eig(np.array([[0, 1], [0, 0]], complex))
    with pytest.raises(DomainError):
        check_hermitian(np.zeros((2, 3)))


def test_sparse_path_and_capability():
    H = rand_herm(40, 2)
    sd = eig(H, k=4, dense_limit=10)
    assert not sd.full
    assert np.allclose(sd.eigenvalues, np.linalg.eigvalsh(H)[:4], atol=1e-10)
    with pytest.raises(CapabilityError):
        heisenberg(sd, H, 0.1)


def test_degenerate_ground_space():
    sd = eig(np.diag([0.0, 0.0, 1.0]), ground_dim=2)
    assert sd.splitting == 0 and sd.gap == 1.0
    assert np.allclose(sd.P0, np.diag([1, 1, 0]))
    assert sd.with_ground_dim(1).gap == 0.0


def test_heisenberg_against_expm():
    from scipy.linalg import expm

    H, A = rand_herm(6, 3), rand_herm(6, 4)
    sd = eig(H)
    for u in (0.0, 0.37, -2.1):
        ref = expm(1j * u * H) @ A @ expm(-1j * u * H)
        out = heisenberg(sd, A, u)
        assert np.abs(out - ref).max() < 1e-10
        assert abs(np.linalg.norm(out, 2) - np.linalg.norm(A, 2)) < 1e-10


def test_resolvent_and_derivative():
    H, dH = rand_herm(8, 5), rand_herm(8, 6)
    sd = eig(H)
    Rr = reduced_resolvent(sd)
    Q = np.eye(8) - sd.P0
    assert np.abs(Rr @ (H - sd.E0 * np.eye(8)) - Q).max() < 1e-10
    d = ground_derivative(sd, dH)
    h = 1e-6
    p = eig(H + h * dH).ground_state
    m = eig(H - h * dH).ground_state
    p = p * np.vdot(p, sd.ground_state) / abs(np.vdot(p, sd.ground_state))
    m = m * np.vdot(m, sd.ground_state) / abs(np.vdot(m, sd.ground_state))
    assert np.abs((p - m) / (2 * h) - d).max() < 1e-5
    assert abs(np.vdot(sd.ground_state, d)) < 1e-14


def test_transport_constant_path():
    H = rand_herm(5, 7)
    grid = np.linspace(0, 1, 6)
    states, gaps = parallel_transport_oracle(lambda t: H, lambda t: np.zeros_like(H), grid)
    assert np.abs(states - states[0]).max() < 1e-14
    assert np.allclose(gaps, gaps[0])


def test_transport_real_loop_sign_flip():
    H = lambda t: np.cos(t) * SZ + np.sin(t) * SX
    dH = lambda t: -np.sin(t) * SZ + np.cos(t) * SX
    grid = np.linspace(0, 2 * np.pi, 17)
    states, gaps = parallel_transport_oracle(H, dH, grid)
    exact = np.array([[np.sin(t / 2), -np.cos(t / 2)] for t in grid])
    sign = np.vdot(exact[0], states[0])
    assert np.abs(states - sign * exact).max() < 1e-9
    assert np.vdot(states[0], states[-1]).real == pytest.approx(-1.0, abs=1e-9)
    assert np.allclose(gaps, 2.0)


@pytest.mark.parametrize("beta", [0.4, 1.0, 2.2])
def test_transport_cone_berry_phase(beta):
    def H(p):
        return np.sin(beta) * (np.cos(p) * SX + np.sin(p) * SY) + np.cos(beta) * SZ

    def dH(p):
        return np.sin(beta) * (-np.sin(p) * SX + np.cos(p) * SY)

    grid = np.linspace(0, 2 * np.pi, 33)
    states, _ = parallel_transport_oracle(H, dH, grid)
    ov = np.vdot(states[0], states[-1])
    assert abs(ov - np.exp(-1j * np.pi * (1 + np.cos(beta)))) < 1e-8
    for s, p in zip(states, grid):
        assert abs(abs(np.vdot(eig(H(p)).ground_state, s)) - 1) < 1e-12


def test_transport_gap_floor():
    H = lambda t: t * SZ
    with pytest.raises(DegeneracyError) as e:
        parallel_transport_oracle(H, lambda t: SZ, np.linspace(1, -1, 5))
    assert e.value.theta == pytest.approx(0.0)


def test_spectral_data_is_frozen():
    sd = SpectralData(np.array([0.0, 1.0]), np.eye(2))
    with pytest.raises(dataclasses.FrozenInstanceError):
        sd.ground_dim = 2
