"""Eigen-decompositions, Heisenberg evolution and parallel transport of ground states."""

from __future__ import annotations

from collections.abc import Callable, Sequence
from dataclasses import dataclass

import numpy as np
from scipy.sparse.linalg import eigsh

from .errors import CapabilityError, DegeneracyError, DomainError

DENSE_LIMIT = 6000
HERMITIAN_TOL = 1e-10


@dataclass(frozen=True)
class SpectralData:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    full: bool = True
    ground_dim: int = 1

    @property
    def dim(self) -> int:
        return self.eigenvectors.shape[0]

    @property
    def E0(self) -> float:
        return float(self.eigenvalues[0])

    @property
    def gap(self) -> float:
        """Gap above the ground space (of dimension ``ground_dim``)."""
        g = self.ground_dim
        if len(self.eigenvalues) <= g:
            return float("inf")
        return float(self.eigenvalues[g] - self.eigenvalues[g - 1])

    @property
    def splitting(self) -> float:
        """Spread of the ground-space energies."""
        return float(self.eigenvalues[self.ground_dim - 1] - self.eigenvalues[0])

    @property
    def ground_state(self) -> np.ndarray:
        return self.eigenvectors[:, 0]

    @property
    def ground_space(self) -> np.ndarray:
        return self.eigenvectors[:, : self.ground_dim]

    @property
    def P0(self) -> np.ndarray:
        g = self.ground_space
        return g @ g.conj().T

    def require_full(self):
        if not self.full:
            raise CapabilityError("operation needs the full spectrum")

    def with_ground_dim(self, q: int) -> SpectralData:
        return SpectralData(self.eigenvalues, self.eigenvectors, self.full, q)


def check_hermitian(H: np.ndarray, tol: float = HERMITIAN_TOL) -> float:
    H = np.asarray(H)
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise DomainError("matrix must be square")
    if H.size == 0:
        return 0.0
    dev = float(np.abs(H - H.conj().T).max())
    if dev > tol * max(1.0, float(np.abs(H).max())):
        raise DomainError(f"matrix is not Hermitian (max deviation {dev:.3g})")
    return dev


def eig(H: np.ndarray, k: int | None = None, dense_limit: int = DENSE_LIMIT, ground_dim: int = 1) -> SpectralData:
    """Full decomposition up to ``dense_limit``; lowest ``k`` pairs above it."""
    check_hermitian(H)
    n = H.shape[0]
    if n <= dense_limit:
        Hh = 0.5 * (H + H.conj().T)
        w, v = np.linalg.eigh(Hh)
        return SpectralData(w, v, True, ground_dim)
    k = k or max(ground_dim + 1, 6)
    w, v = eigsh(H, k=k, which="SA")
    order = np.argsort(w)
    return SpectralData(w[order], v[:, order], False, ground_dim)


def heisenberg(sd: SpectralData, A: np.ndarray, u: float) -> np.ndarray:
    """tau_u(A) = e^{iuH} A e^{-iuH}."""
    sd.require_full()
    V = sd.eigenvectors
    ph = np.exp(1j * u * sd.eigenvalues)
    Ae = V.conj().T @ A @ V
    return V @ (ph[:, None] * Ae * ph.conj()[None, :]) @ V.conj().T


def reduced_resolvent(sd: SpectralData) -> np.ndarray:
    """(1 - P0) / (H - E0) on the complement of the ground space."""
    sd.require_full()
    g = sd.ground_dim
    V = sd.eigenvectors[:, g:]
    inv = 1.0 / (sd.eigenvalues[g:] - sd.E0)
    return (V * inv) @ V.conj().T


def ground_derivative(sd: SpectralData, dH: np.ndarray) -> np.ndarray:
    """Parallel-transport derivative -(1-P0)/(H-E0) dH |Psi0>."""
    sd.require_full()
    g = sd.ground_dim
    V = sd.eigenvectors
    psi = V[:, 0]
    c = V[:, g:].conj().T @ (dH @ psi)
    return -V[:, g:] @ (c / (sd.eigenvalues[g:] - sd.E0))


def fix_phase(psi: np.ndarray) -> np.ndarray:
    """Make the largest-magnitude component real and positive."""
    k = int(np.argmax(np.abs(psi)))
    return psi * (abs(psi[k]) / psi[k])


def align_phase(psi: np.ndarray, ref: np.ndarray) -> np.ndarray:
    ov = np.vdot(psi, ref)
    if abs(ov) == 0:
        return psi
    return psi * (ov / abs(ov))


def parallel_transport_oracle(
    H: Callable[[float], np.ndarray],
    dH: Callable[[float], np.ndarray],
    theta_grid: Sequence[float],
    gap_floor: float = 1e-6,
    substeps: int = 16,
    psi0: np.ndarray | None = None,
):
    """Ground-state curve obeying <Psi|dPsi> = 0 along ``theta_grid``.

    Integrates dPsi/dtheta = -(1-P0)/(H-E0) dH Psi with classical RK4 and
    ``substeps`` steps between grid points, re-projecting on the exact ground
    state after each step to remove norm drift. Returns (states, gaps).
    """
    grid = np.asarray(theta_grid, dtype=float)

    def rhs(t, psi):
        sd = eig(H(t))
        if sd.gap < gap_floor:
            raise DegeneracyError(f"gap {sd.gap:.3g} below floor at theta={t}", theta=t)
        return ground_derivative_of(sd, dH(t), psi)

    sd = eig(H(grid[0]))
    if sd.gap < gap_floor:
        raise DegeneracyError(f"gap {sd.gap:.3g} below floor at theta={grid[0]}", theta=grid[0])
    psi = fix_phase(sd.ground_state) if psi0 is None else align_to_ground(sd, psi0)
    states = [psi.copy()]
    gaps = [sd.gap]
    for a, b in zip(grid[:-1], grid[1:]):
        h = (b - a) / substeps
        t = a
        for _ in range(substeps):
            k1 = rhs(t, psi)
            k2 = rhs(t + h / 2, psi + h / 2 * k1)
            k3 = rhs(t + h / 2, psi + h / 2 * k2)
            k4 = rhs(t + h, psi + h * k3)
            psi = psi + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
            t = a + (b - a) * (_ + 1) / substeps
            sd_t = eig(H(t))
            psi = align_to_ground(sd_t, psi)
        sd_b = eig(H(b))
        if sd_b.gap < gap_floor:
            raise DegeneracyError(f"gap {sd_b.gap:.3g} below floor at theta={b}", theta=b)
        states.append(psi.copy())
        gaps.append(sd_b.gap)
    return np.array(states), np.array(gaps)


def ground_derivative_of(sd: SpectralData, dH: np.ndarray, psi: np.ndarray) -> np.ndarray:
    """-(1-P0)/(H-E0) dH psi for an arbitrary vector psi."""
    g = sd.ground_dim
    V = sd.eigenvectors[:, g:]
    c = V.conj().T @ (dH @ psi)
    return -V @ (c / (sd.eigenvalues[g:] - sd.E0))


def align_to_ground(sd: SpectralData, psi: np.ndarray) -> np.ndarray:
    """Project on the ground state keeping the phase of ``psi``."""
    g = sd.ground_state
    ov = np.vdot(g, psi)
    if abs(ov) < 1e-12:
        raise DegeneracyError("state lost overlap with the ground state")
    return g * (ov / abs(ov))
