"""The quasi-adiabatic super-operator S_alpha, its localizations and the envelope constants.

S_alpha(H, A) = int s(t) int_0^t e^{iuH} A e^{-iuH} du dt with the Gaussian
weight s(t) = exp(-t^2 / 2 alpha^2) / (alpha sqrt(2 pi)). In the eigenbasis of
H it multiplies A_mn by

    w(omega) = i (1 - exp(-alpha^2 omega^2 / 2)) / omega,  omega = E_m - E_n,

which follows from the Gaussian characteristic function and is certified
against direct quadrature of the double integral.
"""

from __future__ import annotations

import math
from collections.abc import Iterable
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import integrate

from . import kernels
from .errors import AccuracyError, DomainError
from .spectral import SpectralData, eig

SQRT2PI = math.sqrt(2 * math.pi)


@dataclass(frozen=True)
class FilterParams:
    alpha: float
    v: float | None = None
    trunc_M: int | None = None

    def __post_init__(self):
        if not self.alpha > 0:
            raise DomainError("alpha must be positive")

    @property
    def sigma(self) -> float:
        if self.v is None:
            raise DomainError("sigma needs a velocity v")
        return 2 * self.alpha * self.v


def weight_density(t, alpha: float):
    return np.exp(-np.square(t) / (2 * alpha**2)) / (alpha * SQRT2PI)


def filter_weight(omega, alpha: float):
    """w(omega) in closed form, with a series branch near omega = 0."""
    om = np.asarray(omega, dtype=float)
    x = alpha * om
    small = np.abs(x) < kernels.SERIES_SWITCH
    safe = np.where(small, 1.0, om)
    out = 1j * np.where(small, alpha * x * (0.5 - x * x / 8.0), -np.expm1(-0.5 * x * x) / safe)
    return out if out.ndim else complex(out)


def filter_weight_quadrature(omega: float, alpha: float, tol: float = 1e-11) -> complex:
    """Nested adaptive quadrature of the defining double integral (oracle)."""

    def inner(t, part):
        f = np.cos if part == 0 else np.sin
        val, _ = integrate.quad(lambda u: f(u * omega), 0.0, t, epsabs=tol, epsrel=tol, limit=200)
        return val

    T = 12 * alpha
    res = []
    for part in (0, 1):
        val, _ = integrate.quad(lambda t: weight_density(t, alpha) * inner(t, part), -T, T, epsabs=tol, epsrel=tol, limit=200)
        res.append(val)
    return complex(res[0], res[1])


def naive_bound(alpha: float, norm_A: float) -> float:
    """||S_alpha(H, A)|| <= 2 alpha / sqrt(2 pi) ||A||."""
    return 2 * alpha / SQRT2PI * norm_A


def s_op(sd: SpectralData, A: np.ndarray, alpha: float) -> np.ndarray:
    """S_alpha(H, A) from the spectral data of H."""
    sd.require_full()
    V = sd.eigenvectors
    W = kernels.filter_weight_matrix(sd.eigenvalues, alpha)
    Ae = V.conj().T @ A @ V
    S = V @ (Ae * W) @ V.conj().T
    return 0.5 * (S + S.conj().T)


def _gl_panels(t: float, panel: float, n: int):
    """Gauss-Legendre nodes and weights on [0, t] split into equal panels."""
    if t == 0:
        return np.zeros(0), np.zeros(0)
    m = max(1, int(math.ceil(abs(t) / panel)))
    x, w = np.polynomial.legendre.leggauss(n)
    edges = np.linspace(0.0, t, m + 1)
    a, b = edges[:-1, None], edges[1:, None]
    nodes = (0.5 * (b - a) * x + 0.5 * (a + b)).ravel()
    weights = (0.5 * (b - a) * w).ravel()
    return nodes, weights


def s_op_quadrature(
    H: np.ndarray,
    A: np.ndarray,
    alpha: float,
    n_outer: int = 80,
    n_inner: int = 12,
    tol: float = 1e-9,
) -> np.ndarray:
    """S_alpha(H, A) by Gauss-Hermite in t and panel Gauss-Legendre in u.

    The inner integrand tau_u(A) is the Heisenberg evolution, evaluated in the
    eigenbasis of H for all nodes at once. The rule is repeated with a refined
    outer grid; disagreement above ``tol`` raises.
    """
    sd = eig(H)
    V = sd.eigenvectors
    Ae = V.conj().T @ A @ V
    Om = sd.eigenvalues[:, None] - sd.eigenvalues[None, :]
    spread = float(sd.eigenvalues[-1] - sd.eigenvalues[0])
    panel = min(alpha, 2.0 / spread) if spread > 0 else alpha

    def run(n_out: int) -> np.ndarray:
        x, w = np.polynomial.hermite.hermgauss(n_out)
        ts = math.sqrt(2) * alpha * x
        out = np.zeros_like(Ae, dtype=complex)
        for t, wt in zip(ts, w):
            if t <= 0:
                continue
            u, wu = _gl_panels(t, panel, n_inner)
            # the weight is even, so t and -t are paired:
            # F(t) + F(-t) = int_0^t (tau_u(A) - tau_{-u}(A)) du
            kern = (wu[:, None, None] * 2j * np.sin(u[:, None, None] * Om[None])).sum(axis=0)
            out += wt / math.sqrt(math.pi) * kern
        return V @ (out * Ae) @ V.conj().T

    a = run(n_outer)
    b = run(2 * n_outer)
    if np.abs(a - b).max(initial=0.0) > tol * max(1.0, np.abs(b).max(initial=0.0)):
        raise AccuracyError(f"quadrature refinements differ by {np.abs(a - b).max():.3g}")
    return b


# ----------------------------------------------------------------- localization
def s_op_truncated(family, A_Z: np.ndarray, Z: Iterable[int], tx: float, ty: float, alpha: float, M: int) -> np.ndarray:
    """S_alpha(H_M(Z), A_Z) with H_M(Z) the ball-restricted Hamiltonian."""
    HM = family.ball_h(tx, ty, list(Z), M)
    return s_op(eig(HM), A_Z, alpha)


def s_op_shell(family, A_Z: np.ndarray, Z: Iterable[int], tx: float, ty: float, alpha: float, k: int) -> np.ndarray:
    """k-th shell: S(H_k) - S(H_{k-1}) for k > R, and S(H_R) (= 0) for k = R."""
    Z = list(Z)
    R = family.spec.lattice.R
    if k < R:
        raise DomainError(f"shell index {k} below R={R}")
    cur = s_op_truncated(family, A_Z, Z, tx, ty, alpha, k)
    if k == R:
        return cur
    return cur - s_op_truncated(family, A_Z, Z, tx, ty, alpha, k - 1)


def shell_norms(family, A_Z: np.ndarray, Z: Iterable[int], tx: float, ty: float, alpha: float, k_max: int):
    """Norms of all shells R..k_max plus the max telescoping residual."""
    Z = list(Z)
    R = family.spec.lattice.R
    trunc = [s_op_truncated(family, A_Z, Z, tx, ty, alpha, k) for k in range(R, k_max + 1)]
    shells = [trunc[0]] + [trunc[i] - trunc[i - 1] for i in range(1, len(trunc))]
    norms = np.array([np.linalg.norm(s, 2) for s in shells])
    acc = np.zeros_like(A_Z, dtype=complex)
    resid = 0.0
    for s, t in zip(shells, trunc):
        acc = acc + s
        resid = max(resid, float(np.abs(acc - t).max()))
    return norms, resid, trunc


# -------------------------------------------------------------------- envelopes
def lieb_robinson_velocity(R: int, J: float) -> float:
    return 132 * math.e * (1 + R) ** 3 * J


def C_RJ(R: int, J: float) -> float:
    return 2 * R**2 * J


def C0_bound(eps: float) -> float:
    return 34 + 32 / eps


def C0_exact(lat, eps: float) -> float:
    """sup_{s1,s2} sum_z ((1+d12) / ((1+d1z)(1+dz2)))^{2+eps} on the finite torus."""
    c = lat.coords
    dx = lat.axis_distance(c[:, None, 0], c[None, :, 0])
    dy = lat.axis_distance(c[:, None, 1], c[None, :, 1])
    D = (dx + dy).astype(float)
    # translation invariance: fix s1 at site 0
    d1 = D[0]
    best = 0.0
    for s2 in range(lat.n_sites):
        val = np.sum(((1 + D[0, s2]) / ((1 + d1) * (1 + D[:, s2]))) ** (2 + eps))
        best = max(best, float(val))
    return best


def epsilon_fn(x, sigma: float):
    return 1 - 2 / (1 + np.sqrt(1 + 8 * np.asarray(x, float) / sigma**2))


def xi(R: int, Q_max: float) -> float:
    return (R / 2) ** 2 / (2 * math.pi * Q_max)


def alpha_of_L(L: float, R: int, J: float, Q_max: float) -> float:
    v = lieb_robinson_velocity(R, J)
    return (1 / (4 * v * R)) * (L * xi(R, Q_max) / (48 * math.log(L) ** 3)) ** 0.2


def d0(sigma: float, R: int) -> float:
    return math.sqrt(2 * math.log(8 * sigma**2 * R)) * 2 * sigma * R


def v_eff(Q_max: float, R: int, d_0: float) -> float:
    return 4 * Q_max * R**-2 * d_0**4 * math.sqrt(math.log(d_0))


def g_alpha(x, sigma: float, R: int):
    """Tail function of the localization estimate; NaN where it is undefined (x < 1)."""
    x = np.asarray(x, dtype=float)
    a = 8 * R * SQRT2PI * sigma * np.exp(-x * x / (2 * sigma**2))
    b = 32 * R / sigma**2 * x * np.exp(-x / 2)
    out = np.where(x < sigma**2, a, b)
    out = np.where(x < 1, np.nan, out)
    return out if out.ndim else float(out)


def h_alpha(d, sigma: float, R: int):
    d = np.asarray(d, dtype=float)
    dd = d0(sigma, R)
    c1 = (dd - d) / 2 + 4 * math.pi * R
    c2 = 32 * math.pi * sigma**2 * R**2 * np.exp(-(d**2) / (2 * (2 * sigma * R) ** 2))
    c3 = 128 * d * R / sigma**2 * np.exp(-d / (4 * R))
    out = np.where(d < dd, c1, np.where(d < 2 * sigma**2 * R, c2, c3))
    return out if out.ndim else float(out)


def shell_envelope(N, alpha: float, sigma: float, R: int, norm_A: float):
    """Bound on the norm of shell N+1."""
    N = np.asarray(N, dtype=float)
    x = N / R
    return 4 * alpha / SQRT2PI * norm_A * (1 + x / sigma**2) * np.exp(-epsilon_fn(x, sigma) * x)


def G_RJg(L: float, R: int, J: float, gamma: float, q_max: int) -> float:
    v = lieb_robinson_velocity(R, J)
    return (gamma / (4 * v * R)) * (L / (48 * 2 * math.pi * q_max * math.log(L) ** 3)) ** 0.2


def main_rhs(L: float, R: int, J: float, gamma: float, q_max: int, C: float = 1.0) -> float:
    G = G_RJg(L, R, J, gamma, q_max)
    return C * (q_max * R**2 * J / gamma * L) ** 2.5 * G**2.5 * math.exp(-(G**2) / 6)


def L_require(L: float, R: int, J: float, gamma: float, q_max: int, C_prime: float = 1.0) -> bool:
    G = G_RJg(L, R, J, gamma, q_max)
    return bool(G**2 >= C_prime * math.log(q_max * R**2 * J / gamma * L))


def r_choice(Q_max: float, alpha: float, J: float, L: float, gamma: float) -> float:
    n = math.floor((Q_max * alpha * J * L) ** (2 / 3) * math.exp(alpha**2 * gamma**2 / 3))
    return 2 * math.pi / n if n >= 1 else float("inf")


@dataclass
class EnvelopeReport:
    R: int
    J: float
    q_max: int
    Q_max: float
    gamma: float
    alpha: float
    L: float
    v: float
    C_RJ: float
    sigma: float
    xi: float
    epsilon: float | None
    C0_eps: float | None
    d0: float | None
    phi_norm: float | None
    v_eff: float | None
    g_values: dict = field(default_factory=dict)
    h_values: dict = field(default_factory=dict)
    G: float = 0.0
    main_rhs: float = 0.0
    Lrequire_ok: bool = False
    j_max: float | None = None
    j_max_bound: float | None = None
    s_max: int | None = None
    s_max_bound: float | None = None
    hypotheses: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def envelopes(
    R: int,
    J: float,
    q_max: int,
    gamma: float,
    alpha: float | None = None,
    L: float | None = None,
    j_max: float | None = None,
    s_max: int | None = None,
    C: float = 1.0,
    C_prime: float = 1.0,
) -> EnvelopeReport:
    """Evaluate every envelope constant; hypotheses that fail are flagged, not raised."""
    if min(R, J, gamma) <= 0 or q_max <= 0:
        raise DomainError("R, J, gamma and q_max must be positive")
    if L is None and alpha is None:
        raise DomainError("give alpha or L")
    Qm = q_max * R**2 / 4
    if alpha is None:
        alpha = alpha_of_L(L, R, J, Qm)
    v = lieb_robinson_velocity(R, J)
    sigma = 2 * alpha * v
    hyp = {"sigma_ge_sqrt_2pi": sigma >= SQRT2PI}
    dd = eps = C0 = phi = ve = None
    g_vals: dict = {}
    h_vals: dict = {}
    if 8 * sigma**2 * R > 1:
        dd = d0(sigma, R)
        hyp["d0_gt_e"] = dd > math.e
        if dd > 1:
            eps = 1 / math.log(dd)
            hyp["eps_le_1"] = eps <= 1
            C0 = C0_bound(eps)
            jm = j_max if j_max is not None else Qm * J
            sm = s_max if s_max is not None else 16 * R**2
            phi = 2 * math.e / SQRT2PI * jm * sm * alpha * dd**3
            ve = v_eff(Qm, R, dd)
        for d in (0.0, dd / 2, dd, 2 * dd, 4 * sigma**2 * R):
            h_vals[f"{d:.6g}"] = float(h_alpha(d, sigma, R))
    for x in (1.0, 2.0, 5.0, 10.0, sigma**2, 2 * sigma**2):
        g_vals[f"{x:.6g}"] = float(g_alpha(x, sigma, R))
    rep = EnvelopeReport(
        R=R, J=J, q_max=q_max, Q_max=Qm, gamma=gamma, alpha=alpha, L=float(L) if L else 0.0,
        v=v, C_RJ=C_RJ(R, J), sigma=sigma, xi=xi(R, Qm), epsilon=eps, C0_eps=C0, d0=dd,
        phi_norm=phi, v_eff=ve, g_values=g_vals, h_values=h_vals,
        j_max=j_max, j_max_bound=Qm * J, s_max=s_max, s_max_bound=16 * R**2, hypotheses=hyp,
    )
    if L:
        rep.G = G_RJg(L, R, J, gamma, q_max)
        rep.main_rhs = main_rhs(L, R, J, gamma, q_max, C)
        rep.Lrequire_ok = L_require(L, R, J, gamma, q_max, C_prime)
    return rep


def exact_j_s_max(spec, axis: str = "x") -> tuple[float, int]:
    """Model values of j_max and s_max for the derivative terms A_Z = d Phi(Z) / d theta."""
    from .hamiltonian import local_charges

    lat = spec.lattice
    col = 0 if axis == "x" else 2
    touch = spec.twist_touch()[:, col]
    region = spec._charge_x if axis == "x" else spec._charge_y
    acc = np.zeros(lat.n_sites)
    active = []
    for i, t in enumerate(spec.terms):
        if not touch[i]:
            continue
        sup = list(t.support)
        q = local_charges(len(sup), lat.local_dim) @ np.array([s in region.sites for s in sup], dtype=np.int64)
        dphi = 1j * (q[:, None] - q[None, :]) * t.local_matrix
        nrm = float(np.linalg.norm(dphi, 2))
        if nrm > 0:
            acc[sup] += nrm
            active.append(sup)
    j_max = float(acc.max(initial=0.0))
    if not active:
        return j_max, 0
    dist = np.array(
        [[lat.set_distance(sup, [s]) for s in range(lat.n_sites)] for sup in active]
    )  # (terms, sites)
    s_max = 0
    for s1 in range(lat.n_sites):
        for s2 in range(lat.n_sites):
            M = np.maximum(dist[:, s1], dist[:, s2])
            for m in np.unique(M):
                sites = set()
                for k in np.flatnonzero(M == m):
                    sites.update(active[k])
                s_max = max(s_max, len(sites))
    return j_max, s_max


def generator(family, tx: float, ty: float, axis: str, alpha: float, M: int | None = None, sd: SpectralData | None = None) -> np.ndarray:
    """D = S_alpha(H(tx, ty), dH/d axis); with ``M``, the sum over terms of S_alpha^(M)."""
    if M is None:
        if sd is None:
            sd = eig(family.h(tx, ty))
        return s_op(sd, family.dh(tx, ty, axis), alpha)
    out = np.zeros((family.dim, family.dim), dtype=complex)
    for k in family.moving_terms(axis):
        A = family.term_dh(tx, ty, axis, k)
        Z = family.spec.terms[k].support
        out += s_op_truncated(family, A, Z, tx, ty, alpha, M)
    return out
