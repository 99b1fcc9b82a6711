"""Built-in charge-conserving models.

Lattice presets return a ``TwistedHamiltonianSpec`` together with the sector
of interest. Hopping terms act on hardcore occupations (q_max = 1); in the
one-particle sector they coincide with free fermions, so a preset with
``filled = k`` describes the fermionic many-body state that fills the k lowest
one-particle orbitals (a Slater determinant), handled through one-particle data.
"""

from __future__ import annotations

import math
from collections.abc import Callable
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError
from .flux import DenseFamily
from .hamiltonian import InteractionTerm, TwistedHamiltonianSpec
from .lattice import ChargeSector, TorusLattice
from .spectral import eig

# local basis of two hardcore sites: |00>, |01>, |10>, |11> (first site most significant)
_HOP_IN, _HOP_OUT = 2, 1  # |10> and |01>


def hop_matrix(t: complex, U: float = 0.0, mu1: float = 0.0, mu2: float = 0.0) -> np.ndarray:
    """-t b1^dagger b2 - conj(t) b2^dagger b1 + U n1 n2 + mu1 n1 + mu2 n2 on two hardcore sites."""
    m = np.zeros((4, 4), dtype=complex)
    m[_HOP_IN, _HOP_OUT] = -t
    m[_HOP_OUT, _HOP_IN] = -np.conj(t)
    m[3, 3] = U + mu1 + mu2
    m[_HOP_IN, _HOP_IN] += mu1
    m[_HOP_OUT, _HOP_OUT] += mu2
    return m


def onsite_matrix(mu: float, q_max: int = 1) -> np.ndarray:
    return np.diag(mu * np.arange(q_max + 1)).astype(complex)


@dataclass
class ModelPreset:
    name: str
    spec: TwistedHamiltonianSpec
    Q: int
    facts: dict = field(default_factory=dict)
    filled: int | None = None

    @property
    def sector(self) -> ChargeSector:
        return self.spec.sector(self.Q)


def _hop(lat: TorusLattice, a, b, t, label, U=0.0) -> InteractionTerm:
    return InteractionTerm((lat.index(a), lat.index(b)), hop_matrix(t, U), label)


def magnetic_hoppings(lat: TorusLattice, flux: float, t: float = 1.0, U: float = 0.0, stride: int = 1, offset: int = 0):
    """Nearest-neighbour hoppings with Landau-gauge Peierls phases, ``flux`` quanta per plaquette.

    With ``stride`` s the hops connect x to x+s, giving a torus of L/s by L sites
    starting at column ``offset``. The total flux through that torus must be an
    integer so that the wrap-around plaquettes carry the same flux.
    """
    L = lat.L
    if L % stride:
        raise DomainError("stride must divide L")
    Lx = L // stride
    if abs(flux * Lx * L - round(flux * Lx * L)) > 1e-12:
        raise DomainError(f"flux {flux} per plaquette gives non-integer total flux on the torus")
    terms = []
    for u in range(Lx):
        x = offset + stride * u
        for y in range(L):
            # hop along y at column u carries phase 2 pi f u
            terms.append(_hop(lat, (x, y + 1), (x, y), t * np.exp(2j * math.pi * flux * u), f"y{u},{y}", U))
            # hop along x; the wrap-around hop carries the string phase
            ph = np.exp(-2j * math.pi * flux * Lx * y) if u == Lx - 1 else 1.0
            terms.append(_hop(lat, (x + stride, y), (x, y), t * ph, f"x{u},{y}", U))
    return terms


def _coords(lat: TorusLattice):
    return [(int(x), int(y)) for x, y in lat.coords]


def trivial_atomic(L: int = 4, R: int = 1, Q: int = 1, seed: int = 3, spread: float = 1.0, staggered: float = 0.0) -> ModelPreset:
    """On-site potentials only; flux independent.

    With ``staggered`` = D > 0 the potential is -D on even and +D on odd columns,
    and the preset fills the L^2/2 low orbitals (an atomic insulator with gap 2D).
    Otherwise site potentials are random in [0, spread) with one site pinned at -1.
    """
    lat = TorusLattice(L, R, 1)
    if staggered > 0:
        if L % 2:
            raise DomainError("staggered potential needs even L")
        mus = np.array([staggered if x % 2 else -staggered for x, _ in _coords(lat)])
        terms = [InteractionTerm((i,), onsite_matrix(float(mus[i])), f"mu{i}") for i in range(lat.n_sites)]
        spec = TwistedHamiltonianSpec(lat, terms, name="trivial_atomic")
        return ModelPreset("trivial_atomic", spec, 1, {"chern": 0, "gap": 2 * staggered}, filled=lat.n_sites // 2)
    rng = np.random.default_rng(seed)
    mus = rng.uniform(0.0, spread, lat.n_sites)
    mus[0] = -1.0
    terms = [InteractionTerm((i,), onsite_matrix(float(mus[i])), f"mu{i}") for i in range(lat.n_sites)]
    spec = TwistedHamiltonianSpec(lat, terms, name="trivial_atomic")
    ordered = np.sort(mus)
    return ModelPreset("trivial_atomic", spec, Q, {"chern": 0, "gap": float(ordered[1] - ordered[0]) if Q == 1 else None})


def chern_fermion_toy(L: int = 20, m: float = 1.0, t: float = 1.0) -> ModelPreset:
    """Two-orbital Chern insulator with its lower band filled.

    Orbitals A and B sit on the even and odd columns, so a unit cell is two
    sites wide and all hoppings have range 2. The Bloch Hamiltonian is
    d(k).sigma with d = (t cos kx + 2t sin ky, t sin kx, m + t cos ky + t cos kx),
    kx counting unit cells; for 0.134 < m < 1.866 the lower band has Chern
    number one in magnitude. The filled band is the Slater determinant of the
    L^2/2 lowest one-particle orbitals.
    """
    if L % 2:
        raise DomainError("chern_fermion_toy needs even L")
    lat = TorusLattice(L, 2, 1)
    terms: list[InteractionTerm] = []

    def amp(a, b, h, label):
        # h is the matrix element <a|h|b>; hop_matrix stores -t
        terms.append(_hop(lat, a, b, -h, label))

    for u in range(L // 2):
        for y in range(L):
            A, B = (2 * u, y), (2 * u + 1, y)
            terms.append(InteractionTerm((lat.index(A),), onsite_matrix(m), f"mA{u},{y}"))
            terms.append(InteractionTerm((lat.index(B),), onsite_matrix(-m), f"mB{u},{y}"))
            amp((2 * u, y + 1), A, 0.5 * t, f"yA{u},{y}")
            amp((2 * u + 1, y + 1), B, -0.5 * t, f"yB{u},{y}")
            amp((2 * u + 2, y), A, 0.5 * t, f"xA{u},{y}")
            amp((2 * u + 3, y), B, -0.5 * t, f"xB{u},{y}")
            amp(A, (2 * u - 1, y), t, f"w{u},{y}")
            amp(A, (2 * u + 1, y - 1), -1j * t, f"s-{u},{y}")
            amp(A, (2 * u + 1, y + 1), 1j * t, f"s+{u},{y}")
    spec = TwistedHamiltonianSpec(lat, terms, name="chern_fermion_toy")
    return ModelPreset("chern_fermion_toy", spec, 1, {"chern_abs": 1}, filled=lat.n_sites // 2)


def magnetic_torus(L: int = 4, t: float = 1.0) -> ModelPreset:
    """One particle on a torus threaded by a single flux quantum.

    The lowest level is unique and gapped and carries twist-angle Chern number
    one in magnitude, but its curvature over the flux torus is far from uniform.
    """
    lat = TorusLattice(L, 1, 1)
    spec = TwistedHamiltonianSpec(lat, magnetic_hoppings(lat, 1.0 / (L * L), t), name="magnetic_torus")
    return ModelPreset("magnetic_torus", spec, 1, {"chern_abs": 1})


def hofstadter_hardcore(L: int = 4, p: int = 1, q: int = 16, Q: int = 1, U: float = 0.0, t: float = 1.0) -> ModelPreset:
    """Hardcore bosons with flux p/q per plaquette and optional neighbour repulsion U."""
    lat = TorusLattice(L, 1, 1)
    spec = TwistedHamiltonianSpec(lat, magnetic_hoppings(lat, p / q, t, U), name="hofstadter_hardcore")
    return ModelPreset("hofstadter_hardcore", spec, Q, {"flux": p / q, "n_flux": p * L * L / q})


def random_gapped(seed: int = 7, L: int = 4, Q: int = 2, gamma_min: float = 0.2, max_tries: int = 200) -> ModelPreset:
    """Random hoppings, potentials and neighbour interactions, redrawn until the gap is at least gamma_min."""
    lat = TorusLattice(L, 1, 1)
    rng = np.random.default_rng(seed)
    coords = _coords(lat)
    for _ in range(max_tries):
        terms = []
        for x, y in coords:
            for dx, dy in ((1, 0), (0, 1)):
                amp = complex(rng.normal(), rng.normal()) * 0.5
                terms.append(_hop(lat, (x + dx, y + dy), (x, y), amp, f"h{x},{y},{dx}{dy}", float(rng.uniform(0, 1))))
            terms.append(InteractionTerm((lat.index((x, y)),), onsite_matrix(float(rng.normal()) * 0.5), f"mu{x},{y}"))
        spec = TwistedHamiltonianSpec(lat, terms, name=f"random_gapped_{seed}")
        gap = eig(spec.assemble((0, 0, 0, 0), spec.sector(Q))).gap
        if gap >= gamma_min:
            return ModelPreset("random_gapped", spec, Q, {"seed": seed, "gap": gap})
    raise DomainError(f"no draw reached gap {gamma_min} in {max_tries} tries")


def degenerate_pair(q: int = 2, L: int = 10) -> ModelPreset:
    """``q`` decoupled copies of the one-flux-quantum torus, interleaved along x.

    Copy c lives on the columns x = c mod q and hops by q sites, so the range is
    R = q. The one-particle ground space is exactly q-fold degenerate.
    """
    if L % q:
        raise DomainError("q must divide L")
    lat = TorusLattice(L, q, 1)
    Lx = L // q
    terms = []
    for c in range(q):
        terms += magnetic_hoppings(lat, 1.0 / (Lx * L), 1.0, 0.0, stride=q, offset=c)
    spec = TwistedHamiltonianSpec(lat, [InteractionTerm(t.support, t.local_matrix, f"c{c}:{t.label}") for c, t in zip(_copy_ids(q, L), terms)], name="degenerate_pair")
    return ModelPreset("degenerate_pair", spec, 1, {"ground_dim": q})


def _copy_ids(q: int, L: int):
    per = 2 * (L // q) * L
    return [c for c in range(q) for _ in range(per)]


def chain(L: int = 8, Q: int = 1, t: float = 1.0, mu_seed: int = 5) -> ModelPreset:
    """Hopping along x only (one particle), with weak random potentials to split levels."""
    lat = TorusLattice(L, 1, 1)
    rng = np.random.default_rng(mu_seed)
    terms = []
    for x, y in _coords(lat):
        terms.append(_hop(lat, (x + 1, y), (x, y), t, f"x{x},{y}"))
        terms.append(InteractionTerm((lat.index((x, y)),), onsite_matrix(float(rng.uniform(-0.2, 0.2))), f"mu{x},{y}"))
    spec = TwistedHamiltonianSpec(lat, terms, name="chain")
    return ModelPreset("chain", spec, Q, {})


PRESETS: dict[str, Callable[..., ModelPreset]] = {
    "trivial_atomic": trivial_atomic,
    "chern_fermion_toy": chern_fermion_toy,
    "hofstadter_hardcore": hofstadter_hardcore,
    "random_gapped": random_gapped,
    "degenerate_pair": degenerate_pair,
    "chain": chain,
    "magnetic_torus": magnetic_torus,
}


def build_preset(name: str, **overrides) -> ModelPreset:
    try:
        builder = PRESETS[name]
    except KeyError:
        raise DomainError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    try:
        return builder(**overrides)
    except TypeError as exc:
        raise DomainError(f"bad overrides for {name}: {exc}") from exc


def interpolate(a: TwistedHamiltonianSpec, b: TwistedHamiltonianSpec, s: float) -> TwistedHamiltonianSpec:
    """Termwise (1 - s) A + s B on a common lattice."""
    if a.lattice != b.lattice:
        raise DomainError("interpolation needs the same lattice")
    if not 0.0 <= s <= 1.0:
        raise DomainError("s must lie in [0, 1]")
    if s == 0.0:
        return a
    if s == 1.0:
        return b
    terms = [t.scaled(1 - s) for t in a.terms] + [t.scaled(s) for t in b.terms]
    return TwistedHamiltonianSpec(a.lattice, terms, name=f"interp({a.name},{b.name},{s:.6g})")


# ------------------------------------------------------------- two-level toys
_SX = np.array([[0, 1], [1, 0]], dtype=complex)
_SY = np.array([[0, -1j], [1j, 0]], dtype=complex)
_SZ = np.array([[1, 0], [0, -1]], dtype=complex)


def two_level_toy(m: float = 1.0) -> DenseFamily:
    """sin(tx) sx + sin(ty) sy + (m + cos tx + cos ty) sz; Chern +-1 for 0 < |m| < 2."""

    def h(tx, ty):
        return math.sin(tx) * _SX + math.sin(ty) * _SY + (m + math.cos(tx) + math.cos(ty)) * _SZ

    def dh(tx, ty, axis, order=1):
        if axis == "x":
            if order == 1:
                return math.cos(tx) * _SX - math.sin(tx) * _SZ
            return -math.sin(tx) * _SX - math.cos(tx) * _SZ
        if order == 1:
            return math.cos(ty) * _SY - math.sin(ty) * _SZ
        return -math.sin(ty) * _SY - math.cos(ty) * _SZ

    return DenseFamily(h, dh, 2, f"two_level_toy(m={m})")
