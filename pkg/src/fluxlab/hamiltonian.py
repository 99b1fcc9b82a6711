"""Interaction terms, charge symmetrization and the four-angle boundary twists.

A twisted Hamiltonian is stored per charge sector as a sparse pattern of
matrix elements. Element k carries the untwisted value and four integers
``winds[k]`` such that its twisted value is

    vals[k] * exp(i * winds[k] . (theta_x, phi_x, theta_y, phi_y)).

The integers are the charge transferred across the relevant twist line
(with a minus sign for the phi angles, which rotate the opposite way).
Derivatives with respect to the angles are therefore exact and cheap.
"""

from __future__ import annotations

import json
import threading
from collections import OrderedDict
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import DomainError, ResourceError
from .lattice import (
    ChargeSector,
    Region,
    TorusLattice,
    enumerate_sector,
    region_all,
    region_charge_x,
    region_charge_y,
    region_strip,
)

ANGLE_NAMES = ("theta_x", "phi_x", "theta_y", "phi_y")
HERMITIAN_TOL = 1e-12
CACHE_BYTES = 256 * 2**20


def local_charges(n_sites: int, local_dim: int) -> np.ndarray:
    """Digits of every local basis index, first site most significant."""
    idx = np.arange(local_dim**n_sites)
    digits = np.zeros((len(idx), n_sites), dtype=np.int64)
    for p in range(n_sites):
        digits[:, n_sites - 1 - p] = (idx // local_dim**p) % local_dim
    return digits


@dataclass(frozen=True, eq=False)
class InteractionTerm:
    """A Hermitian operator on the sites ``support`` (ordered, first site most significant)."""

    support: tuple[int, ...]
    local_matrix: np.ndarray = field(repr=False)
    label: str = ""

    def __post_init__(self):
        m = np.array(self.local_matrix, dtype=complex)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise DomainError(f"term {self.label!r}: local matrix must be square")
        if len(set(self.support)) != len(self.support):
            raise DomainError(f"term {self.label!r}: repeated support site")
        if np.abs(m - m.conj().T).max(initial=0.0) > HERMITIAN_TOL * max(1.0, np.abs(m).max(initial=0.0)):
            raise DomainError(f"term {self.label!r}: local matrix is not Hermitian")
        m.setflags(write=False)
        object.__setattr__(self, "support", tuple(int(s) for s in self.support))
        object.__setattr__(self, "local_matrix", m)

    @property
    def norm(self) -> float:
        if self.local_matrix.size == 0:
            return 0.0
        return float(np.linalg.norm(self.local_matrix, 2))

    def local_dim(self) -> int:
        n = len(self.support)
        d = round(self.local_matrix.shape[0] ** (1.0 / n)) if n else 1
        return d

    def scaled(self, c: float) -> InteractionTerm:
        return InteractionTerm(self.support, c * self.local_matrix, self.label)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, InteractionTerm)
            and self.support == other.support
            and self.label == other.label
            and np.array_equal(self.local_matrix, other.local_matrix)
        )

    def __hash__(self) -> int:
        return hash((self.support, self.label))


def charge_symmetrize(term: InteractionTerm, local_dim: int) -> InteractionTerm:
    """Keep only the blocks of the local matrix that conserve the charge on the support."""
    q = local_charges(len(term.support), local_dim).sum(axis=1)
    keep = q[:, None] == q[None, :]
    return InteractionTerm(term.support, np.where(keep, term.local_matrix, 0.0), term.label)


def charge_average(term: InteractionTerm, local_dim: int, n_nodes: int = 64) -> np.ndarray:
    """(1/2pi) int e^{i t Q} Phi e^{-i t Q} dt by the trapezoid rule (exact for integer charges)."""
    q = local_charges(len(term.support), local_dim).sum(axis=1)
    out = np.zeros_like(term.local_matrix)
    for t in 2 * np.pi * np.arange(n_nodes) / n_nodes:
        ph = np.exp(1j * t * q)
        out = out + ph[:, None] * term.local_matrix * ph.conj()[None, :]
    return out / n_nodes


@dataclass(frozen=True)
class TwistAngles:
    theta_x: float = 0.0
    phi_x: float = 0.0
    theta_y: float = 0.0
    phi_y: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.theta_x, self.phi_x, self.theta_y, self.phi_y], dtype=float)

    @classmethod
    def coerce(cls, a) -> TwistAngles:
        if isinstance(a, TwistAngles):
            return a
        if a is None:
            return cls()
        a = tuple(float(v) for v in a)
        if len(a) == 2:
            return cls(a[0], 0.0, a[1], 0.0)
        if len(a) != 4:
            raise DomainError("angles need 2 or 4 entries")
        return cls(*a)


@dataclass
class _Pattern:
    rows: np.ndarray
    cols: np.ndarray
    vals: np.ndarray
    winds: np.ndarray
    term: np.ndarray


class _MatrixCache:
    """Byte-bounded LRU. Inserts take a lock; a missed read just rebuilds."""

    def __init__(self, budget: int = CACHE_BYTES):
        self.budget = budget
        self.used = 0
        self._d: OrderedDict = OrderedDict()
        self._lock = threading.Lock()

    def get(self, key):
        m = self._d.get(key)
        return m

    def put(self, key, m: np.ndarray):
        if m.nbytes > self.budget // 4:
            return
        with self._lock:
            if key in self._d:
                return
            self._d[key] = m
            self.used += m.nbytes
            while self.used > self.budget and self._d:
                _, old = self._d.popitem(last=False)
                self.used -= old.nbytes

    def clear(self):
        with self._lock:
            self._d.clear()
            self.used = 0


class TwistedHamiltonianSpec:
    """A list of local terms on a torus together with the twist prescription."""

    def __init__(
        self,
        lattice: TorusLattice,
        terms: Sequence[InteractionTerm],
        J: float | None = None,
        symmetrize: bool = True,
        name: str = "",
        dense_cap: int = 6000,
    ):
        self.lattice = lattice
        self.name = name
        self.dense_cap = dense_cap
        d = lattice.local_dim
        checked = []
        for t in terms:
            n = len(t.support)
            if t.local_matrix.shape[0] != d**n:
                raise DomainError(f"term {t.label!r}: matrix size does not match support")
            if any(not 0 <= s < lattice.n_sites for s in t.support):
                raise DomainError(f"term {t.label!r}: site outside lattice")
            if lattice.diameter(t.support) > lattice.R:
                raise DomainError(f"term {t.label!r}: diameter exceeds R={lattice.R}")
            if symmetrize:
                t = charge_symmetrize(t, d)
            else:
                s = charge_symmetrize(t, d)
                if np.abs(s.local_matrix - t.local_matrix).max(initial=0.0) > HERMITIAN_TOL:
                    raise DomainError(f"term {t.label!r} does not conserve charge")
            checked.append(t)
        self.terms: tuple[InteractionTerm, ...] = tuple(checked)
        self.J_measured = self._site_norm_sum()
        if J is None:
            J = self.J_measured
        elif self.J_measured > J * (1 + 1e-12) + 1e-15:
            raise DomainError(f"sup_s sum ||Phi(Z)|| = {self.J_measured:.6g} exceeds declared J={J}")
        self.J = float(J)
        self._charge_x = region_charge_x(lattice)
        self._charge_y = region_charge_y(lattice)
        strips = {(a, w): region_strip(lattice, a, w) for a in "xy" for w in (1, 2)}
        self._touch = np.array(
            [[strips[(a, w)].touches(t.support) for a, w in (("x", 1), ("x", 2), ("y", 1), ("y", 2))] for t in self.terms],
            dtype=bool,
        ).reshape(len(self.terms), 4)
        self.collisions = {
            "x": [i for i in range(len(self.terms)) if self._touch[i, 0] and self._touch[i, 1]],
            "y": [i for i in range(len(self.terms)) if self._touch[i, 2] and self._touch[i, 3]],
        }
        self._patterns: dict[int, _Pattern] = {}
        self._cache = _MatrixCache()
        self._lock = threading.Lock()

    # ------------------------------------------------------------------ basics
    def _site_norm_sum(self) -> float:
        acc = np.zeros(self.lattice.n_sites)
        for t in self.terms:
            acc[list(t.support)] += t.norm
        return float(acc.max(initial=0.0))

    @property
    def Q_max(self) -> float:
        return self.lattice.Q_max

    def __len__(self) -> int:
        return len(self.terms)

    def sector(self, Q: int) -> ChargeSector:
        s = enumerate_sector(self.lattice, Q)
        if s.dim > self.dense_cap:
            raise ResourceError(f"sector dimension {s.dim} exceeds dense cap {self.dense_cap}")
        return s

    def twist_touch(self) -> np.ndarray:
        """Boolean (n_terms, 4): does term touch the strip of each angle."""
        return self._touch.copy()

    def _check_twists(self, active: np.ndarray):
        for axis, cols in (("x", (0, 1)), ("y", (2, 3))):
            if self.collisions[axis] and active[list(cols)].any():
                raise DomainError(
                    f"terms {self.collisions[axis][:3]} touch both {axis}-twist strips; "
                    "the lattice is too small for twisted boundary conditions"
                )

    # ----------------------------------------------------------------- pattern
    def pattern(self, sector: ChargeSector) -> _Pattern:
        key = sector.total_charge
        p = self._patterns.get(key)
        if p is not None:
            return p
        with self._lock:
            p = self._patterns.get(key)
            if p is None:
                p = self._build_pattern(sector)
                self._patterns[key] = p
        return p

    def _build_pattern(self, sector: ChargeSector) -> _Pattern:
        d = self.lattice.local_dim
        basis = sector.basis
        rows, cols, vals, winds, tids = [], [], [], [], []
        cx = self._charge_x.sites
        cy = self._charge_y.sites
        for ti, t in enumerate(self.terms):
            sup = list(t.support)
            n = len(sup)
            digits = local_charges(n, d)
            in_x = np.array([s in cx for s in sup], dtype=np.int64)
            in_y = np.array([s in cy for s in sup], dtype=np.int64)
            qx = digits @ in_x
            qy = digits @ in_y
            place = d ** np.arange(n - 1, -1, -1)
            local = basis[:, sup].astype(np.int64) @ place if n else np.zeros(sector.dim, np.int64)
            m = t.local_matrix
            touch = self._touch[ti].astype(np.int64)
            for b in np.unique(local):
                col_idx = np.flatnonzero(local == b)
                for a in np.flatnonzero(m[:, b]):
                    new = basis[col_idx].copy()
                    new[:, sup] = digits[a]
                    r = sector.rank(new)
                    dqx = qx[a] - qx[b]
                    dqy = qy[a] - qy[b]
                    w = np.array([dqx * touch[0], -dqx * touch[1], dqy * touch[2], -dqy * touch[3]])
                    rows.append(r)
                    cols.append(col_idx.astype(np.int64))
                    vals.append(np.full(len(col_idx), m[a, b]))
                    winds.append(np.broadcast_to(w, (len(col_idx), 4)))
                    tids.append(np.full(len(col_idx), ti, dtype=np.int64))
        if rows:
            p = _Pattern(
                np.concatenate(rows),
                np.concatenate(cols),
                np.concatenate(vals).astype(complex),
                np.ascontiguousarray(np.concatenate(winds), dtype=np.int64),
                np.concatenate(tids),
            )
        else:
            p = _Pattern(
                np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0, complex), np.zeros((0, 4), np.int64), np.zeros(0, np.int64)
            )
        return p

    # ---------------------------------------------------------------- assembly
    def _select(self, p: _Pattern, terms: np.ndarray | None):
        if terms is None:
            return p.rows, p.cols, p.vals, p.winds
        mask = np.asarray(terms, dtype=bool)[p.term]
        return p.rows[mask], p.cols[mask], p.vals[mask], p.winds[mask]

    def _build(self, angles, sector: ChargeSector, deriv, terms) -> np.ndarray:
        a = TwistAngles.coerce(angles).as_array()
        deriv = np.asarray(deriv, dtype=np.int64)
        active = (a != 0) | (deriv != 0)
        self._check_twists(active)
        tkey = None if terms is None else np.asarray(terms, dtype=bool).tobytes()
        key = (sector.total_charge, a.tobytes(), deriv.tobytes(), tkey)
        m = self._cache.get(key)
        if m is not None:
            return m
        p = self.pattern(sector)
        r, c, v, w = self._select(p, terms)
        m = kernels.assemble_dense(r, c, v, w, a, sector.dim, deriv)
        m.setflags(write=False)
        self._cache.put(key, m)
        return m

    def assemble(self, angles, sector: ChargeSector, terms: np.ndarray | None = None) -> np.ndarray:
        """Twisted Hamiltonian on ``sector``; ``terms`` optionally masks the term list."""
        return self._build(angles, sector, (0, 0, 0, 0), terms)

    def twist_derivative(
        self, angles, sector: ChargeSector, direction: str, order: int = 1, terms: np.ndarray | None = None
    ) -> np.ndarray:
        """Exact angle derivative of order 1 or 2."""
        if direction not in ANGLE_NAMES:
            raise DomainError(f"direction must be one of {ANGLE_NAMES}")
        if order not in (1, 2):
            raise DomainError("order must be 1 or 2")
        deriv = [0, 0, 0, 0]
        deriv[ANGLE_NAMES.index(direction)] = order
        return self._build(angles, sector, deriv, terms)

    def term_mask(self, indices: Iterable[int]) -> np.ndarray:
        m = np.zeros(len(self.terms), dtype=bool)
        m[list(indices)] = True
        return m

    def charge_diagonal(self, axis: str, sector: ChargeSector) -> np.ndarray:
        region = self._charge_x if axis == "x" else self._charge_y
        return sector.charges(region.sorted_sites)

    def rotate(self, axis: str, theta: float, op: np.ndarray, sector: ChargeSector) -> np.ndarray:
        """R_X(theta, op) = e^{i theta Q_X} op e^{-i theta Q_X} (or the Y analogue)."""
        ph = np.exp(1j * theta * self.charge_diagonal(axis, sector))
        if op.ndim == 1:
            return ph * op
        return ph[:, None] * op * ph.conj()[None, :]

    # ------------------------------------------------------------ restrictions
    def ball_terms(self, Z: Iterable[int], M: int) -> np.ndarray:
        """Mask of the terms X with d(X, Z) < M - R, or all terms once M >= L."""
        R, L = self.lattice.R, self.lattice.L
        if M < R:
            raise DomainError(f"ball radius M={M} below R={R}")
        if M >= L:
            return np.ones(len(self.terms), dtype=bool)
        Z = list(Z)
        return np.array([self.lattice.set_distance(t.support, Z) < M - R for t in self.terms], dtype=bool)

    def restrict_ball(self, Z: Iterable[int], M: int, angles, sector: ChargeSector) -> np.ndarray:
        return self.assemble(angles, sector, self.ball_terms(Z, M))

    def region_terms(self, region: Region, side: str = "in") -> np.ndarray:
        inside = np.array([region.contains_all(t.support) for t in self.terms], dtype=bool)
        if side == "in":
            return inside
        if side == "out":
            return ~inside
        raise DomainError("side must be 'in' or 'out'")

    def restrict_region(self, region: Region, angles, sector: ChargeSector, side: str = "in") -> np.ndarray:
        return self.assemble(angles, sector, self.region_terms(region, side))

    def full_region(self) -> Region:
        return region_all(self.lattice)

    # ------------------------------------------------------------ construction
    def with_terms(self, terms: Sequence[InteractionTerm], name: str | None = None) -> TwistedHamiltonianSpec:
        return TwistedHamiltonianSpec(self.lattice, terms, None, True, name or self.name, self.dense_cap)

    # ---------------------------------------------------------- serialization
    def to_dict(self) -> dict:
        lat = self.lattice
        return {
            "name": self.name,
            "lattice": {"L": lat.L, "R": lat.R, "q_max": lat.q_max},
            "J": self.J,
            "terms": [
                {
                    "label": t.label,
                    "support": [list(lat.site(s)) for s in t.support],
                    "entries": [
                        [int(i), int(j), float(t.local_matrix[i, j].real), float(t.local_matrix[i, j].imag)]
                        for i, j in zip(*np.nonzero(t.local_matrix))
                    ],
                }
                for t in self.terms
            ],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> TwistedHamiltonianSpec:
        try:
            lat = TorusLattice(int(doc["lattice"]["L"]), int(doc["lattice"]["R"]), int(doc["lattice"]["q_max"]))
            terms = []
            for t in doc["terms"]:
                support = tuple(lat.index(tuple(s)) for s in t["support"])
                n = lat.local_dim ** len(support)
                m = np.zeros((n, n), dtype=complex)
                for i, j, re, im in t["entries"]:
                    m[int(i), int(j)] = complex(float(re), float(im))
                terms.append(InteractionTerm(support, m, t.get("label", "")))
            return cls(lat, terms, doc.get("J"), symmetrize=False, name=doc.get("name", ""))
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, DomainError):
                raise
            raise DomainError(f"malformed model document: {exc}") from exc

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def from_json(cls, text: str) -> TwistedHamiltonianSpec:
        return cls.from_dict(json.loads(text))


def apply_twists(term: InteractionTerm, angles, spec: TwistedHamiltonianSpec) -> InteractionTerm:
    """Twisted copy of one local term, written on its own support.

    Uses the local charge of ``support & charge region`` in place of Q_X and Q_Y;
    the rest of Q_X commutes with the term.
    """
    a = TwistAngles.coerce(angles).as_array()
    lat = spec.lattice
    i = spec.terms.index(term) if term in spec.terms else None
    if i is not None:
        touch = spec._touch[i]
    else:
        touch = np.array([region_strip(lat, ax, w).touches(term.support) for ax, w in (("x", 1), ("x", 2), ("y", 1), ("y", 2))])
    if touch[0] and touch[1] and (a[0] or a[1]):
        raise DomainError("term touches both x strips")
    if touch[2] and touch[3] and (a[2] or a[3]):
        raise DomainError("term touches both y strips")
    sup = list(term.support)
    digits = local_charges(len(sup), lat.local_dim)
    qx = digits @ np.array([s in spec._charge_x.sites for s in sup], dtype=np.int64)
    qy = digits @ np.array([s in spec._charge_y.sites for s in sup], dtype=np.int64)
    m = term.local_matrix
    for q, ang in ((qx, touch[0] * a[0] - touch[1] * a[1]), (qy, touch[2] * a[2] - touch[3] * a[3])):
        ph = np.exp(1j * ang * q)
        m = ph[:, None] * m * ph.conj()[None, :]
    return InteractionTerm(term.support, m, term.label)
