"""Torus geometry, charge sectors and the named regions used by the twist machinery.

Sites of an ``L x L`` torus are stored with centered coordinates
``x, y in {-ceil(L/2)+1, ..., floor(L/2)}`` and ordered by ``(x, y)``. Any
integer coordinate is accepted and reduced mod ``L``.
"""

from __future__ import annotations

from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import kernels
from .errors import DomainError, ResourceError

Site = tuple[int, int]

# largest sector basis we are willing to enumerate
SECTOR_CAP = 200_000


@dataclass(frozen=True)
class TorusLattice:
    L: int
    R: int = 1
    q_max: int = 1

    def __post_init__(self):
        if self.L < 1 or self.R < 1 or self.q_max < 0:
            raise DomainError("need L >= 1, R >= 1, q_max >= 0")
        if self.L <= 2 * self.R:
            raise DomainError(f"L={self.L} must exceed 2R={2 * self.R}")

    @property
    def n_sites(self) -> int:
        return self.L * self.L

    @property
    def local_dim(self) -> int:
        return self.q_max + 1

    @property
    def Q_max(self) -> float:
        """Largest charge a diameter-R support can carry, q_max R^2 / 4."""
        return self.q_max * self.R**2 / 4

    def wrap(self, x: int) -> int:
        c = (self.L + 1) // 2 - 1
        return (x + c) % self.L - c

    @cached_property
    def coords(self) -> np.ndarray:
        lo = -((self.L + 1) // 2) + 1
        r = np.arange(lo, lo + self.L)
        xx, yy = np.meshgrid(r, r, indexing="ij")
        return np.stack([xx.ravel(), yy.ravel()], axis=1)

    def index(self, site: Site) -> int:
        lo = -((self.L + 1) // 2) + 1
        x, y = self.wrap(site[0]), self.wrap(site[1])
        return (x - lo) * self.L + (y - lo)

    def site(self, i: int) -> Site:
        x, y = self.coords[i]
        return int(x), int(y)

    def axis_distance(self, a, b):
        d = np.abs(np.asarray(a) - np.asarray(b)) % self.L
        return np.minimum(d, self.L - d)

    def diameter(self, sites: Iterable[int]) -> int:
        s = list(sites)
        if len(s) < 2:
            return 0
        c = self.coords[s]
        dx = self.axis_distance(c[:, None, 0], c[None, :, 0])
        dy = self.axis_distance(c[:, None, 1], c[None, :, 1])
        return int((dx + dy).max())

    def set_distance(self, a: Iterable[int], b: Iterable[int]) -> int:
        """Smallest torus distance between a site of ``a`` and a site of ``b``."""
        a, b = list(a), list(b)
        if not a or not b:
            raise DomainError("distance to an empty set")
        ca, cb = self.coords[a], self.coords[b]
        dx = self.axis_distance(ca[:, None, 0], cb[None, :, 0])
        dy = self.axis_distance(ca[:, None, 1], cb[None, :, 1])
        return int((dx + dy).min())

    @cached_property
    def twist_lines(self) -> tuple[int, int]:
        """Centered x (or y) coordinates of the two lines where charge boundaries sit."""
        return self.wrap(1), self.wrap(self.L // 2 + 1)


def torus_distance(s1: Site, s2: Site, lat: TorusLattice) -> int:
    """Wrap-around L1 distance; x=L and x=1 are neighbours."""
    d = lat.axis_distance(s1[0], s2[0]) + lat.axis_distance(s1[1], s2[1])
    return int(d)


@dataclass(frozen=True)
class Region:
    name: str
    sites: frozenset[int]

    def __contains__(self, i) -> bool:
        return i in self.sites

    def __len__(self) -> int:
        return len(self.sites)

    def contains_all(self, sites: Iterable[int]) -> bool:
        return all(s in self.sites for s in sites)

    def touches(self, sites: Iterable[int]) -> bool:
        return any(s in self.sites for s in sites)

    def complement(self, lat: TorusLattice, name: str | None = None) -> Region:
        return Region(name or f"not_{self.name}", frozenset(range(lat.n_sites)) - self.sites)

    @property
    def sorted_sites(self) -> list[int]:
        return sorted(self.sites)


def _select(lat: TorusLattice, name: str, mask: np.ndarray) -> Region:
    return Region(name, frozenset(int(i) for i in np.flatnonzero(mask)))


def region_all(lat: TorusLattice) -> Region:
    return Region("all", frozenset(range(lat.n_sites)))


def region_from_sites(lat: TorusLattice, name: str, sites: Iterable[Site]) -> Region:
    return Region(name, frozenset(lat.index(s) for s in sites))


def region_charge_x(lat: TorusLattice) -> Region:
    """Half torus 1 <= x <= L/2 carrying the charge Q_X."""
    x = lat.coords[:, 0]
    return _select(lat, "charge_x", (x >= 1) & (x <= lat.L // 2))


def region_charge_y(lat: TorusLattice) -> Region:
    y = lat.coords[:, 1]
    return _select(lat, "charge_y", (y >= 1) & (y <= lat.L // 2))


def region_strip(lat: TorusLattice, axis: str, which: int) -> Region:
    """Sites closer than R (along ``axis``) to twist line ``which`` in {1, 2}."""
    col = {"x": 0, "y": 1}[axis]
    centre = lat.twist_lines[which - 1]
    d = lat.axis_distance(lat.coords[:, col], centre)
    return _select(lat, f"strip_{axis}{which}", d < lat.R)


def region_omega(lat: TorusLattice) -> Region:
    """Horizontal band |y| <= 5L/24 - R."""
    y = lat.coords[:, 1]
    return _select(lat, "omega", np.abs(y) <= 5 * lat.L / 24 - lat.R)


def region_omega0(lat: TorusLattice) -> Region:
    x, y = lat.coords[:, 0], lat.coords[:, 1]
    h = lat.L / 8 - lat.R
    return _select(lat, "omega0", (np.abs(x) <= h) & (np.abs(y) <= h))


def region_omega_x(lat: TorusLattice) -> Region:
    return _select(lat, "omega_x", np.abs(lat.coords[:, 0]) <= lat.L / 4)


def region_omega_y(lat: TorusLattice) -> Region:
    return _select(lat, "omega_y", np.abs(lat.coords[:, 1]) <= lat.L / 4)


def _fattened_complement(lat: TorusLattice, region: Region, name: str) -> Region:
    out = region.complement(lat).sites
    if not out:
        return Region(name, frozenset())
    keep = [i for i in range(lat.n_sites) if lat.set_distance([i], out) <= lat.R]
    return Region(name, frozenset(keep))


def region_omega_x_c(lat: TorusLattice) -> Region:
    """Sites within distance R of the complement of omega_x."""
    return _fattened_complement(lat, region_omega_x(lat), "omega_x_c")


def region_omega_y_c(lat: TorusLattice) -> Region:
    return _fattened_complement(lat, region_omega_y(lat), "omega_y_c")


REGION_BUILDERS = {
    "all": region_all,
    "charge_x": region_charge_x,
    "charge_y": region_charge_y,
    "omega": region_omega,
    "omega0": region_omega0,
    "omega_x": region_omega_x,
    "omega_y": region_omega_y,
    "omega_x_c": region_omega_x_c,
    "omega_y_c": region_omega_y_c,
}


def build_region(lat: TorusLattice, name: str) -> Region:
    try:
        return REGION_BUILDERS[name](lat)
    except KeyError:
        raise DomainError(f"unknown region {name!r}") from None


def count_table(n_sites: int, total: int, q_max: int) -> list[list[int]]:
    """``N[k][r]``: configurations of k sites with charges in [0, q_max] summing to r."""
    N = [[0] * (total + 1) for _ in range(n_sites + 1)]
    N[0][0] = 1
    for k in range(1, n_sites + 1):
        prev = N[k - 1]
        for r in range(total + 1):
            N[k][r] = sum(prev[r - v] for v in range(min(q_max, r) + 1))
    return N


def sector_dim(n_sites: int, total: int, q_max: int) -> int:
    if total < 0 or total > q_max * n_sites:
        return 0
    return count_table(n_sites, total, q_max)[n_sites][total]


@dataclass(frozen=True, eq=False)
class ChargeSector:
    """All occupations with total charge ``total_charge``, in lexicographic order."""

    lattice: TorusLattice
    total_charge: int
    basis: np.ndarray = field(repr=False)
    _table: np.ndarray = field(repr=False)

    @property
    def dim(self) -> int:
        return self.basis.shape[0]

    def rank(self, configs: np.ndarray) -> np.ndarray:
        """Basis index of each configuration row."""
        configs = np.atleast_2d(configs)
        return kernels.rank_configs(configs, self._table, self.total_charge)

    def charges(self, sites: Sequence[int]) -> np.ndarray:
        s = list(sites)
        if not s:
            return np.zeros(self.dim, dtype=np.int64)
        return self.basis[:, s].astype(np.int64).sum(axis=1)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, ChargeSector)
            and self.lattice == other.lattice
            and self.total_charge == other.total_charge
        )

    def __hash__(self) -> int:
        return hash((self.lattice, self.total_charge))


def enumerate_sector(lat: TorusLattice, Q: int, cap: int = SECTOR_CAP) -> ChargeSector:
    """Deterministic basis of the charge-Q sector."""
    n, qm = lat.n_sites, lat.q_max
    if not 0 <= Q <= qm * n:
        raise DomainError(f"charge {Q} outside [0, {qm * n}]")
    N = count_table(n, Q, qm)
    dim = N[n][Q]
    if dim > cap:
        raise ResourceError(f"sector dimension {dim} exceeds cap {cap}")
    # table[i, rem, v] = sum_{u < v} N[n - i - 1][rem - u]
    table = np.zeros((n, Q + 1, qm + 2), dtype=np.int64)
    for i in range(n):
        row = N[n - i - 1]
        for rem in range(Q + 1):
            acc = 0
            for v in range(qm + 1):
                table[i, rem, v] = acc
                if v <= rem:
                    acc += row[rem - v]
            table[i, rem, qm + 1] = acc
    basis = np.zeros((dim, n), dtype=np.uint8)
    k = np.arange(dim, dtype=np.int64)
    rem = np.full(dim, Q, dtype=np.int64)
    for i in range(n):
        # largest v with table[i, rem, v] <= k
        v = np.zeros(dim, dtype=np.int64)
        for cand in range(1, qm + 1):
            ok = (cand <= rem) & (table[i, rem, cand] <= k)
            v = np.where(ok, cand, v)
        k = k - table[i, rem, v]
        rem = rem - v
        basis[:, i] = v
    basis.setflags(write=False)
    table.setflags(write=False)
    return ChargeSector(lat, Q, basis, table)


def charge_operator(region: Region, sector: ChargeSector) -> np.ndarray:
    """Diagonal of the charge operator summed over ``region``."""
    return sector.charges(region.sorted_sites)
