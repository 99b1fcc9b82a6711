"""Two-parameter Hamiltonian families H(theta_x, theta_y) on the flux torus.

Everything downstream of the Hamiltonian (generators, loop unitaries, Berry
phases, Chern numbers, bundle projectors) only needs a family: a dimension,
``h(tx, ty)`` and the exact derivatives ``dh(tx, ty, axis, order)``.
"""

from __future__ import annotations

from collections.abc import Callable

import numpy as np

from .errors import DomainError
from .hamiltonian import TwistedHamiltonianSpec
from .lattice import ChargeSector, Region

AXES = ("x", "y")


class FluxFamily:
    dim: int
    name: str = "family"

    def h(self, tx: float, ty: float) -> np.ndarray:
        raise NotImplementedError

    def dh(self, tx: float, ty: float, axis: str, order: int = 1) -> np.ndarray:
        raise NotImplementedError

    def h0(self) -> np.ndarray:
        return self.h(0.0, 0.0)


class DenseFamily(FluxFamily):
    """Family given by plain callables; used for few-level toys."""

    def __init__(
        self,
        h: Callable[[float, float], np.ndarray],
        dh: Callable[[float, float, str, int], np.ndarray],
        dim: int,
        name: str = "dense",
    ):
        self._h, self._dh, self.dim, self.name = h, dh, dim, name

    def h(self, tx, ty):
        return np.asarray(self._h(tx, ty), dtype=complex)

    def dh(self, tx, ty, axis, order=1):
        if axis not in AXES:
            raise DomainError(f"axis must be one of {AXES}")
        return np.asarray(self._dh(tx, ty, axis, order), dtype=complex)


_COL = {"x": (0, 1), "y": (2, 3)}


class LatticeFamily(FluxFamily):
    """H(tx, 0, ty, 0) of a twisted spec, or the anti-twist family H(tx, -tx, ty, -ty)."""

    def __init__(self, spec: TwistedHamiltonianSpec, sector: ChargeSector, mode: str = "plain", terms: np.ndarray | None = None):
        if mode not in ("plain", "anti"):
            raise DomainError("mode must be 'plain' or 'anti'")
        self.spec, self.sector, self.mode = spec, sector, mode
        self.terms = terms
        self.dim = sector.dim
        self.name = f"{spec.name or 'lattice'}[{mode}]"

    def angles(self, tx: float, ty: float) -> tuple[float, float, float, float]:
        if self.mode == "plain":
            return (tx, 0.0, ty, 0.0)
        return (tx, -tx, ty, -ty)

    def restricted(self, terms: np.ndarray) -> LatticeFamily:
        return LatticeFamily(self.spec, self.sector, self.mode, terms)

    def h(self, tx, ty, terms=None):
        return self.spec.assemble(self.angles(tx, ty), self.sector, self._mask(terms))

    def _mask(self, terms):
        if terms is None:
            return self.terms
        if self.terms is None:
            return terms
        return np.asarray(terms, bool) & np.asarray(self.terms, bool)

    def dh(self, tx, ty, axis, order=1, terms=None):
        if axis not in AXES:
            raise DomainError(f"axis must be one of {AXES}")
        a = self.angles(tx, ty)
        i, j = _COL[axis]
        mask = self._mask(terms)
        d = [0, 0, 0, 0]
        d[i] = order
        out = self.spec._build(a, self.sector, d, mask)
        if self.mode == "anti":
            # d/dt H(t, -t): no term touches both strips, so cross derivatives vanish
            d = [0, 0, 0, 0]
            d[j] = order
            out = out + (-1) ** order * self.spec._build(a, self.sector, d, mask)
        return out

    def moving_terms(self, axis: str) -> np.ndarray:
        """Indices of terms whose matrix depends on the ``axis`` angles in this mode."""
        i, j = _COL[axis]
        touch = self.spec.twist_touch()
        cols = [i] if self.mode == "plain" else [i, j]
        moving = touch[:, cols].any(axis=1)
        if self.terms is not None:
            moving &= np.asarray(self.terms, bool)
        return np.flatnonzero(moving)

    def term_dh(self, tx, ty, axis, k: int) -> np.ndarray:
        return self.dh(tx, ty, axis, 1, terms=self.spec.term_mask([k]))

    def ball_h(self, tx, ty, Z, M: int) -> np.ndarray:
        return self.spec.assemble(self.angles(tx, ty), self.sector, self.spec.ball_terms(Z, M))

    def region_mask(self, region: Region, side: str = "in") -> np.ndarray:
        return self.spec.region_terms(region, side)
