"""A periodic rank-1 projector field built from four-path quasi-adiabatic holonomies.

At each flux point the ground state is carried along four paths from the
origin: first in y, then in x, each leg either increasing from 0 or
decreasing from 2 pi. The four projectors are averaged with bilinear weights
that make the average periodic, smoothed with a square kernel, and the top
eigenvector is kept.

Path labels: a = 1, 2 increase y; a = 3, 4 decrease y from 2 pi;
a = 1, 3 increase x; a = 2, 4 decrease x from 2 pi.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import CapabilityError, DegeneracyError, DomainError
from .evolution import TWO_PI, GeneratorField, IntegratorSettings, integrate_axis
from .flux import FluxFamily
from .spectral import eig

# (y start, x start) of the four paths
STARTS = ((0.0, 0.0), (0.0, TWO_PI), (TWO_PI, 0.0), (TWO_PI, TWO_PI))
SPLIT_FLOOR = 1e-6


def _ground(family: FluxFamily) -> np.ndarray:
    sd = eig(family.h(0.0, 0.0))
    if sd.gap < 1e-8:
        raise DegeneracyError("ground state at the origin is degenerate", theta=(0.0, 0.0))
    return sd.ground_state


def path_weights(tx: float, ty: float) -> np.ndarray:
    """w^a = w^a_x(tx) w^a_y(ty); a leg from 0 weighs 1 - t/2pi, a leg from 2pi weighs t/2pi."""
    wy = {0.0: 1 - ty / TWO_PI, TWO_PI: ty / TWO_PI}
    wx = {0.0: 1 - tx / TWO_PI, TWO_PI: tx / TWO_PI}
    return np.array([wy[y0] * wx[x0] for y0, x0 in STARTS])


def _check_angles(tx, ty):
    if not (0 <= tx <= TWO_PI and 0 <= ty <= TWO_PI):
        raise DomainError("target angles must lie in [0, 2pi]")


def four_path_unitaries(
    family: FluxFamily,
    tx: float,
    ty: float,
    alpha: float,
    settings: IntegratorSettings = IntegratorSettings(),
    gf: GeneratorField | None = None,
):
    """U_1..U_4 to (tx, ty) and the matrix |<Psi0|U_a^dagger U_b Psi0>|^2."""
    _check_angles(tx, ty)
    gf = gf or GeneratorField(family, alpha)
    psi0 = _ground(family)
    Us = []
    for y0, x0 in STARTS:
        # the y leg runs on the seam theta_x = x0, identical to theta_x = 0 by periodicity
        uy = integrate_axis(gf, (x0, y0), "y", ty - y0, settings).matrix
        ux = integrate_axis(gf, (x0, ty), "x", tx - x0, settings).matrix
        Us.append(ux @ uy)
    states = np.array([u @ psi0 for u in Us])
    ov = np.abs(states.conj() @ states.T) ** 2
    return Us, ov


def averaged_projector(
    family: FluxFamily,
    tx: float,
    ty: float,
    alpha: float,
    settings: IntegratorSettings = IntegratorSettings(),
    gf: GeneratorField | None = None,
) -> np.ndarray:
    """O = sum_a w^a U_a |Psi0><Psi0| U_a^dagger."""
    Us, _ = four_path_unitaries(family, tx, ty, alpha, settings, gf)
    psi0 = _ground(family)
    w = path_weights(tx, ty)
    O = np.zeros((family.dim, family.dim), dtype=complex)
    for wa, u in zip(w, Us):
        v = u @ psi0
        O += wa * np.outer(v, v.conj())
    return O


def averaged_field(
    family: FluxFamily,
    n_grid: int,
    alpha: float,
    settings: IntegratorSettings = IntegratorSettings(),
    gf: GeneratorField | None = None,
):
    """O on the closed mesh 2pi (i, j) / n_grid, 0 <= i, j <= n_grid, and the worst path overlap.

    Legs are extended one mesh cell at a time, so each row costs O(n_grid) steps.
    """
    if n_grid < 2:
        raise DomainError("n_grid must be at least 2")
    if family.dim > 512:
        raise CapabilityError("bundle construction is limited to vector states of dimension <= 512")
    gf = gf or GeneratorField(family, alpha)
    psi0 = _ground(family)
    n = n_grid
    ts = TWO_PI * np.arange(n + 1) / n
    d = family.dim
    O = np.zeros((n + 1, n + 1, d, d), dtype=complex)
    min_ov = 1.0

    def sweep(axis, fixed, forward):
        # unitaries from the start corner to every mesh point along one line
        out = [None] * (n + 1)
        U = np.eye(d, dtype=complex)
        idx = range(n + 1) if forward else range(n, -1, -1)
        prev = None
        for i in idx:
            if prev is not None:
                a, b = ts[prev], ts[i]
                p = (a, fixed) if axis == "x" else (fixed, a)
                U = integrate_axis(gf, p, axis, b - a, settings).matrix @ U
            out[i] = U
            prev = i
        return out

    ylegs = {y0: sweep("y", 0.0, y0 == 0.0) for y0 in (0.0, TWO_PI)}
    for j in range(n + 1):
        xlegs = {x0: sweep("x", ts[j], x0 == 0.0) for x0 in (0.0, TWO_PI)}
        for i in range(n + 1):
            w = path_weights(ts[i], ts[j])
            vs = [xlegs[x0][i] @ (ylegs[y0][j] @ psi0) for y0, x0 in STARTS]
            for wa, v in zip(w, vs):
                O[i, j] += wa * np.outer(v, v.conj())
            V = np.array(vs)
            min_ov = min(min_ov, float((np.abs(V.conj() @ V.T) ** 2).min()))
    return O, min_ov


def _convolve(O: np.ndarray, half_width: int) -> np.ndarray:
    """Periodic mean over a (2h+1)^2 square of mesh cells."""
    if half_width == 0:
        return O.copy()
    out = np.zeros_like(O)
    k = 2 * half_width + 1
    for dx in range(-half_width, half_width + 1):
        for dy in range(-half_width, half_width + 1):
            out += np.roll(np.roll(O, dx, axis=0), dy, axis=1)
    return out / (k * k)


@dataclass
class BundleField:
    n_grid: int
    half_width: int
    O_field: np.ndarray
    O_smooth: np.ndarray
    P_field: np.ndarray
    vectors: np.ndarray
    lambda_field: np.ndarray
    second_field: np.ndarray
    defects_x: np.ndarray | None = None
    defects_y: np.ndarray | None = None
    derivative_error: float | None = None
    check_epsilon: float | None = None
    D_bound: float | None = None
    seam_periodicity: float = 0.0
    meta: dict = field(default_factory=dict)

    @property
    def thetas(self) -> np.ndarray:
        return TWO_PI * np.arange(self.n_grid) / self.n_grid

    def idempotency(self) -> float:
        P = self.P_field
        return float(np.abs(np.einsum("ijab,ijbc->ijac", P, P) - P).max())

    def trace_defect(self) -> float:
        return float(np.abs(np.einsum("ijaa->ij", self.P_field) - 1).max())

    def seam_mask(self) -> np.ndarray:
        """Points whose centred difference stencil reaches a seam line."""
        n = self.n_grid
        near = np.zeros(n, dtype=bool)
        for k in (-2, -1, 0, 1, 2):
            near[k % n] = True
        return near[:, None] | near[None, :]

    def to_json(self) -> str:
        return json.dumps(
            {
                "n_grid": self.n_grid,
                "kernel_half_width": self.half_width,
                "idempotency": self.idempotency(),
                "trace_defect": self.trace_defect(),
                "seam_periodicity": self.seam_periodicity,
                "min_lambda": float(self.lambda_field.min()),
                "max_second_eigenvalue": float(self.second_field.max()),
                "check_epsilon": self.check_epsilon,
                "D_bound": self.D_bound,
                "derivative_error": self.derivative_error,
                "max_defect_x": None if self.defects_x is None else float(self.defects_x.max()),
                "max_defect_y": None if self.defects_y is None else float(self.defects_y.max()),
                "max_defect_off_seam": self._off_seam_max(),
                **self.meta,
            },
            indent=2,
            sort_keys=True,
        )

    def _off_seam_max(self):
        if self.defects_x is None:
            return None
        m = ~self.seam_mask()
        return float(max(self.defects_x[m].max(initial=0.0), self.defects_y[m].max(initial=0.0)))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["theta_x", "theta_y", "lambda", "defect_x", "defect_y", "seam_adjacent"])
        seam = self.seam_mask()
        ts = self.thetas
        for i in range(self.n_grid):
            for j in range(self.n_grid):
                w.writerow(
                    [
                        repr(float(ts[i])),
                        repr(float(ts[j])),
                        repr(float(self.lambda_field[i, j])),
                        "" if self.defects_x is None else repr(float(self.defects_x[i, j])),
                        "" if self.defects_y is None else repr(float(self.defects_y[i, j])),
                        int(seam[i, j]),
                    ]
                )
        return buf.getvalue()


def smooth_and_project(O_field: np.ndarray, half_width: int, gf: GeneratorField | None = None) -> BundleField:
    """Smooth a periodic O field (n, n, d, d), or a closed one (n+1, n+1, d, d), and project.

    With ``gf`` the defects ||i[D, P] - dP|| are measured; dP uses centred
    differences at spacings h and 2h combined by Richardson extrapolation.
    """
    O = np.asarray(O_field)
    seam = 0.0
    if O.shape[0] == O.shape[1] and O.shape[0] >= 3 and _is_closed(O):
        seam = float(max(np.abs(O[-1] - O[0]).max(), np.abs(O[:, -1] - O[:, 0]).max()))
        O = O[:-1, :-1]
    n = O.shape[0]
    if half_width < 0 or int(half_width) != half_width:
        raise DomainError("kernel half-width must be a non-negative integer")
    if 2 * half_width + 1 >= n:
        raise DomainError("kernel wider than the mesh")
    Ot = _convolve(O, int(half_width))
    H = 0.5 * (Ot + np.conj(np.swapaxes(Ot, -1, -2)))
    w, v = np.linalg.eigh(H)
    lam, second = w[..., -1], w[..., -2]
    if (lam - second).min() < SPLIT_FLOOR:
        i, j = np.unravel_index(int(np.argmin(lam - second)), lam.shape)
        raise DegeneracyError("top eigenvalues of the smoothed operator are nearly degenerate", theta=(TWO_PI * i / n, TWO_PI * j / n))
    top = v[..., -1]
    P = np.einsum("ija,ijb->ijab", top, top.conj())
    bf = BundleField(n, int(half_width), O, Ot, P, top, lam, second, seam_periodicity=seam)
    if gf is not None:
        _defects(bf, gf)
    return bf


def _is_closed(O: np.ndarray) -> bool:
    # a closed mesh repeats its first row and column at the end
    return bool(np.allclose(O[-1], O[0], atol=1e-6) and np.allclose(O[:, -1], O[:, 0], atol=1e-6))


def _defects(bf: BundleField, gf: GeneratorField) -> None:
    n = bf.n_grid
    h = TWO_PI / n
    P = bf.P_field
    out, err, dmax = {}, 0.0, 0.0
    for ax, axis in ((0, "x"), (1, "y")):
        d1 = (np.roll(P, -1, axis=ax) - np.roll(P, 1, axis=ax)) / (2 * h)
        d2 = (np.roll(P, -2, axis=ax) - np.roll(P, 2, axis=ax)) / (4 * h)
        dP = (4 * d1 - d2) / 3
        err = max(err, float(np.abs(d1 - d2).max()) / 3)
        res = np.empty((n, n))
        for i in range(n):
            for j in range(n):
                D = gf.D(TWO_PI * i / n, TWO_PI * j / n, axis)
                dmax = max(dmax, float(np.linalg.norm(D, 2)))
                res[i, j] = np.linalg.norm(1j * (D @ P[i, j] - P[i, j] @ D) - dP[i, j], 2)
        out[axis] = res
    bf.defects_x, bf.defects_y = out["x"], out["y"]
    bf.derivative_error = err
    bf.D_bound = dmax


def build_bundle_field(
    family: FluxFamily,
    n_grid: int,
    alpha: float,
    half_width: int = 1,
    settings: IntegratorSettings = IntegratorSettings(),
    defects: bool = True,
) -> BundleField:
    """Four-path average, smoothing and projection on an n_grid x n_grid mesh."""
    gf = GeneratorField(family, alpha)
    O, min_ov = averaged_field(family, n_grid, alpha, settings, gf)
    seam = float(max(np.abs(O[-1] - O[0]).max(), np.abs(O[:, -1] - O[:, 0]).max()))
    bf = smooth_and_project(O[:-1, :-1], half_width, gf if defects else None)
    bf.seam_periodicity = seam
    bf.check_epsilon = float(np.sqrt(max(0.0, 1 - min_ov)))
    bf.meta = {"alpha": alpha, "family": getattr(family, "name", "")}
    return bf
