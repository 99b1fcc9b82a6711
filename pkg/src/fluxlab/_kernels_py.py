"""Pure numpy implementations of the hot kernels.

Same signatures as the compiled ``_kernels`` extension. ``fluxlab.kernels``
picks one of the two at import time.
"""

from __future__ import annotations

import numpy as np

# below this value of |omega| * alpha the closed form loses digits and the
# Taylor series takes over
SERIES_SWITCH = 1e-4


def rank_configs(configs: np.ndarray, table: np.ndarray, total: int) -> np.ndarray:
    """Lexicographic rank of each row of ``configs`` within its charge sector.

    ``table[i, rem, v]`` counts the sector configurations that agree with the
    row before site ``i``, carry ``rem`` units on sites ``i..`` and put fewer
    than ``v`` units on site ``i``.
    """
    configs = np.asarray(configs, dtype=np.int64)
    n, ns = configs.shape
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    before = np.cumsum(configs, axis=1) - configs
    rem = total - before
    site = np.broadcast_to(np.arange(ns), (n, ns))
    return table[site, rem, configs].sum(axis=1)


def filter_weight_matrix(evals: np.ndarray, alpha: float) -> np.ndarray:
    """Matrix of w(E_m - E_n) with w(omega) = i (1 - exp(-alpha^2 omega^2 / 2)) / omega."""
    evals = np.asarray(evals, dtype=float)
    om = evals[:, None] - evals[None, :]
    x = alpha * om
    small = np.abs(x) < SERIES_SWITCH
    safe = np.where(small, 1.0, om)
    big = -np.expm1(-0.5 * x * x) / safe
    # 1 - e^{-x^2/2} = x^2/2 - x^4/8 + ..., divided by omega
    ser = alpha * x * (0.5 - x * x / 8.0)
    return 1j * np.where(small, ser, big)


def assemble_dense(
    rows: np.ndarray,
    cols: np.ndarray,
    vals: np.ndarray,
    winds: np.ndarray,
    angles: np.ndarray,
    dim: int,
    deriv: np.ndarray,
) -> np.ndarray:
    """Scatter twisted matrix elements into a dense ``dim x dim`` array.

    Element k contributes ``vals[k] * exp(i winds[k] . angles)`` times the
    derivative prefactor ``prod_j (i winds[k, j]) ** deriv[j]``.
    """
    out = np.zeros(dim * dim, dtype=complex)
    if len(vals) == 0:
        return out.reshape(dim, dim)
    w = winds.astype(float)
    phase = np.exp(1j * (w @ angles))
    coef = vals * phase
    for j, k in enumerate(deriv):
        if k:
            coef = coef * (1j * w[:, j]) ** int(k)
    flat = rows.astype(np.int64) * dim + cols
    out.real = np.bincount(flat, weights=coef.real, minlength=dim * dim)
    out.imag = np.bincount(flat, weights=coef.imag, minlength=dim * dim)
    return out.reshape(dim, dim)


def reduced_density(
    psi: np.ndarray, inner: np.ndarray, outer: np.ndarray, d_in: int, d_out: int
) -> np.ndarray:
    """Reduced density matrix on a region from a sector state.

    ``inner[k]`` and ``outer[k]`` index the region and complement configuration
    of basis state k.
    """
    m = np.zeros((d_in, d_out), dtype=complex)
    m[inner, outer] = psi
    return m @ m.conj().T
