"""Cauchy-Green and Calderon-Zygmund transforms on the unit disk.

    T_CG g(z) = (1/2iπ)∬ g(ζ)/(ζ-z) dζ∧dζ̄ = (1/π)∬ g(ζ)/(z-ζ) dA
    T_CZ g(z) = p.v.(1/2iπ)∬ g(ζ)/(ζ-z)² dζ∧dζ̄

Both act diagonally on angular Fourier modes of a polar grid.  Writing
g = Σ g_m(ρ)e^{imφ}, the m-th input mode feeds the (m-1)-th output mode of
T_CG through

    F_m(r) =  2∫_0^r (ρ/r)^{1-m} g_m(ρ) dρ      (m ≤ 0)
    F_m(r) = -2∫_r^R (r/ρ)^{m-1} g_m(ρ) dρ      (m ≥ 1)

and the (m-2)-th output mode of T_CZ through (m-1)F_m(r)/r + g_m(r).  The
local term g_m(r) is what is left of the principal value once the antipodal
halves of the node's own ring cancel.  Radial kernels are integrated exactly
on every cell (half a cell on the node's own ring), g_m is frozen at the cell
center.
"""
import logging
from functools import lru_cache
from typing import Optional, Tuple

import numpy as np

from app.services.disk_grid import DiskGrid, GridFunction
from app.utils.errors import SchemaError

logger = logging.getLogger(__name__)

_SELF_CELL_TERMS = 400


@lru_cache(maxsize=8)
def _mode_weights(n_r: int, radius: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Signed radial quadrature matrices, one (n_r, n_r) block per FFT column."""
    n_theta = 4 * n_r
    h = radius / n_r
    modes = np.fft.fftfreq(n_theta, d=1.0 / n_theta).round().astype(int)
    # the two lowest modes would wrap onto positive frequencies after the shift
    active = modes >= -n_theta // 2 + 2
    r = ((np.arange(n_r) + 0.5) * h)[:, None]
    lo = (np.arange(n_r) * h)[None, :]
    hi = lo + h
    stack = np.zeros((n_theta, n_r, n_r))
    with np.errstate(all="ignore"):
        for k, m in enumerate(modes):
            if not active[k]:
                continue
            if m <= 0:
                valid = lo < r
                a, b, p = lo, np.minimum(hi, r), 2 - m
                w = 2.0 * r * ((b / r) ** p - (a / r) ** p) / p
            else:
                valid = hi > r
                a, b = np.maximum(lo, r), hi
                if m == 2:
                    w = r * np.log(b / a)
                else:
                    q = m - 2
                    w = r * ((r / a) ** q - (r / b) ** q) / q
                w = -2.0 * w
            stack[k] = np.where(valid, w, 0.0)
    return modes, active, stack


def _profiles(g: GridFunction):
    grid = g.grid
    if not grid.is_symmetric:
        raise SchemaError("grid lacks z -> -z symmetry")
    modes, active, stack = _mode_weights(grid.n_r, grid.radius)
    coeffs = np.fft.fft(g.values, axis=1) / grid.n_theta
    coeffs[:, ~active] = 0.0
    profiles = np.einsum("kij,jk->ik", stack, coeffs)
    return modes, active, coeffs, profiles


def _synthesize(grid: DiskGrid, modal: np.ndarray) -> np.ndarray:
    return np.fft.ifft(modal, axis=1) * grid.n_theta


def cauchy_green(g: GridFunction) -> GridFunction:
    grid = g.grid
    modes, active, _, profiles = _profiles(g)
    out = np.zeros(grid.shape, dtype=complex)
    cols = np.nonzero(active)[0]
    out[:, (modes[cols] - 1) % grid.n_theta] = profiles[:, cols]
    return GridFunction(grid, _synthesize(grid, out))


def calderon_zygmund(g: GridFunction) -> GridFunction:
    grid = g.grid
    modes, active, coeffs, profiles = _profiles(g)
    r = grid.ring_radii[:, None]
    out = np.zeros(grid.shape, dtype=complex)
    cols = np.nonzero(active)[0]
    out[:, (modes[cols] - 2) % grid.n_theta] = (
        (modes[cols] - 1)[None, :] * profiles[:, cols] / r + coeffs[:, cols]
    )
    return GridFunction(grid, _synthesize(grid, out))


def origin_values(g: GridFunction) -> Tuple[complex, complex]:
    """(T_CG g(0), T_CZ g(0)); the origin is not a grid node."""
    grid = g.grid
    coeffs = np.fft.fft(g.values, axis=1) / grid.n_theta
    g1 = coeffs[:, 1]
    g2 = coeffs[:, 2]
    cg = -2.0 * grid.h * np.sum(g1)
    cz = -2.0 * grid.h * np.sum(g2 / grid.ring_radii)
    return complex(cg), complex(cz)


def _self_cell_integrals(grid: DiskGrid) -> np.ndarray:
    """(1/π)∬_cell dA/(z-ζ) for the cell centered at each node."""
    r = grid.ring_radii
    a = r - grid.h / 2
    b = r + grid.h / 2
    half = grid.dtheta / 2
    k = np.arange(_SELF_CELL_TERMS + 1)
    s = np.empty(k.shape)
    s[0] = grid.dtheta
    s[1:] = 2.0 * np.sin(k[1:] * half) / k[1:]

    ratio_in = (a / r)[:, None]
    inner = r[:, None] ** 2 * (1.0 - ratio_in ** (k + 2)) / (k + 2)
    inner_sum = (inner * s[None, :]).sum(axis=1) / r

    kk = k[:-1]
    outer = np.empty((r.size, kk.size))
    outer[:, 0] = b - r
    outer[:, 1] = r * np.log(b / r)
    ratio_out = (r / b)[:, None]
    outer[:, 2:] = r[:, None] * (1.0 - ratio_out ** (kk[2:] - 1)) / (kk[2:] - 1)
    outer_sum = (outer * s[None, 1:]).sum(axis=1)

    per_ring = (inner_sum - outer_sum) / np.pi
    return per_ring[:, None] * np.conj(grid.phase)


def cauchy_green_direct(g: GridFunction) -> GridFunction:
    """Node-by-node quadrature of T_CG; O(N²), kept as an independent oracle."""
    grid = g.grid
    z = grid.nodes.ravel()
    w = (grid.weights * g.values).ravel()
    diff = z[:, None] - z[None, :]
    np.fill_diagonal(diff, 1.0)
    kernel = 1.0 / diff
    np.fill_diagonal(kernel, 0.0)
    values = (kernel @ w) / np.pi
    values += (_self_cell_integrals(grid) * g.values).ravel()
    return GridFunction(grid, values.reshape(grid.shape))


def relative_error(
    computed: GridFunction,
    expected: GridFunction,
    mask: Optional[np.ndarray] = None,
    p: int = 2,
) -> float:
    """Relative discrete L^p error over ``mask`` (default: computed's valid nodes)."""
    if not computed.grid.compatible(expected.grid):
        raise SchemaError("grid mismatch")
    m = computed.valid if mask is None else mask
    w = computed.grid.weights[m]
    diff = np.abs(computed.values[m] - expected.values[m]) ** p
    ref = np.abs(expected.values[m]) ** p
    denom = np.sum(w * ref) ** (1.0 / p)
    num = np.sum(w * diff) ** (1.0 / p)
    return float(num / denom) if denom > 0 else float(num)
