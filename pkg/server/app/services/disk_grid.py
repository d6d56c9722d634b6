"""Polar discretization of the disk Δ_r and complex samples living on it.

Nodes sit at the centers of the cells of a tensor polar grid: ``n_r`` rings of
width ``h = radius / n_r`` times ``n_theta = 4 * n_r`` equispaced angles
starting at θ = 0.  ``n_theta`` is even, so the node set is invariant under
z ↦ -z (column shift by ``n_theta // 2``), and the origin is never a node.
Weights are the exact cell areas, so they sum to π·radius².
"""
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Optional

import numpy as np
from scipy.interpolate import RectBivariateSpline

from app.utils.errors import NumericalFailureError, SchemaError

MIN_RESOLUTION = 8
_SPLINE_PAD = 3


@dataclass(frozen=True, eq=False)
class DiskGrid:
    resolution: int
    radius: float = 1.0

    @property
    def n_r(self) -> int:
        return self.resolution

    @property
    def n_theta(self) -> int:
        return 4 * self.resolution

    @property
    def h(self) -> float:
        return self.radius / self.n_r

    @property
    def dtheta(self) -> float:
        return 2.0 * np.pi / self.n_theta

    @property
    def shape(self):
        return (self.n_r, self.n_theta)

    @property
    def size(self) -> int:
        return self.n_r * self.n_theta

    @cached_property
    def ring_radii(self) -> np.ndarray:
        return (np.arange(self.n_r) + 0.5) * self.h

    @cached_property
    def ring_edges(self) -> np.ndarray:
        return np.arange(self.n_r + 1) * self.h

    @cached_property
    def angles(self) -> np.ndarray:
        return np.arange(self.n_theta) * self.dtheta

    @cached_property
    def nodes(self) -> np.ndarray:
        return self.ring_radii[:, None] * np.exp(1j * self.angles)[None, :]

    @cached_property
    def phase(self) -> np.ndarray:
        """e^{iθ} per node."""
        return np.broadcast_to(np.exp(1j * self.angles)[None, :], self.shape)

    @cached_property
    def weights(self) -> np.ndarray:
        return np.broadcast_to(
            (self.ring_radii * self.h * self.dtheta)[:, None], self.shape
        )

    @property
    def total_weight(self) -> float:
        return float(self.weights.sum())

    @cached_property
    def interior(self) -> np.ndarray:
        """Nodes with a full derivative stencil: every ring but the outermost."""
        mask = np.ones(self.shape, dtype=bool)
        mask[-1, :] = False
        return mask

    @property
    def is_symmetric(self) -> bool:
        return self.n_theta % 2 == 0

    def antipodal(self, values: np.ndarray) -> np.ndarray:
        """Values at -z for every node z."""
        return np.roll(values, -self.n_theta // 2, axis=1)

    def compatible(self, other: "DiskGrid") -> bool:
        return self is other or (
            self.resolution == other.resolution and self.radius == other.radius
        )


def build_grid(resolution: int, radius: float = 1.0) -> DiskGrid:
    if int(resolution) != resolution or resolution < MIN_RESOLUTION:
        raise SchemaError(
            f"resolution must be an integer >= {MIN_RESOLUTION}",
            {"resolution": resolution},
        )
    if not (0.0 < radius <= 1.0):
        raise SchemaError("radius must lie in (0, 1]", {"radius": radius})
    return DiskGrid(resolution=int(resolution), radius=float(radius))


@dataclass(frozen=True, eq=False)
class GridFunction:
    grid: DiskGrid
    values: np.ndarray
    mask: Optional[np.ndarray] = field(default=None)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=complex)
        if values.shape != self.grid.shape:
            raise SchemaError(
                "values do not match the grid",
                {"expected": list(self.grid.shape), "got": list(values.shape)},
            )
        if not np.all(np.isfinite(values)):
            raise NumericalFailureError("non-finite grid values")
        object.__setattr__(self, "values", values)

    @classmethod
    def zeros(cls, grid: DiskGrid) -> "GridFunction":
        return cls(grid, np.zeros(grid.shape, dtype=complex))

    @property
    def valid(self) -> np.ndarray:
        return np.ones(self.grid.shape, dtype=bool) if self.mask is None else self.mask

    def _check(self, other: "GridFunction") -> None:
        if not self.grid.compatible(other.grid):
            raise SchemaError("grid mismatch")

    def _combine_mask(self, other):
        if isinstance(other, GridFunction):
            if self.mask is None:
                return other.mask
            if other.mask is None:
                return self.mask
            return self.mask & other.mask
        return self.mask

    def _operand(self, other):
        if isinstance(other, GridFunction):
            self._check(other)
            return other.values
        return other

    def __add__(self, other):
        return GridFunction(self.grid, self.values + self._operand(other), self._combine_mask(other))

    __radd__ = __add__

    def __sub__(self, other):
        return GridFunction(self.grid, self.values - self._operand(other), self._combine_mask(other))

    def __mul__(self, other):
        return GridFunction(self.grid, self.values * self._operand(other), self._combine_mask(other))

    __rmul__ = __mul__

    def __neg__(self):
        return GridFunction(self.grid, -self.values, self.mask)

    def conj(self) -> "GridFunction":
        return GridFunction(self.grid, np.conj(self.values), self.mask)

    def with_mask(self, mask: Optional[np.ndarray]) -> "GridFunction":
        return GridFunction(self.grid, self.values, mask)

    def l2_norm(self, mask: Optional[np.ndarray] = None) -> float:
        """Discrete L² norm over the valid nodes."""
        m = self.valid if mask is None else mask
        return float(np.sqrt(np.sum(self.grid.weights[m] * np.abs(self.values[m]) ** 2)))

    def sup_norm(self, mask: Optional[np.ndarray] = None) -> float:
        m = self.valid if mask is None else mask
        return float(np.max(np.abs(self.values[m]))) if np.any(m) else 0.0

    @cached_property
    def _splines(self):
        grid = self.grid
        reflected = grid.antipodal(self.values)[:_SPLINE_PAD][::-1]
        stacked = np.vstack([reflected, self.values])
        radii = np.concatenate([-grid.ring_radii[:_SPLINE_PAD][::-1], grid.ring_radii])
        wrapped = np.hstack([stacked[:, -_SPLINE_PAD:], stacked, stacked[:, :_SPLINE_PAD]])
        angles = np.concatenate(
            [
                grid.angles[-_SPLINE_PAD:] - 2 * np.pi,
                grid.angles,
                grid.angles[:_SPLINE_PAD] + 2 * np.pi,
            ]
        )
        bbox = [radii[0], grid.radius, angles[0], angles[-1]]
        return (
            RectBivariateSpline(radii, angles, wrapped.real, bbox=bbox, kx=3, ky=3),
            RectBivariateSpline(radii, angles, wrapped.imag, bbox=bbox, kx=3, ky=3),
        )

    def evaluate(self, points) -> np.ndarray:
        """Bicubic interpolation at arbitrary points of the disk."""
        points = np.asarray(points, dtype=complex)
        r = np.minimum(np.abs(points).ravel(), self.grid.radius)
        theta = np.mod(np.angle(points).ravel(), 2 * np.pi)
        re, im = self._splines
        out = re.ev(r, theta) + 1j * im.ev(r, theta)
        return out.reshape(points.shape)


def sample(f: Callable[[np.ndarray], np.ndarray], grid: DiskGrid) -> GridFunction:
    values = np.broadcast_to(np.asarray(f(grid.nodes), dtype=complex), grid.shape)
    if not np.all(np.isfinite(values)):
        bad = np.argwhere(~np.isfinite(values))[0]
        raise NumericalFailureError(
            "sampled function is not finite on the grid",
            {"node": [float(grid.nodes[tuple(bad)].real), float(grid.nodes[tuple(bad)].imag)]},
        )
    return GridFunction(grid, np.array(values))


def _polar_derivatives(f: GridFunction):
    grid = f.grid
    if grid.n_r < 3:
        raise SchemaError("grid too coarse for the derivative stencil")
    v = f.values
    inner = grid.antipodal(v[:1])  # ring at radius -h/2 seen through the origin
    padded = np.vstack([inner, v])
    d_r = np.zeros_like(v)
    d_r[:-1] = (padded[2:] - padded[:-2]) / (2 * grid.h)
    d_theta = (np.roll(v, -1, axis=1) - np.roll(v, 1, axis=1)) / (2 * grid.dtheta)
    return d_r, d_theta


def finite_diff_dbar(f: GridFunction) -> GridFunction:
    """Second-order ∂/∂z̄ = ½e^{iθ}(∂_r + (i/r)∂_θ); outer ring flagged invalid."""
    grid = f.grid
    d_r, d_theta = _polar_derivatives(f)
    r = grid.ring_radii[:, None]
    values = 0.5 * grid.phase * (d_r + 1j * d_theta / r)
    values = np.where(grid.interior, values, 0.0)
    return GridFunction(grid, values, grid.interior)


def finite_diff_dz(f: GridFunction) -> GridFunction:
    """Second-order ∂/∂z = ½e^{-iθ}(∂_r - (i/r)∂_θ); outer ring flagged invalid."""
    grid = f.grid
    d_r, d_theta = _polar_derivatives(f)
    r = grid.ring_radii[:, None]
    values = 0.5 * np.conj(grid.phase) * (d_r - 1j * d_theta / r)
    values = np.where(grid.interior, values, 0.0)
    return GridFunction(grid, values, grid.interior)
