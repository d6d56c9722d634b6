"""Sampled Schwarz-type constants for J-holomorphic disks and Brody's
reparametrization.

Scans report finite-sample sups, which are lower bounds for the true sups.
Every sample draws from its own generator keyed by (seed, index), so a scan
with more samples extends the same stream.
"""
import logging
from dataclasses import dataclass, replace
from typing import Callable, List, Optional, Tuple

import numpy as np

from app.models.pydantic_models import CoverName, ScanReport, SolveConfig, to_pair
from app.services.almost_complex import (
    AlmostComplexStructure,
    coefficients_from_structure,
    pullback_coefficients,
)
from app.services.automorphisms import disk_automorphism, disk_automorphism_derivative, get_cover, punctured_chain_factor
from app.services.beltrami_solver import DiskMap, HolomorphicParts, check_target, neumann_solve, solve_coupled
from app.services.disk_grid import DiskGrid, GridFunction, build_grid
from app.utils.config import get_settings
from app.utils.errors import BeltramiError, NumericalFailureError, SchemaError

logger = logging.getLogger(__name__)

BASE_POINT_RADIUS = 0.9
PUNCTURED_GAUGE_RADIUS = 0.5
_MAGNITUDE_EXPONENT = 1.0 / 8.0


def sample_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index,)))


def _uniform_disk(rng: np.random.Generator, radius: float) -> complex:
    r = radius * np.sqrt(rng.uniform())
    return complex(r * np.exp(2j * np.pi * rng.uniform()))


def _unit_direction(rng: np.random.Generator, restricted: bool) -> Tuple[complex, complex]:
    if restricted:
        return complex(np.exp(2j * np.pi * rng.uniform())), 0j
    x = rng.normal(size=4)
    x /= np.linalg.norm(x)
    return complex(x[0], x[1]), complex(x[2], x[3])


def _magnitude(rng: np.random.Generator, cap: float) -> float:
    # skewed toward the cap so near-extremal disks show up
    return float(cap * rng.uniform() ** _MAGNITUDE_EXPONENT)


def _scan_grid(grid: Optional[DiskGrid]) -> DiskGrid:
    return grid or build_grid(get_settings().default_resolution)


def gromov_scan(
    J: AlmostComplexStructure,
    n_samples: int,
    cfg: SolveConfig,
    seed: int,
    grid: Optional[DiskGrid] = None,
    direction_restricted: bool = False,
) -> ScanReport:
    """sup of ‖df(0)‖ over solved disks with random linear jets into Δ²."""
    grid = _scan_grid(grid)
    coefficients = (coefficients_from_structure(J, 1), coefficients_from_structure(J, 2))
    margin = cfg.containment_margin
    best = 0.0
    per_sample = []
    failures = []
    for i in range(n_samples):
        rng = sample_rng(seed, i)
        a = _uniform_disk(rng, BASE_POINT_RADIUS)
        b = _uniform_disk(rng, BASE_POINT_RADIUS)
        xi, eta = _unit_direction(rng, direction_restricted)
        caps = [(1.0 - margin - abs(a)) / abs(xi)]
        if abs(eta) > 0:
            caps.append((1.0 - margin - abs(b)) / abs(eta))
        t = _magnitude(rng, min(caps))
        seed_map = DiskMap.from_holomorphic(grid, [a, t * xi], [b, t * eta])
        try:
            f = solve_coupled(seed_map, J, cfg, coefficients)
        except BeltramiError as e:
            failures.append({"index": i, "error": type(e).__name__, "message": e.message})
            continue
        norm = f.differential_norm()
        best = max(best, norm)
        per_sample.append(
            {
                "index": i,
                "point": [to_pair(a), to_pair(b)],
                "direction": [to_pair(xi), to_pair(eta)],
                "magnitude": t,
                "norm": norm,
                "residual": f.residual,
            }
        )
    feasible = len(per_sample)
    if feasible < n_samples / 2:
        raise NumericalFailureError(
            "too few feasible disks",
            {"feasible": feasible, "n_samples": n_samples, "failures": failures[:10]},
        )
    return ScanReport(
        kind="gromov",
        value=best,
        n_samples=n_samples,
        n_feasible=feasible,
        seed=seed,
        epsilon=J.epsilon,
        mu_bound=max(coefficients[0].bound, coefficients[1].bound),
        failures=failures,
        per_sample=per_sample,
    )


def gauge_points(cover: CoverName) -> List[complex]:
    """Gauge parameters swept by gauge_scan: the origin plus three rings."""
    top = PUNCTURED_GAUGE_RADIUS if cover == CoverName.punctured else 0.75
    points = [0j]
    for k, r in enumerate(np.linspace(top / 3, top, 3)):
        count = 4 * (k + 1)
        points.extend(complex(r * np.exp(2j * np.pi * (j + 0.5 * k) / count)) for j in range(count))
    return points


def gauge_scan(
    J: AlmostComplexStructure,
    cover: CoverName,
    n_samples: int,
    cfg: SolveConfig,
    seed: int,
    grid: Optional[DiskGrid] = None,
) -> ScanReport:
    """Empirical K = sup ‖dw(0)‖ over solutions of the pulled-back equation with
    w(0) = 0, sweeping the gauge a over gauge_points(cover)."""
    grid = _scan_grid(grid)
    cover = CoverName(cover)
    covering = get_cover(cover.value)
    mu_u = coefficients_from_structure(J, 1)
    gauges = gauge_points(cover)
    margin = cfg.containment_margin
    best = 0.0
    normalized = 0.0
    per_sample = []
    failures = []
    for i in range(n_samples):
        rng = sample_rng(seed, i)
        a = gauges[i % len(gauges)]
        theta = rng.uniform()
        lam = _magnitude(rng, 1.0 - margin) * np.exp(2j * np.pi * theta)
        b = _uniform_disk(rng, 0.5)
        beta = _uniform_disk(rng, 1.0 - margin - abs(b))
        param = DiskMap.from_holomorphic(grid, [b, beta]).u
        seed_map = DiskMap.from_holomorphic(grid, [0j, lam])
        try:
            mu_pi = pullback_coefficients(mu_u, covering, a)
            w = neumann_solve(seed_map, mu_pi, param, cfg)
            check_target(w, 0.0)
        except BeltramiError as e:
            failures.append({"index": i, "gauge": to_pair(a), "error": type(e).__name__, "message": e.message})
            continue
        w0, dw0 = w.jets[0], w.jets[1]
        dbar_w0 = w.origin_dbar[0]
        norm = abs(dw0) + abs(dbar_w0)
        best = max(best, norm)
        value_map, derivative = covering.composed_with_mobius(a)
        u0 = complex(value_map(w0))
        pi_prime = complex(derivative(w0))
        du0, dbar_u0 = pi_prime * dw0, pi_prime * dbar_w0
        record = {
            "index": i,
            "gauge": to_pair(a),
            "lambda": to_pair(lam),
            "norm": norm,
            "u0": to_pair(u0),
            "residual": w.residual,
        }
        if cover == CoverName.identity:
            q = (abs(du0) + abs(dbar_u0)) / (1.0 - abs(u0) ** 2)
            normalized = max(normalized, q)
            record["gauge_normalized"] = q
        else:
            expected = punctured_chain_factor(u0) * du0
            record["chain_computed"] = to_pair(dw0)
            record["chain_expected"] = to_pair(expected)
            record["chain_error"] = abs(expected - dw0)
        per_sample.append(record)
    return ScanReport(
        kind="gauge",
        value=best,
        n_samples=n_samples,
        n_feasible=len(per_sample),
        seed=seed,
        epsilon=J.epsilon,
        mu_bound=mu_u.bound,
        cover=cover,
        normalized_max=normalized if cover == CoverName.identity else None,
        partial=bool(failures),
        failures=failures,
        per_sample=per_sample,
    )


@dataclass(frozen=True)
class _MapView:
    """Evaluation and Wirtinger derivatives of f on Δ(radius) as callables."""

    radius: float
    values: Callable[[np.ndarray], Tuple[np.ndarray, np.ndarray]]
    derivs: Callable[[np.ndarray], Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]]
    exact: Optional[HolomorphicParts] = None

    @classmethod
    def of(cls, f: DiskMap) -> "_MapView":
        return cls(f.radius, f.evaluate, f.derivatives, f.exact)

    def compose(self, psi, dpsi, radius: float) -> "_MapView":
        """f∘ψ for a holomorphic ψ: Δ(radius) → Δ(self.radius)."""
        def values(z):
            return self.values(psi(z))

        def derivs(z):
            w, d = psi(z), dpsi(z)
            du, dbu, dv, dbv = self.derivs(w)
            return du * d, dbu * np.conj(d), dv * d, dbv * np.conj(d)

        exact = None
        if self.exact is not None:
            e = self.exact
            exact = HolomorphicParts(
                lambda z: e.u(psi(z)),
                lambda z: e.du(psi(z)) * dpsi(z),
                lambda z: e.v(psi(z)),
                lambda z: e.dv(psi(z)) * dpsi(z),
            )
        return _MapView(radius, values, derivs, exact)

    def weighted_gradient(self, points) -> np.ndarray:
        """‖d_z f(∂/∂x)‖·(R² - |z|²)/R² with the polydisk max-norm."""
        points = np.asarray(points, dtype=complex)
        du, dbu, dv, dbv = self.derivs(points)
        speed = np.maximum(np.abs(du + dbu), np.abs(dv + dbv))
        return speed * (self.radius ** 2 - np.abs(points) ** 2) / self.radius ** 2

    def to_disk_map(self, grid: DiskGrid) -> DiskMap:
        if self.exact is not None:
            return DiskMap.from_functions(grid, self.exact, self.radius)
        z = self.radius * grid.nodes
        u, v = self.values(z)
        du, dbu, dv, dbv = self.derivs(z)
        origin = np.zeros(1, dtype=complex)
        u0, v0 = (np.ravel(x)[0] for x in self.values(origin))
        d0 = [complex(np.ravel(x)[0]) for x in self.derivs(origin)]
        r = self.radius
        return DiskMap(
            grid=grid,
            u=GridFunction(grid, u),
            du=GridFunction(grid, r * du),
            dbar_u=GridFunction(grid, r * dbu),
            v=GridFunction(grid, v),
            dv=GridFunction(grid, r * dv),
            dbar_v=GridFunction(grid, r * dbv),
            jets=(complex(u0), d0[0], complex(v0), d0[2]),
            origin_dbar=(d0[1], d0[3]),
            radius=r,
        )


def weighted_gradient(f: DiskMap, points) -> np.ndarray:
    return _MapView.of(f).weighted_gradient(points)


def brody_reparametrize(
    f: DiskMap,
    c: float,
    max_relocations: Optional[int] = None,
    grid: Optional[DiskGrid] = None,
) -> DiskMap:
    """f̃ = f∘ψ∘(t·) whose weighted gradient peaks at 0 with value c.

    ψ relocates the current maximizer to the origin; t = c/W(0) then fixes the
    peak value, enlarging the domain to Δ(R/t).
    """
    cap = get_settings().brody_max_relocations if max_relocations is None else max_relocations
    grid = grid or f.grid
    if not c > 0:
        raise SchemaError("target value must be positive", {"c": c})
    view = _MapView.of(f)
    w0 = float(view.weighted_gradient(np.zeros(1, dtype=complex))[0])
    if w0 < c:
        raise SchemaError("weighted gradient at the origin is below c", {"value": w0, "c": c})
    R = view.radius
    tolerance = 2.0 * grid.h * R
    for k in range(cap + 1):
        points = np.concatenate([[0j], R * grid.nodes.ravel()])
        profile = view.weighted_gradient(points)
        best = int(np.argmax(profile))
        z_star = points[best]
        if abs(z_star) <= tolerance:
            break
        if k == cap:
            raise NumericalFailureError(
                "Brody relocation did not converge",
                {"relocations": cap, "maximizer": to_pair(z_star)},
            )
        a = z_star / R
        logger.debug("relocating maximizer %s", z_star)
        view = view.compose(
            lambda z, a=a, R=R: R * disk_automorphism(a, np.asarray(z) / R),
            lambda z, a=a, R=R: disk_automorphism_derivative(a, np.asarray(z) / R),
            R,
        )
    peak = float(view.weighted_gradient(np.zeros(1, dtype=complex))[0])
    t = c / peak
    if t != 1.0:
        view = view.compose(lambda z, t=t: t * np.asarray(z), lambda z, t=t: t + 0 * np.asarray(z), R / t)
    out = view.to_disk_map(grid)
    return replace(out, diagnostics={"relocations": k, "scale": t, "peak": c})
