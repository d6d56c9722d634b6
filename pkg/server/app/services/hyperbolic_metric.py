"""Kobayashi-Royden metric of (Δ², J) and (Δ*×Δ, J): lower bounds, disk-search
upper estimates, calibration of the constants and path lengths."""
import hashlib
import json
import logging
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Tuple

import numpy as np

from app.models.pydantic_models import (
    Calibration,
    CoverName,
    MetricSample,
    PathLengthReport,
    SolveConfig,
    from_pair,
    to_pair,
)
from app.services.almost_complex import (
    AlmostComplexStructure,
    coefficients_from_structure,
)
from app.services.automorphisms import (
    branch_point,
    covering_punctured,
    covering_punctured_derivative,
    disk_automorphism,
    disk_automorphism_derivative,
)
from app.services.beltrami_solver import DiskMap, HolomorphicParts, check_target, solve_coupled
from app.services.disk_grid import DiskGrid, build_grid
from app.utils.config import get_settings
from app.utils.errors import BeltramiError, NumericalFailureError, OutOfRegimeError, SchemaError

logger = logging.getLogger(__name__)

# Exact values at J_st: the bidisk metric has C₁ = C₂ = 1 and the punctured
# disk metric |ξ|/(2|a|ln(1/|a|)) has K₁ = 1/2.
DEFAULT_CALIBRATION = Calibration(c1=1.0, c2=1.0, k1=0.5, sample_count=0, dataset_hash="")

_MAX_BRACKET_STEPS = 40

Point = Tuple[complex, complex]


def _in_disk(z: complex) -> bool:
    return abs(z) < 1.0


def lower_bound_bidisk(point: Point, direction: Point, c1: float, c2: float) -> float:
    a, b = complex(point[0]), complex(point[1])
    if not (_in_disk(a) and _in_disk(b)):
        raise SchemaError("point is not in the open bidisk", {"point": [to_pair(a), to_pair(b)]})
    xi, eta = complex(direction[0]), complex(direction[1])
    return max(c1 * abs(xi) / (1.0 - abs(a) ** 2), c2 * abs(eta) / (1.0 - abs(b) ** 2))


def lower_bound_punctured(
    point: Point,
    direction: Point,
    k1: float,
    c2: float = 1.0,
    validity_radius: Optional[float] = None,
) -> float:
    """max(K₁|ξ|/(|a| ln(1/|a|)), C₂|η|/(1-|b|²)) for 0 < |a| < r₀."""
    r0 = get_settings().punctured_validity_radius if validity_radius is None else validity_radius
    a, b = complex(point[0]), complex(point[1])
    if not 0.0 < abs(a) < r0:
        raise SchemaError(
            "punctured bound needs 0 < |a| < r0",
            {"a": to_pair(a), "validity_radius": r0},
        )
    if not _in_disk(b):
        raise SchemaError("second coordinate outside the disk", {"b": to_pair(b)})
    xi, eta = complex(direction[0]), complex(direction[1])
    first = k1 * abs(xi) / (abs(a) * np.log(1.0 / abs(a)))
    second = c2 * abs(eta) / (1.0 - abs(b) ** 2)
    return float(max(first, second))


@dataclass(frozen=True)
class _Seed:
    disk: DiskMap
    lift_sup: float


def _mobius_disk(center: complex, lam: complex):
    """z ↦ M_center(λz) with M_c(w) = (w + c)/(1 + c̄w)."""
    def value(z):
        return disk_automorphism(center, lam * np.asarray(z, dtype=complex))

    def deriv(z):
        return lam * disk_automorphism_derivative(center, lam * np.asarray(z, dtype=complex))

    return value, deriv


def _closed_disk_sup(center: complex, lam: complex) -> float:
    """sup over |z| ≤ 1 of |M_center(λz)|."""
    r, c = abs(lam), abs(center)
    return (r + c) / (1.0 + c * r)


def extremal_seed(
    grid: DiskGrid,
    point: Point,
    direction: Point,
    radius: float,
    domain: CoverName = CoverName.identity,
) -> _Seed:
    """Extremal holomorphic disk of the model domain with f(0) = point and
    f'(0) = radius·direction, parametrized by the unit disk."""
    a, b = complex(point[0]), complex(point[1])
    xi, eta = radius * complex(direction[0]), radius * complex(direction[1])
    lam_v = eta / (1.0 - abs(b) ** 2)
    v, dv = _mobius_disk(b, lam_v)
    if domain == CoverName.punctured:
        c = branch_point(a)
        scale = covering_punctured_derivative(c) * (1.0 - abs(c) ** 2)
        lam_u = xi / complex(scale)
        lifted, dlifted = _mobius_disk(c, lam_u)

        def u(z):
            return covering_punctured(lifted(z))

        def du(z):
            w = lifted(z)
            return covering_punctured_derivative(w) * dlifted(z)

        u_sup = _closed_disk_sup(c, lam_u)
    else:
        lam_u = xi / (1.0 - abs(a) ** 2)
        u, du = _mobius_disk(a, lam_u)
        u_sup = _closed_disk_sup(a, lam_u)
    lift_sup = max(u_sup, _closed_disk_sup(b, lam_v))
    if lift_sup >= 1.0:
        return _Seed(None, lift_sup)
    return _Seed(DiskMap.from_functions(grid, HolomorphicParts(u, du, v, dv)), lift_sup)


def _feasible(J, coefficients, grid, point, direction, radius, domain, cfg) -> bool:
    margin = cfg.containment_margin
    seed = extremal_seed(grid, point, direction, radius, domain)
    if seed.lift_sup >= 1.0 - margin:
        return False
    if coefficients[0].vanishes and coefficients[1].vanishes:
        return True
    try:
        f = solve_coupled(seed.disk, J, cfg, coefficients, punctured=domain == CoverName.punctured)
        check_target(f, margin, punctured=domain == CoverName.punctured)
    except BeltramiError as e:
        logger.debug("radius %.6g infeasible: %s", radius, e.message)
        return False
    return True


def royden_estimate(
    J: AlmostComplexStructure,
    point: Point,
    direction: Point,
    cfg: SolveConfig,
    grid: Optional[DiskGrid] = None,
    domain: CoverName = CoverName.identity,
    calibration: Optional[Calibration] = None,
    bisection_steps: Optional[int] = None,
) -> MetricSample:
    """Upper estimate inf 1/R over feasible J-holomorphic disks f: Δ(R) → domain
    with f(0) = point and d₀f = direction, plus the calibrated lower bound."""
    settings = get_settings()
    grid = grid or build_grid(settings.default_resolution)
    steps = settings.royden_bisection_steps if bisection_steps is None else bisection_steps
    cal = calibration or DEFAULT_CALIBRATION
    scale = max(abs(complex(direction[0])), abs(complex(direction[1])))
    if scale == 0:
        raise SchemaError("direction must be nonzero")
    coefficients = (coefficients_from_structure(J, 1), coefficients_from_structure(J, 2))

    def feasible(r):
        return _feasible(J, coefficients, grid, point, direction, r, domain, cfg)

    lo = 1.0 / scale
    tries = 0
    while not feasible(lo):
        lo /= 2.0
        tries += 1
        if tries > _MAX_BRACKET_STEPS:
            raise OutOfRegimeError(
                "no feasible disk radius",
                {"point": [to_pair(p) for p in point], "smallest_radius": lo},
            )
    hi = 2.0 * lo
    tries = 0
    while feasible(hi):
        lo, hi = hi, 2.0 * hi
        tries += 1
        if tries > _MAX_BRACKET_STEPS:
            raise NumericalFailureError("feasible radii unbounded", {"radius": lo})
    for _ in range(steps):
        mid = 0.5 * (lo + hi)
        if feasible(mid):
            lo = mid
        else:
            hi = mid
    upper = 1.0 / lo
    if domain == CoverName.punctured:
        lower = lower_bound_punctured(point, direction, cal.k1, cal.c2)
    else:
        lower = lower_bound_bidisk(point, direction, cal.c1, cal.c2)
    sample = MetricSample(
        point=(to_pair(point[0]), to_pair(point[1])),
        direction=(to_pair(direction[0]), to_pair(direction[1])),
        lower_bound=lower,
        upper_estimate=upper,
        grid_resolution=grid.resolution,
        domain=domain,
        radius=lo,
        bisection_steps=steps,
    )
    sample.accepted = sample.consistent(settings.metric_slack)
    return sample


def dataset_hash(samples: Sequence[MetricSample]) -> str:
    payload = [
        {"point": s.point, "direction": s.direction, "domain": s.domain.value, "resolution": s.grid_resolution}
        for s in samples
    ]
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def calibrate_constants(samples: Sequence[MetricSample]) -> Calibration:
    """Largest C₁, C₂, K₁ keeping lower ≤ upper on every sample."""
    c1, c2, k1 = [], [], []
    for s in samples:
        a, b = (from_pair(p) for p in s.point)
        xi, eta = (from_pair(p) for p in s.direction)
        upper = s.upper_estimate
        if abs(xi) > 0:
            if s.domain == CoverName.punctured:
                k1.append(upper * abs(a) * np.log(1.0 / abs(a)) / abs(xi))
            else:
                c1.append(upper * (1.0 - abs(a) ** 2) / abs(xi))
        if abs(eta) > 0:
            c2.append(upper * (1.0 - abs(b) ** 2) / abs(eta))
    return Calibration(
        c1=float(min(c1)) if c1 else DEFAULT_CALIBRATION.c1,
        c2=float(min(c2)) if c2 else DEFAULT_CALIBRATION.c2,
        k1=float(min(k1)) if k1 else DEFAULT_CALIBRATION.k1,
        sample_count=len(samples),
        dataset_hash=dataset_hash(samples),
    )


Metric = Callable[[Point, Point], float]


def path_length(
    path: np.ndarray,
    metric: Metric,
    domain: CoverName = CoverName.identity,
) -> float:
    """Midpoint-rule length of a sampled path (N×2 complex) under ``metric``."""
    path = np.asarray(path, dtype=complex)
    if path.ndim != 2 or path.shape[1] != 2:
        raise SchemaError("path must be an array of (z1, z2) samples")
    a, b = path[:, 0], path[:, 1]
    inside = (np.abs(a) < 1.0) & (np.abs(b) < 1.0)
    if domain == CoverName.punctured:
        inside &= np.abs(a) > 0.0
    if not np.all(inside):
        raise SchemaError("path exits the domain", {"first_outside": int(np.argmin(inside))})
    total = 0.0
    for k in range(len(path) - 1):
        mid = 0.5 * (path[k] + path[k + 1])
        step = path[k + 1] - path[k]
        if np.all(step == 0):
            continue
        total += metric((mid[0], mid[1]), (step[0], step[1]))
    return float(total)


def radial_path(start: float, stop: float, samples_per_decade: int = 400) -> np.ndarray:
    """a(t) = t from ``start`` down to ``stop``, b = 0, log-spaced."""
    decades = max(np.log10(start / stop), 1e-12)
    n = max(int(np.ceil(decades * samples_per_decade)), 2) + 1
    t = np.geomspace(start, stop, n)
    return np.stack([t.astype(complex), np.zeros(n, dtype=complex)], axis=1)


def punctured_path_lengths(
    truncations: Sequence[float],
    k1: float,
    start: Optional[float] = None,
    samples_per_decade: int = 400,
) -> PathLengthReport:
    """Partial lengths of a(t) = t, t ∈ [δ, start], under the punctured lower bound."""
    r0 = get_settings().punctured_validity_radius
    start = r0 if start is None else start

    def metric(p, d):
        return lower_bound_punctured(p, d, k1, validity_radius=np.nextafter(start, np.inf))

    lengths, expected = [], []
    for delta in sorted(truncations, reverse=True):
        if not 0.0 < delta < start:
            raise SchemaError("truncation must lie in (0, start)", {"delta": delta})
        path = radial_path(start, delta, samples_per_decade)
        lengths.append(path_length(path, metric, CoverName.punctured))
        expected.append(k1 * (np.log(np.log(1.0 / delta)) - np.log(np.log(1.0 / start))))
    return PathLengthReport(
        truncations=sorted(truncations, reverse=True),
        lengths=lengths,
        expected=[float(e) for e in expected],
    )
