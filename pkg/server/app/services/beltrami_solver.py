"""Picard/Neumann solver for ∂̄u = μ¹(z, v, u)∂u + μ²(z, v, u)conj(∂u) on Δ.

The unknown is g = ∂̄u.  Given g the map is rebuilt as

    u = h + α + βz + T_CG g,        ∂u = h' + β + T_CZ g,

with h the holomorphic seed and α, β chosen so that u(0) and ∂u(0) keep the
seed's values.  The update g ← μ¹∂u + μ²conj(∂u) is the Neumann series for
[Id - μ¹T_CZ - μ²σT_CZ]⁻¹ written as a fixed-point iteration.
"""
import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Optional, Sequence, Tuple

import numpy as np
from numpy.polynomial import polynomial as P

from app.models.pydantic_models import SolveConfig
from app.services.almost_complex import (
    AlmostComplexStructure,
    BeltramiCoefficients,
    coefficients_from_structure,
)
from app.services.disk_grid import (
    DiskGrid,
    GridFunction,
    finite_diff_dbar,
    finite_diff_dz,
)
from app.services.integral_ops import calderon_zygmund, cauchy_green, origin_values
from app.utils.errors import (
    NumericalFailureError,
    OutOfRegimeError,
    SchemaError,
    TargetViolationError,
)

logger = logging.getLogger(__name__)

_NON_CONTRACTION_STREAK = 3


@dataclass(frozen=True)
class HolomorphicParts:
    """Closed-form holomorphic components and their complex derivatives."""

    u: Callable[[np.ndarray], np.ndarray]
    du: Callable[[np.ndarray], np.ndarray]
    v: Callable[[np.ndarray], np.ndarray]
    dv: Callable[[np.ndarray], np.ndarray]

    @classmethod
    def polynomial(cls, u_coeffs: Sequence[complex], v_coeffs: Sequence[complex]) -> "HolomorphicParts":
        cu = np.atleast_1d(np.asarray(u_coeffs, dtype=complex))
        cv = np.atleast_1d(np.asarray(v_coeffs, dtype=complex))
        dcu = P.polyder(cu) if cu.size > 1 else np.zeros(1, dtype=complex)
        dcv = P.polyder(cv) if cv.size > 1 else np.zeros(1, dtype=complex)
        return cls(
            lambda z: P.polyval(np.asarray(z, dtype=complex), cu),
            lambda z: P.polyval(np.asarray(z, dtype=complex), dcu),
            lambda z: P.polyval(np.asarray(z, dtype=complex), cv),
            lambda z: P.polyval(np.asarray(z, dtype=complex), dcv),
        )


@dataclass(frozen=True, eq=False)
class DiskMap:
    """A sampled map f = (u, v) from Δ(radius) into ℂ².

    Samples live on a unit-disk grid as F(ζ) = f(radius·ζ); ``du`` and
    ``dbar_u`` are the Wirtinger derivatives of F.  ``jets`` holds
    (u(0), ∂u(0), v(0), ∂v(0)) and ``origin_dbar`` (∂̄u(0), ∂̄v(0)) in the
    coordinates of Δ(radius).  ``exact`` is set for closed-form holomorphic
    disks and takes precedence over interpolation.
    """

    grid: DiskGrid
    u: GridFunction
    du: GridFunction
    dbar_u: GridFunction
    v: Optional[GridFunction] = None
    dv: Optional[GridFunction] = None
    dbar_v: Optional[GridFunction] = None
    residual: float = 0.0
    residual_u: float = 0.0
    residual_v: float = 0.0
    jets: Tuple[complex, complex, complex, complex] = (0j, 0j, 0j, 0j)
    origin_dbar: Tuple[complex, complex] = (0j, 0j)
    history: Tuple[float, ...] = ()
    contraction: float = 0.0
    radius: float = 1.0
    exact: Optional[HolomorphicParts] = None
    diagnostics: Dict[str, Any] = field(default_factory=dict)

    @classmethod
    def from_functions(cls, grid: DiskGrid, parts: HolomorphicParts, radius: float = 1.0) -> "DiskMap":
        if radius <= 0:
            raise SchemaError("disk radius must be positive", {"radius": radius})
        z = radius * grid.nodes
        zero = GridFunction.zeros(grid)

        def sampled(fn, scale=1.0):
            return GridFunction(grid, scale * np.broadcast_to(fn(z), grid.shape))

        origin = np.zeros(1, dtype=complex)
        return cls(
            grid=grid,
            u=sampled(parts.u),
            du=sampled(parts.du, radius),
            dbar_u=zero,
            v=sampled(parts.v),
            dv=sampled(parts.dv, radius),
            dbar_v=zero,
            jets=tuple(complex(np.ravel(fn(origin))[0]) for fn in (parts.u, parts.du, parts.v, parts.dv)),
            radius=float(radius),
            exact=parts,
        )

    @classmethod
    def from_holomorphic(
        cls,
        grid: DiskGrid,
        u_coeffs: Sequence[complex],
        v_coeffs: Optional[Sequence[complex]] = (0j,),
        radius: float = 1.0,
    ) -> "DiskMap":
        """Polynomial disk z ↦ (Σ a_k z^k, Σ b_k z^k) on Δ(radius)."""
        parts = HolomorphicParts.polynomial(u_coeffs, v_coeffs if v_coeffs is not None else (0j,))
        return cls.from_functions(grid, parts, radius)

    @property
    def resolution(self) -> int:
        return self.grid.resolution

    def second(self) -> Tuple[GridFunction, GridFunction, GridFunction]:
        zero = GridFunction.zeros(self.grid)
        return (
            self.v if self.v is not None else zero,
            self.dv if self.dv is not None else zero,
            self.dbar_v if self.dbar_v is not None else zero,
        )

    def evaluate(self, points) -> Tuple[np.ndarray, np.ndarray]:
        """(u, v) at points of Δ(radius)."""
        points = np.asarray(points, dtype=complex)
        if self.exact is not None:
            return self.exact.u(points) + 0 * points, self.exact.v(points) + 0 * points
        zeta = points / self.radius
        v = self.second()[0]
        return self.u.evaluate(zeta), v.evaluate(zeta)

    def derivatives(self, points) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """(∂u, ∂̄u, ∂v, ∂̄v) at points of Δ(radius)."""
        points = np.asarray(points, dtype=complex)
        if self.exact is not None:
            zero = np.zeros(points.shape, dtype=complex)
            return self.exact.du(points) + zero, zero, self.exact.dv(points) + zero, zero
        zeta = points / self.radius
        _, dv, dbar_v = self.second()
        scale = 1.0 / self.radius
        return (
            scale * self.du.evaluate(zeta),
            scale * self.dbar_u.evaluate(zeta),
            scale * dv.evaluate(zeta),
            scale * dbar_v.evaluate(zeta),
        )

    def differential_norm(self) -> float:
        """‖df(0)‖ = max over components of |∂f_i(0)| + |∂̄f_i(0)|."""
        _, du0, _, dv0 = self.jets
        return max(abs(du0) + abs(self.origin_dbar[0]), abs(dv0) + abs(self.origin_dbar[1]))

    def sup_modulus(self) -> Tuple[float, float]:
        v = self.second()[0]
        return self.u.sup_norm(np.ones(self.grid.shape, bool)), v.sup_norm(np.ones(self.grid.shape, bool))


def _param_values(grid: DiskGrid, v: Optional[GridFunction]) -> np.ndarray:
    if v is None:
        return np.zeros(grid.shape, dtype=complex)
    if not v.grid.compatible(grid):
        raise SchemaError("grid mismatch")
    return v.values


def residual(
    u: GridFunction,
    v: Optional[GridFunction],
    mu: BeltramiCoefficients,
    *,
    dz: Optional[GridFunction] = None,
    dzbar: Optional[GridFunction] = None,
) -> GridFunction:
    """∂̄u - μ¹(z, v, u)∂u - μ²(z, v, u)conj(∂u).

    Derivatives default to finite differences, in which case the outer ring
    is masked out.
    """
    grid = u.grid
    pv = _param_values(grid, v)
    dz = finite_diff_dz(u) if dz is None else dz
    dzbar = finite_diff_dbar(u) if dzbar is None else dzbar
    if not (dz.grid.compatible(grid) and dzbar.grid.compatible(grid)):
        raise SchemaError("grid mismatch")
    m1, m2 = mu.evaluate(grid.nodes, pv, u.values)
    values = dzbar.values - m1 * dz.values - m2 * np.conj(dz.values)
    mask = dz._combine_mask(dzbar)
    if mask is not None:
        values = np.where(mask, values, 0.0)
    return GridFunction(grid, values, mask)


def relative_norm(res: GridFunction, dz: GridFunction) -> float:
    num = res.l2_norm()
    den = dz.l2_norm(res.valid)
    return num / den if den > 1e-300 else num


@dataclass(frozen=True, eq=False)
class Cutoff(GridFunction):
    """Radial bump ρ with its analytic Wirtinger derivatives."""

    dz: Optional[GridFunction] = None
    dzbar: Optional[GridFunction] = None
    inner_radius: float = 0.75


def _psi(t):
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    pos = t > 0
    out[pos] = np.exp(-1.0 / t[pos])
    return out


def _psi_prime(t):
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    pos = t > 0
    out[pos] = np.exp(-1.0 / t[pos]) / t[pos] ** 2
    return out


def cutoff_profile(r, inner_radius: float) -> Tuple[np.ndarray, np.ndarray]:
    """(ρ(r), ρ'(r)): C^∞, 1 on [0, inner_radius], 0 from r = 1 on."""
    if not 0.0 < inner_radius < 1.0:
        raise SchemaError("inner_radius must lie in (0, 1)", {"inner_radius": inner_radius})
    s = (np.asarray(r, dtype=float) - inner_radius) / (1.0 - inner_radius)
    a, b = _psi(1.0 - s), _psi(s)
    da, db = _psi_prime(1.0 - s), _psi_prime(s)
    total = a + b
    rho = a / total
    drho = -(da * b + a * db) / total ** 2 / (1.0 - inner_radius)
    return rho, drho


def build_cutoff(grid: DiskGrid, inner_radius: float) -> Cutoff:
    rho, drho = cutoff_profile(grid.ring_radii, inner_radius)
    values = np.broadcast_to(rho[:, None], grid.shape)
    radial = np.broadcast_to(drho[:, None], grid.shape)
    dz = GridFunction(grid, 0.5 * np.conj(grid.phase) * radial)
    dzbar = GridFunction(grid, 0.5 * grid.phase * radial)
    return Cutoff(grid, np.array(values, dtype=complex), None, dz, dzbar, inner_radius)


def localized_source(
    h: GridFunction,
    mu_values: Tuple[GridFunction, GridFunction],
    rho: Cutoff,
) -> GridFunction:
    """h·g₁ + h̄·g₂ with g₁ = ∂̄ρ - μ¹∂ρ and g₂ = -μ²conj(∂ρ)."""
    mu1, mu2 = mu_values
    g1 = rho.dzbar - mu1 * rho.dz
    g2 = -(mu2 * rho.dz.conj())
    return h * g1 + h.conj() * g2


def localized_residual(
    h: GridFunction,
    dz: GridFunction,
    dzbar: GridFunction,
    mu_values: Tuple[GridFunction, GridFunction],
    rho: Cutoff,
) -> GridFunction:
    """[Id - μ¹T_CZ - μ²σT_CZ]∂̄(ρh) minus the localized source."""
    mu1, mu2 = mu_values
    dbar_rho_h = rho * dzbar + h * rho.dzbar
    cz = calderon_zygmund(dbar_rho_h)
    lhs = dbar_rho_h - mu1 * cz - mu2 * cz.conj()
    return lhs - localized_source(h, mu_values, rho)


def localized_relative_residual(
    h: GridFunction,
    dz: GridFunction,
    dzbar: GridFunction,
    mu_values: Tuple[GridFunction, GridFunction],
    rho: Cutoff,
) -> float:
    """Localized residual relative to ∂̄(ρh)."""
    scale = (rho * dzbar + h * rho.dzbar).l2_norm()
    res = localized_residual(h, dz, dzbar, mu_values, rho).l2_norm()
    return float(res / scale) if scale > 0 else float(res)


def coefficient_values(
    mu: BeltramiCoefficients, u: GridFunction, v: Optional[GridFunction]
) -> Tuple[GridFunction, GridFunction]:
    grid = u.grid
    m1, m2 = mu.evaluate(grid.nodes, _param_values(grid, v), u.values)
    return GridFunction(grid, m1), GridFunction(grid, m2)


@dataclass(frozen=True, eq=False)
class _ComponentSolution:
    values: GridFunction
    dz: GridFunction
    dzbar: GridFunction
    jet: Tuple[complex, complex]
    origin_dbar: complex
    residual: float
    relative_residual: float
    history: Tuple[float, ...]
    contraction: float


def _check_regime(mu: BeltramiCoefficients, cfg: SolveConfig) -> None:
    if not mu.bound < cfg.mu_bound_limit:
        raise OutOfRegimeError(
            "Beltrami coefficients exceed the solver bound",
            {"mu_bound": mu.bound, "limit": cfg.mu_bound_limit},
        )


def _solve_scalar(
    hol: GridFunction,
    hol_dz: GridFunction,
    jet: Tuple[complex, complex],
    mu: BeltramiCoefficients,
    param: Optional[GridFunction],
    cfg: SolveConfig,
    g0: Optional[np.ndarray] = None,
    param_origin: Optional[complex] = None,
) -> _ComponentSolution:
    grid = hol.grid
    z = grid.nodes
    pv = _param_values(grid, param)
    p0 = _origin_param(param) if param_origin is None else param_origin
    g = np.zeros(grid.shape, dtype=complex) if g0 is None else g0
    history = []
    ratios = []
    streak = 0
    for it in range(cfg.max_iterations):
        gf = GridFunction(grid, g)
        cg = cauchy_green(gf)
        cz = calderon_zygmund(gf)
        cg0, cz0 = origin_values(gf)
        alpha, beta = -cg0, -cz0
        u = hol.values + alpha + beta * z + cg.values
        du = hol_dz.values + beta + cz.values
        m1, m2 = mu.evaluate(z, pv, u)
        g_new = m1 * du + m2 * np.conj(du)
        res = GridFunction(grid, g - g_new)
        du_f = GridFunction(grid, du)
        rel = relative_norm(res, du_f)
        history.append(rel)
        logger.debug("iteration %d relative residual %.3e", it, rel)
        if not np.isfinite(rel):
            raise NumericalFailureError("residual is not finite", {"history": history})
        if len(history) > 1 and history[-2] > 0:
            ratio = rel / history[-2]
            ratios.append(ratio)
            streak = streak + 1 if ratio >= 1.0 else 0
            if streak >= _NON_CONTRACTION_STREAK and rel > cfg.tolerance:
                logger.warning("non-contraction, factor %.3f", ratio)
                raise OutOfRegimeError(
                    "Neumann iteration does not contract",
                    {"contraction_factor": ratio, "history": history},
                )
        if rel <= cfg.tolerance:
            u0 = jet[0] + alpha + cg0
            du0 = jet[1] + beta + cz0
            m1_0, m2_0 = mu.evaluate(0j, p0, u0)
            return _ComponentSolution(
                values=GridFunction(grid, u),
                dz=du_f,
                dzbar=gf,
                jet=(complex(u0), complex(du0)),
                origin_dbar=complex(m1_0 * du0 + m2_0 * np.conj(du0)),
                residual=res.l2_norm(),
                relative_residual=rel,
                history=tuple(history),
                contraction=max(ratios) if ratios else 0.0,
            )
        g = g_new
    raise OutOfRegimeError(
        "residual tolerance not reached",
        {
            "contraction_factor": max(ratios) if ratios else None,
            "history": history,
            "max_iterations": cfg.max_iterations,
        },
    )


def _origin_param(param: Optional[GridFunction]) -> complex:
    if param is None:
        return 0j
    # ring means are f(0) + r²Δf(0)/4 + O(r⁴); eliminate the r² term
    r = param.grid.ring_radii
    m0, m1 = np.mean(param.values[0]), np.mean(param.values[1])
    return complex((r[1] ** 2 * m0 - r[0] ** 2 * m1) / (r[1] ** 2 - r[0] ** 2))


def _component_seed(seed: DiskMap, component: int):
    if seed.radius != 1.0:
        raise SchemaError("solver seeds live on the unit disk", {"radius": seed.radius})
    if component == 1:
        return seed.u, seed.du, (seed.jets[0], seed.jets[1])
    v, dv, _ = seed.second()
    return v, dv, (seed.jets[2], seed.jets[3])


def neumann_solve(
    seed: DiskMap,
    mu: BeltramiCoefficients,
    v: Optional[GridFunction],
    cfg: SolveConfig,
) -> DiskMap:
    """Scalar solve for the first component with the second frozen at ``v``."""
    _check_regime(mu, cfg)
    if not np.all(np.isfinite(seed.u.values)):
        raise NumericalFailureError("seed is not finite")
    hol, hol_dz, jet = _component_seed(seed, 1)
    sol = _solve_scalar(hol, hol_dz, jet, mu, v, cfg)
    param = v if v is not None else GridFunction.zeros(seed.grid)
    return DiskMap(
        grid=seed.grid,
        u=sol.values,
        du=sol.dz,
        dbar_u=sol.dzbar,
        v=param,
        dv=finite_diff_dz(param),
        dbar_v=finite_diff_dbar(param),
        residual=sol.residual,
        residual_u=sol.relative_residual,
        jets=(sol.jet[0], sol.jet[1], _origin_param(param), 0j),
        origin_dbar=(sol.origin_dbar, 0j),
        history=sol.history,
        contraction=sol.contraction,
        radius=seed.radius,
        diagnostics={"param_c1_norm": _c1_norm(param)},
    )


def _c1_norm(v: GridFunction) -> float:
    m = v.grid.interior
    return v.sup_norm() + finite_diff_dz(v).sup_norm(m) + finite_diff_dbar(v).sup_norm(m)


def check_target(f: DiskMap, margin: float = 0.0, punctured: bool = False) -> None:
    """Raise TargetViolationError unless |u|, |v| < 1 - margin on every node
    (and u ≠ 0 for the punctured target)."""
    u_sup, v_sup = f.sup_modulus()
    limit = 1.0 - margin
    if u_sup >= limit or v_sup >= limit:
        raise TargetViolationError(
            "map leaves the bidisk",
            {"sup_u": u_sup, "sup_v": v_sup, "margin": margin},
        )
    if punctured:
        u_min = float(np.min(np.abs(f.u.values)))
        if u_min <= margin:
            raise TargetViolationError("map meets the puncture", {"min_u": u_min, "margin": margin})


def solve_coupled(
    seed: DiskMap,
    J: AlmostComplexStructure,
    cfg: SolveConfig,
    coefficients: Optional[Tuple[BeltramiCoefficients, BeltramiCoefficients]] = None,
    punctured: bool = False,
) -> DiskMap:
    """Alternate scalar solves for u (block A, parameter v) and v (block B,
    parameter u) until both residuals meet the tolerance."""
    check_target(seed, punctured=punctured)
    mu_u, mu_v = coefficients or (coefficients_from_structure(J, 1), coefficients_from_structure(J, 2))
    _check_regime(mu_u, cfg)
    _check_regime(mu_v, cfg)

    hol_u, hol_du, jet_u = _component_seed(seed, 1)
    hol_v, hol_dv, jet_v = _component_seed(seed, 2)
    v_sol = None
    v_values = hol_v
    g_u = g_v = None
    history = []
    contraction = 0.0
    for sweep in range(cfg.coupled_max_sweeps):
        v0 = jet_v[0] if v_sol is None else v_sol.jet[0]
        u_sol = _solve_scalar(hol_u, hol_du, jet_u, mu_u, v_values, cfg, g_u, param_origin=v0)
        g_u = u_sol.dzbar.values
        v_sol = _solve_scalar(hol_v, hol_dv, jet_v, mu_v, u_sol.values, cfg, g_v, param_origin=u_sol.jet[0])
        g_v = v_sol.dzbar.values
        v_values = v_sol.values
        contraction = max(contraction, u_sol.contraction, v_sol.contraction)
        # u was solved against the previous v
        res_u = residual(u_sol.values, v_values, mu_u, dz=u_sol.dz, dzbar=u_sol.dzbar)
        rel_u = relative_norm(res_u, u_sol.dz)
        joint = max(rel_u, v_sol.relative_residual)
        history.append(joint)
        logger.debug("sweep %d joint residual %.3e", sweep, joint)
        if joint <= cfg.tolerance:
            rho = build_cutoff(seed.grid, cfg.cutoff_inner_radius)
            localized = localized_relative_residual(
                u_sol.values, u_sol.dz, u_sol.dzbar, coefficient_values(mu_u, u_sol.values, v_values), rho
            )
            out = DiskMap(
                grid=seed.grid,
                u=u_sol.values,
                du=u_sol.dz,
                dbar_u=u_sol.dzbar,
                v=v_sol.values,
                dv=v_sol.dz,
                dbar_v=v_sol.dzbar,
                residual=max(res_u.l2_norm(), v_sol.residual),
                residual_u=rel_u,
                residual_v=v_sol.relative_residual,
                jets=(u_sol.jet[0], u_sol.jet[1], v_sol.jet[0], v_sol.jet[1]),
                origin_dbar=(u_sol.origin_dbar, v_sol.origin_dbar),
                history=tuple(history),
                contraction=contraction,
                radius=seed.radius,
                diagnostics={
                    "sweeps": sweep + 1,
                    "u_history": list(u_sol.history),
                    "v_history": list(v_sol.history),
                    "localized_residual": localized,
                },
            )
            check_target(out, punctured=punctured)
            return out
    raise OutOfRegimeError(
        "coupled solve did not reach the joint tolerance",
        {"history": history, "sweeps": cfg.coupled_max_sweeps},
    )
