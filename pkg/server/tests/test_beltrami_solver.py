import numpy as np
import pytest

from app.models.pydantic_models import PolynomialTerm, SolveConfig, StructureDefinition
from app.services.almost_complex import (
    BeltramiCoefficients,
    coefficients_from_structure,
    constant_coefficients,
    pullback_coefficients,
    rescale,
    standard_structure,
    structure_from_definition,
)
from app.services.automorphisms import IDENTITY_COVER
from app.services.beltrami_solver import (
    DiskMap,
    _origin_param,
    build_cutoff,
    cutoff_profile,
    localized_residual,
    neumann_solve,
    relative_norm,
    residual,
    solve_coupled,
)
from app.services.disk_grid import GridFunction, build_grid, sample
from app.utils.errors import OutOfRegimeError, SchemaError, TargetViolationError


@pytest.fixture(scope="module")
def grid():
    return build_grid(32)


def shear_structure(epsilon=1.0):
    # A = J_st + c·x₁·diag(1, -1), projected back onto A² = -I
    defn = StructureDefinition(
        a_terms=[PolynomialTerm(exponents=(1, 0, 0, 0), matrix=((1.0, 0.0), (0.0, -1.0)), coefficient=0.5)],
        project=True,
    )
    J = structure_from_definition(defn)
    return J if epsilon == 1.0 else rescale(J, epsilon)


def smooth_coefficients(scale=0.05):
    """Coefficients with bound 2·scale that vary over the disk."""
    return BeltramiCoefficients(
        lambda z, p, v: scale * np.asarray(z) + 0 * np.asarray(v),
        lambda z, p, v: scale * np.conj(np.asarray(z)) ** 2 + 0 * np.asarray(v),
        2 * scale,
    )


def test_standard_structure_returns_the_seed(grid):
    seed = DiskMap.from_holomorphic(grid, [0.1, 0.5], [0.0, 0.3j])
    f = solve_coupled(seed, standard_structure(), SolveConfig())
    np.testing.assert_allclose(f.u.values, seed.u.values, atol=1e-12)
    np.testing.assert_allclose(f.v.values, seed.v.values, atol=1e-12)
    assert f.jets[0] == pytest.approx(0.1)
    assert f.jets[1] == pytest.approx(0.5)
    assert f.jets[3] == pytest.approx(0.3j)
    assert f.residual == pytest.approx(0.0, abs=1e-14)
    assert f.differential_norm() == pytest.approx(0.5)
    assert f.diagnostics["sweeps"] == 1


def test_constant_coefficients_give_the_affine_solution(grid):
    """u = λz + (μ¹λ + μ²λ̄)z̄ for constant μ"""
    mu1, mu2, lam = 0.04 + 0.02j, -0.03j, 0.6 - 0.2j
    seed = DiskMap.from_holomorphic(grid, [0j, lam])
    f = neumann_solve(seed, constant_coefficients(mu1, mu2), None, SolveConfig())
    c = mu1 * lam + mu2 * np.conj(lam)
    np.testing.assert_allclose(f.u.values, lam * grid.nodes + c * np.conj(grid.nodes), atol=1e-8)
    assert f.jets[1] == pytest.approx(lam, abs=1e-12)
    assert f.origin_dbar[0] == pytest.approx(c, abs=1e-12)
    assert f.differential_norm() == pytest.approx(abs(lam) + abs(c))


def test_small_coefficients_contract(grid):
    mu = smooth_coefficients(0.05)
    seed = DiskMap.from_holomorphic(grid, [0.1j, 0.5])
    f = neumann_solve(seed, mu, None, SolveConfig(max_iterations=30, tolerance=1e-8))
    assert f.contraction <= 0.15
    assert len(f.history) <= 30
    assert f.residual_u <= 1e-6
    # the equation holds for finite-difference derivatives up to discretization
    res = residual(f.u, None, mu)
    assert relative_norm(res, f.du) < 1e-2


def test_jets_are_kept(grid):
    seed = DiskMap.from_holomorphic(grid, [0.2, 0.4 + 0.1j])
    f = neumann_solve(seed, smooth_coefficients(0.05), None, SolveConfig())
    assert f.jets[0] == pytest.approx(0.2, abs=1e-10)
    assert f.jets[1] == pytest.approx(0.4 + 0.1j, abs=1e-10)


def test_bound_above_limit_is_out_of_regime(grid):
    seed = DiskMap.from_holomorphic(grid, [0j, 0.5])
    with pytest.raises(OutOfRegimeError) as info:
        neumann_solve(seed, constant_coefficients(0.3, 0.0), None, SolveConfig())
    assert info.value.diagnostics["limit"] == pytest.approx(0.2)


def test_exhausted_iterations_carry_the_history(grid):
    seed = DiskMap.from_holomorphic(grid, [0j, 0.5])
    with pytest.raises(OutOfRegimeError) as info:
        neumann_solve(seed, smooth_coefficients(0.05), None, SolveConfig(max_iterations=1))
    assert len(info.value.diagnostics["history"]) == 1
    assert info.value.exit_code == 3


def test_seed_leaving_the_bidisk_is_rejected(grid):
    seed = DiskMap.from_holomorphic(grid, [0j, 1.2])
    with pytest.raises(TargetViolationError):
        solve_coupled(seed, standard_structure(), SolveConfig())


def test_coupled_solve_with_frozen_second_component(grid):
    mu = smooth_coefficients(0.04)
    seed = DiskMap.from_holomorphic(grid, [0j, 0.5], [0.1, 0.2])
    zero = constant_coefficients(0, 0)
    f = solve_coupled(seed, standard_structure(), SolveConfig(), (mu, zero))
    np.testing.assert_allclose(f.v.values, seed.v.values, atol=1e-12)
    assert f.residual_u <= 1e-8
    assert f.diagnostics["u_history"][-1] <= 1e-8


def test_seeds_must_live_on_the_unit_disk(grid):
    seed = DiskMap.from_holomorphic(grid, [0j, 0.5], radius=0.5)
    with pytest.raises(SchemaError):
        neumann_solve(seed, constant_coefficients(0.01), None, SolveConfig())


def test_cutoff_profile():
    r = np.linspace(0, 1.2, 241)
    rho, drho = cutoff_profile(r, 0.75)
    assert np.all(rho[r <= 0.75] == 1.0)
    assert np.all(rho[r >= 1.0] == 0.0)
    assert np.all(np.diff(rho) <= 1e-15)
    mid = (r > 0.76) & (r < 0.99)
    numeric = np.gradient(rho, r)
    np.testing.assert_allclose(drho[mid], numeric[mid], atol=0.05 * np.max(np.abs(drho)))
    with pytest.raises(SchemaError):
        cutoff_profile(r, 1.0)


def test_cutoff_wirtinger_derivatives(grid):
    rho = build_cutoff(grid, 0.75)
    # for a radial ρ, ∂̄ρ = conj(∂ρ)
    np.testing.assert_allclose(rho.dzbar.values, np.conj(rho.dz.values))
    assert rho.values[0, 0] == 1.0


def test_localized_equation_holds_for_the_affine_solution():
    grid = build_grid(64)
    mu1, mu2, lam = 0.05, 0.03j, 0.7
    c = mu1 * lam + mu2 * np.conj(lam)
    h = sample(lambda z: lam * z + c * np.conj(z), grid)
    dz = GridFunction(grid, np.full(grid.shape, lam, dtype=complex))
    dzbar = GridFunction(grid, np.full(grid.shape, c, dtype=complex))
    mu_values = (
        GridFunction(grid, np.full(grid.shape, mu1, dtype=complex)),
        GridFunction(grid, np.full(grid.shape, mu2, dtype=complex)),
    )
    rho = build_cutoff(grid, 0.5)
    res = localized_residual(h, dz, dzbar, mu_values, rho)
    scale = (rho * dzbar + h * rho.dzbar).l2_norm()
    assert res.l2_norm() / scale < 5e-2


def test_small_structure_keeps_the_disk_near_its_seed(grid):
    seed = DiskMap.from_holomorphic(grid, [0.1, 0.4], [0.0, 0.3])
    f = solve_coupled(seed, shear_structure(0.05), SolveConfig())
    assert f.residual_u <= 1e-6
    assert f.residual_v <= 1e-6
    deviation = max(np.max(np.abs(f.u.values - seed.u.values)), np.max(np.abs(f.v.values - seed.v.values)))
    assert 0 < deviation <= 0.05


def test_reported_residuals_are_reproducible(grid):
    J = shear_structure(0.2)
    seed = DiskMap.from_holomorphic(grid, [0.1, 0.4], [0.0, 0.3])
    f = solve_coupled(seed, J, SolveConfig())
    res_u = residual(f.u, f.v, coefficients_from_structure(J, 1), dz=f.du, dzbar=f.dbar_u)
    assert relative_norm(res_u, f.du) == pytest.approx(f.residual_u, rel=1e-9, abs=1e-18)
    res_v = residual(f.v, f.u, coefficients_from_structure(J, 2), dz=f.dv, dzbar=f.dbar_v)
    assert relative_norm(res_v, f.dv) == pytest.approx(f.residual_v, rel=1e-9, abs=1e-18)


def test_contraction_does_not_grow_as_the_structure_flattens(grid):
    seed = DiskMap.from_holomorphic(grid, [0.1, 0.4], [0.0, 0.3])
    factors = [solve_coupled(seed, shear_structure(eps), SolveConfig()).contraction for eps in (0.3, 0.15, 0.075)]
    assert factors[0] > 0
    assert factors[1] <= factors[0]
    assert factors[2] <= factors[1]


def test_contraction_is_the_worst_ratio_of_the_history(grid):
    seed = DiskMap.from_holomorphic(grid, [0.1j, 0.5])
    f = neumann_solve(seed, smooth_coefficients(0.05), None, SolveConfig())
    ratios = [b / a for a, b in zip(f.history, f.history[1:])]
    assert f.contraction == pytest.approx(max(ratios))


def test_pulled_back_solution_maps_to_a_solution(grid):
    a = 0.3 + 0.2j
    mu_u = coefficients_from_structure(shear_structure(0.2), 1)
    param = GridFunction(grid, np.full(grid.shape, 0.1 + 0j))
    cfg = SolveConfig()
    w = neumann_solve(DiskMap.from_holomorphic(grid, [0j, 0.4]), pullback_coefficients(mu_u, IDENTITY_COVER, a), param, cfg)
    value_map, derivative = IDENTITY_COVER.composed_with_mobius(a)
    d = derivative(w.u.values)
    u = GridFunction(grid, value_map(w.u.values))
    du = GridFunction(grid, d * w.du.values)
    dbar_u = GridFunction(grid, d * w.dbar_u.values)
    res = residual(u, param, mu_u, dz=du, dzbar=dbar_u)
    assert relative_norm(res, du) <= 10 * cfg.tolerance


def test_converged_disk_reports_the_localized_residual():
    grid = build_grid(64)
    seed = DiskMap.from_holomorphic(grid, [0.1, 0.4], [0.0, 0.3])
    f = solve_coupled(seed, shear_structure(0.1), SolveConfig(cutoff_inner_radius=0.5))
    localized = f.diagnostics["localized_residual"]
    assert np.isfinite(localized)
    assert localized < 5e-2


@pytest.mark.parametrize(
    "fn",
    [lambda z: 0.2 + 0.5 * np.abs(z) ** 2, lambda z: 0.2 - 0.3j * z + 0.1 * np.conj(z)],
)
def test_origin_value_of_the_parameter_is_extrapolated(grid, fn):
    assert _origin_param(sample(fn, grid)) == pytest.approx(0.2, abs=1e-12)
    seed = DiskMap.from_holomorphic(grid, [0j, 0.5])
    f = neumann_solve(seed, smooth_coefficients(0.05), sample(fn, grid), SolveConfig())
    assert f.jets[2] == pytest.approx(0.2, abs=1e-12)
