import numpy as np
import pytest

from app.services.disk_grid import build_grid, finite_diff_dbar, finite_diff_dz, sample
from app.services.integral_ops import (
    calderon_zygmund,
    cauchy_green,
    cauchy_green_direct,
    origin_values,
    relative_error,
)
from app.utils.errors import SchemaError

SUITE = {
    "one": lambda z: np.ones_like(z),
    "z": lambda z: z,
    "z2": lambda z: z ** 2,
    "abs2": lambda z: np.abs(z) ** 2,
    "gaussian": lambda z: np.exp(-8.0 * np.abs(z - 0.2) ** 2),
}


def test_closed_forms():
    """T_CG 1 = z̄, T_CZ 1 = 0 and T_CZ z = z̄ hold to rounding"""
    grid = build_grid(32)
    one = sample(SUITE["one"], grid)
    z = sample(SUITE["z"], grid)
    np.testing.assert_allclose(cauchy_green(one).values, np.conj(grid.nodes), atol=1e-10)
    np.testing.assert_allclose(calderon_zygmund(one).values, 0.0, atol=1e-10)
    np.testing.assert_allclose(calderon_zygmund(z).values, np.conj(grid.nodes), atol=1e-10)


def test_cauchy_green_of_z():
    grid = build_grid(32)
    w = cauchy_green(sample(SUITE["z"], grid))
    expected = sample(lambda z: np.abs(z) ** 2 - 1.0, grid)
    assert relative_error(w, expected) < 1e-3


@pytest.mark.parametrize("name", sorted(SUITE))
def test_dbar_inverts_cauchy_green(name):
    grid = build_grid(64)
    g = sample(SUITE[name], grid)
    w = cauchy_green(g)
    assert relative_error(finite_diff_dbar(w), g, grid.interior) <= 1e-2


@pytest.mark.parametrize("name", ["z2", "gaussian"])
def test_dbar_error_shrinks_with_resolution(name):
    errors = []
    for n in (64, 128):
        grid = build_grid(n)
        g = sample(SUITE[name], grid)
        errors.append(relative_error(finite_diff_dbar(cauchy_green(g)), g, grid.interior))
    assert errors[1] <= errors[0] / 1.5


@pytest.mark.parametrize("name", sorted(SUITE))
def test_calderon_zygmund_is_dz_of_cauchy_green(name):
    grid = build_grid(64)
    g = sample(SUITE[name], grid)
    expected = finite_diff_dz(cauchy_green(g))
    if name == "one":
        # ∂z̄ = 0, compare absolutely
        assert calderon_zygmund(g).sup_norm() < 1e-10
        assert expected.sup_norm() < 1e-3
    else:
        assert relative_error(calderon_zygmund(g), expected, grid.interior) <= 2e-2


def test_direct_quadrature_agrees():
    grid = build_grid(16)
    g = sample(SUITE["gaussian"], grid)
    # thin wedges near the origin defeat the midpoint rule
    away = np.abs(grid.nodes) > 0.3
    assert relative_error(cauchy_green_direct(g), cauchy_green(g), away) < 0.15


def test_origin_values():
    grid = build_grid(32)
    cg0, cz0 = origin_values(sample(SUITE["z"], grid))
    assert cg0 == pytest.approx(-1.0, abs=1e-12)
    assert cz0 == pytest.approx(0.0, abs=1e-12)
    _, cz0 = origin_values(sample(SUITE["z2"], grid))
    assert cz0 == pytest.approx(-1.0, abs=1e-12)


def test_relative_error_needs_matching_grids():
    a = sample(SUITE["z"], build_grid(16))
    b = sample(SUITE["z"], build_grid(32))
    with pytest.raises(SchemaError):
        relative_error(a, b)
