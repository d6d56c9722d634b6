import numpy as np
import pytest

from app.models.pydantic_models import PolynomialTerm, StructureDefinition
from app.services.almost_complex import (
    J_ST,
    coefficients_from_structure,
    constant_coefficients,
    pullback_coefficients,
    q_of_A,
    rescale,
    split_linear_antilinear,
    standard_structure,
    structure_bound,
    structure_from_definition,
    validate,
    zero_coefficients,
)
from app.services.automorphisms import IDENTITY_COVER, PUNCTURED_COVER, mobius
from app.utils.errors import OutOfRegimeError, SchemaError, StructureRejectedError


def stretched(s):
    """P J_st P⁻¹ with P = diag(s, 1)."""
    return np.array([[0.0, -s], [1.0 / s, 0.0]])


def linear_definition(c=0.5, epsilon=1.0, project=True):
    # A = J_st + c·x₁·diag(1, -1), so A² = -(1 - c²x₁²)I off the origin
    return StructureDefinition(
        description="diagonal shear",
        epsilon=epsilon,
        a_terms=[PolynomialTerm(exponents=(1, 0, 0, 0), matrix=((1.0, 0.0), (0.0, -1.0)), coefficient=c)],
        project=project,
    )


def test_standard_structure_has_no_coefficients():
    J = standard_structure()
    np.testing.assert_allclose(q_of_A(J_ST), 0.0, atol=1e-15)
    assert coefficients_from_structure(J, 1).vanishes
    assert structure_bound(J) == 0.0
    assert validate(J).accepted


@pytest.mark.parametrize("s", [0.8, 1.1, 1.5])
def test_stretched_structure_is_purely_antilinear(s):
    mu1, mu2 = split_linear_antilinear(q_of_A(stretched(s)))
    assert mu1 == pytest.approx(0, abs=1e-14)
    assert mu2 == pytest.approx((s - 1) / (s + 1), abs=1e-14)


@pytest.mark.parametrize("s", [0.8, 1.5])
def test_linear_map_is_holomorphic_for_its_structure(s):
    """u(x + iy) = s·x + iy satisfies du∘J_st = A∘du and ∂̄u = q_A(∂u)"""
    A = stretched(s)
    du = np.diag([s, 1.0])
    np.testing.assert_allclose(du @ J_ST, A @ du, atol=1e-14)
    alpha, beta = (s + 1) / 2, (s - 1) / 2
    mu1, mu2 = split_linear_antilinear(q_of_A(A))
    assert beta == pytest.approx(mu1 * alpha + mu2 * np.conj(alpha))


def test_split_recovers_the_real_map():
    q = np.array([[0.3, -0.1], [0.2, 0.05]])
    mu1, mu2 = split_linear_antilinear(q)
    w = 0.4 - 0.7j
    image = q @ np.array([w.real, w.imag])
    assert mu1 * w + mu2 * np.conj(w) == pytest.approx(complex(image[0], image[1]))


def test_singular_structure_is_out_of_regime():
    with pytest.raises(OutOfRegimeError):
        q_of_A(-J_ST)


def test_projection_repairs_polynomial_input():
    J = structure_from_definition(linear_definition())
    report = validate(J)
    assert report.accepted and report.projected
    assert report.raw_square_deviation > 1e-3
    assert report.a_square_deviation <= 1e-10


def test_unprojected_input_is_rejected_with_a_report():
    J = structure_from_definition(linear_definition(project=False))
    with pytest.raises(StructureRejectedError) as info:
        validate(J)
    assert info.value.diagnostics["accepted"] is False
    assert info.value.exit_code == 2


def test_origin_must_be_standard():
    defn = StructureDefinition(
        a_terms=[PolynomialTerm(exponents=(0, 0, 0, 0), matrix=((0.1, 0.0), (0.0, -0.1)))]
    )
    with pytest.raises(StructureRejectedError):
        validate(structure_from_definition(defn))


def test_rescaling_shrinks_the_coefficients():
    J = structure_from_definition(linear_definition(c=1.0))
    small = rescale(J, 0.1)
    assert small.epsilon == pytest.approx(0.1)
    np.testing.assert_allclose(small.a_at(0.5, 0.2j), J.a_at(0.05, 0.02j))
    assert 0 < structure_bound(small) < structure_bound(J)
    assert structure_bound(small) < 0.1
    with pytest.raises(SchemaError):
        rescale(J, 0.0)


def test_coefficients_depend_on_the_value_component():
    J = structure_from_definition(linear_definition(c=0.4))
    mu = coefficients_from_structure(J, 1)
    m1_origin, m2_origin = mu.evaluate(0j, 0j, 0j)
    m1_away, m2_away = mu.evaluate(0j, 0j, 0.5 + 0j)
    assert abs(m2_origin) < 1e-12
    assert abs(m2_away) > 1e-3
    assert abs(m1_away) < 1e-12
    # block B is standard
    assert coefficients_from_structure(J, 2).vanishes
    with pytest.raises(SchemaError):
        coefficients_from_structure(J, 3)


def test_pullback_keeps_the_bound_and_rotates_mu2():
    mu = constant_coefficients(0.02, 0.05)
    same = pullback_coefficients(mu, IDENTITY_COVER, 0j)
    m1, m2 = same.evaluate(0.1, 0j, 0.3j)
    assert m1 == pytest.approx(0.02)
    # φ₀(λ) = -λ has φ' = -1, so conj(φ')/φ' = 1
    assert m2 == pytest.approx(0.05)
    pulled = pullback_coefficients(mu, PUNCTURED_COVER, 0.2 + 0.1j)
    assert pulled.bound == mu.bound
    _, m2 = pulled.evaluate(0j, 0j, 0.3 - 0.2j)
    assert abs(m2) == pytest.approx(0.05)


def test_pullback_rotation_matches_the_covering_derivative():
    a = 0.2 + 0.1j
    w = np.array([0.3 - 0.2j, -0.4 + 0.1j, 0.5j])
    _, derivative = PUNCTURED_COVER.composed_with_mobius(a)
    d = derivative(w)
    _, m2 = pullback_coefficients(constant_coefficients(0.0, 0.05), PUNCTURED_COVER, a).evaluate(w, 0j, w)
    np.testing.assert_allclose(m2, 0.05 * np.conj(d) / d, atol=1e-12)


@pytest.mark.parametrize("a", [-0.5 + 0j, -0.433 + 0.25j, -0.167j])
def test_pullback_is_defined_where_the_covering_derivative_underflows(a):
    # φ_a is an involution, so these w land next to the pole λ = -1 of the exponent
    w = mobius(a, np.array([-1.0 + 1e-3, -0.999 + 1e-3j, -0.999 - 0.04j]))
    _, derivative = PUNCTURED_COVER.composed_with_mobius(a)
    assert np.min(np.abs(derivative(w))) < 1e-14
    _, m2 = pullback_coefficients(constant_coefficients(0.0, 0.05), PUNCTURED_COVER, a).evaluate(w, 0j, w)
    assert np.all(np.isfinite(m2))
    np.testing.assert_allclose(np.abs(m2), 0.05, rtol=1e-12)


def test_zero_coefficients_broadcast():
    m1, m2 = zero_coefficients().evaluate(np.zeros((2, 3)), 0j, 0j)
    assert m1.shape == (2, 3) and not np.any(m2)
