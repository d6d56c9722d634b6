"""Block-diagonal almost-complex structures J = diag(A, B) on ℝ⁴ = ℂ² near J_st
and the Beltrami coefficients they induce.

A map f = (u, v) is J-holomorphic iff du∘J_st = A(u, v)∘du and likewise for v
with B.  Writing a = ∂u·w and b = ∂̄u·w̄ this is b = q_A(a) with

    q_A = -(I - A J_st)⁻¹(I + A J_st),

and q_A = μ¹ + μ²σ splits into a C-linear part and a C-antilinear part, which
gives ∂̄u = μ¹∂u + μ²conj(∂u).
"""
import logging
from dataclasses import dataclass, replace
from functools import lru_cache
from typing import Callable, Optional, Tuple

import numpy as np

from app.models.pydantic_models import StructureDefinition, ValidationReport
from app.services.automorphisms import CoveringMap
from app.services.disk_grid import build_grid
from app.utils.config import get_settings
from app.utils.errors import OutOfRegimeError, SchemaError, StructureRejectedError

logger = logging.getLogger(__name__)

J_ST = np.array([[0.0, -1.0], [1.0, 0.0]])
_IDENTITY = np.eye(2)
_SINGULAR_DET = 1e-12
_VALIDATION_RESOLUTION = 8

MatrixField = Callable[[np.ndarray, np.ndarray], np.ndarray]
CoefficientField = Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]


def _constant_field(matrix: np.ndarray) -> MatrixField:
    def field(z1, z2):
        shape = np.broadcast(np.asarray(z1), np.asarray(z2)).shape
        return np.broadcast_to(matrix, shape + (2, 2)).copy()

    return field


@dataclass(frozen=True)
class AlmostComplexStructure:
    """Matrix fields A, B on ℂ² evaluated at (ε z₁, ε z₂).

    ``source`` keeps the raw fields when A, B were obtained by projecting
    polynomial input onto A² = -I.
    """

    A: MatrixField
    B: MatrixField
    epsilon: float = 1.0
    description: str = ""
    source: Optional["AlmostComplexStructure"] = None

    def a_at(self, z1, z2) -> np.ndarray:
        return self.A(self.epsilon * np.asarray(z1), self.epsilon * np.asarray(z2))

    def b_at(self, z1, z2) -> np.ndarray:
        return self.B(self.epsilon * np.asarray(z1), self.epsilon * np.asarray(z2))

    @property
    def is_projected(self) -> bool:
        return self.source is not None


def standard_structure(description: str = "J_st") -> AlmostComplexStructure:
    return AlmostComplexStructure(_constant_field(J_ST), _constant_field(J_ST), 1.0, description)


def _polynomial_field(terms) -> MatrixField:
    exps = np.array([t.exponents for t in terms], dtype=int).reshape(-1, 4)
    mats = np.array([np.asarray(t.matrix) * t.coefficient for t in terms]).reshape(-1, 2, 2)

    def field(z1, z2):
        z1, z2 = np.broadcast_arrays(np.asarray(z1, dtype=complex), np.asarray(z2, dtype=complex))
        coords = np.stack([z1.real, z1.imag, z2.real, z2.imag], axis=-1)
        out = np.broadcast_to(J_ST, z1.shape + (2, 2)).copy()
        for e, m in zip(exps, mats):
            mono = np.prod(coords ** e, axis=-1)
            out += mono[..., None, None] * m
        return out

    return field


def _inverse_sqrt(m: np.ndarray) -> np.ndarray:
    """(M)^{-1/2} for a batch of 2×2 matrices with positive spectrum."""
    det = np.linalg.det(m)
    with np.errstate(invalid="ignore"):
        s = np.sqrt(det)
        t = np.sqrt(np.trace(m, axis1=-2, axis2=-1) + 2.0 * s)
    root = (m + s[..., None, None] * _IDENTITY) / t[..., None, None]
    ok = np.all(np.isfinite(root), axis=(-2, -1)) & (np.abs(np.linalg.det(np.nan_to_num(root))) > 0)
    out = np.full(m.shape, np.nan)
    out[ok] = np.linalg.inv(root[ok])
    return out


def project_structure_matrix(a: np.ndarray, tolerance: float) -> np.ndarray:
    """Retraction A ↦ A(-A²)^{-1/2}, applied where A² = -I fails beyond tolerance."""
    a = np.asarray(a, dtype=float)
    dev = square_deviation(a)
    bad = dev > tolerance
    if not np.any(bad):
        return a
    out = a.copy()
    sub = a[bad]
    with np.errstate(all="ignore"):
        out[bad] = sub @ _inverse_sqrt(-(sub @ sub))
    return out


def square_deviation(a: np.ndarray) -> np.ndarray:
    """max-entry |A² + I| per matrix; non-finite input counts as infinite."""
    a = np.asarray(a, dtype=float)
    dev = np.max(np.abs(a @ a + _IDENTITY), axis=(-2, -1))
    return np.where(np.isfinite(dev), dev, np.inf)


def structure_from_definition(defn: StructureDefinition, tolerance: Optional[float] = None) -> AlmostComplexStructure:
    tol = get_settings().structure_tolerance if tolerance is None else tolerance
    raw = AlmostComplexStructure(
        _polynomial_field(defn.a_terms),
        _polynomial_field(defn.b_terms),
        defn.epsilon,
        defn.description,
    )
    if not defn.project:
        return raw

    def projected(field):
        return lambda z1, z2: project_structure_matrix(field(z1, z2), tol)

    return AlmostComplexStructure(projected(raw.A), projected(raw.B), defn.epsilon, defn.description, raw)


@lru_cache(maxsize=1)
def _validation_samples() -> Tuple[np.ndarray, np.ndarray]:
    nodes = build_grid(_VALIDATION_RESOLUTION).nodes.ravel()
    z1, z2 = np.meshgrid(nodes, nodes, indexing="ij")
    return z1.ravel(), z2.ravel()


def validate(
    J: AlmostComplexStructure,
    samples: Optional[Tuple[np.ndarray, np.ndarray]] = None,
    tolerance: Optional[float] = None,
) -> ValidationReport:
    """Check A² = B² = -I on a product sample of Δ×Δ and A(0) = B(0) = J_st.

    Raises StructureRejectedError carrying the report when any deviation
    exceeds the tolerance.
    """
    tol = get_settings().structure_tolerance if tolerance is None else tolerance
    z1, z2 = _validation_samples() if samples is None else samples
    a_vals = J.a_at(z1, z2)
    b_vals = J.b_at(z1, z2)
    a_sq = float(np.max(square_deviation(a_vals)))
    b_sq = float(np.max(square_deviation(b_vals)))
    a0 = float(np.max(np.abs(J.a_at(0j, 0j) - J_ST)))
    b0 = float(np.max(np.abs(J.b_at(0j, 0j) - J_ST)))
    raw_dev = max(a_sq, b_sq) if J.source is None else float(
        max(np.max(square_deviation(J.source.a_at(z1, z2))), np.max(square_deviation(J.source.b_at(z1, z2))))
    )
    devs = [a_sq, b_sq, a0, b0]
    accepted = all(np.isfinite(d) and d <= tol for d in devs)
    report = ValidationReport(
        accepted=accepted,
        a_square_deviation=_finite_or_max(a_sq),
        b_square_deviation=_finite_or_max(b_sq),
        a_origin_deviation=_finite_or_max(a0),
        b_origin_deviation=_finite_or_max(b0),
        tolerance=tol,
        projected=J.is_projected,
        raw_square_deviation=_finite_or_max(raw_dev),
        sample_count=int(np.size(z1)),
    )
    if not accepted:
        logger.warning("structure '%s' rejected: %s", J.description, devs)
        raise StructureRejectedError("structure rejected", report.model_dump())
    return report


def _finite_or_max(x: float) -> float:
    return float(x) if np.isfinite(x) else float(np.finfo(float).max)


def rescale(J: AlmostComplexStructure, eps: float) -> AlmostComplexStructure:
    """J_ε(z₁, z₂) = J(εz₁, εz₂)."""
    if not eps > 0:
        raise SchemaError("rescale factor must be positive", {"eps": eps})
    source = None if J.source is None else rescale(J.source, eps)
    return replace(J, epsilon=J.epsilon * eps, source=source)


def q_of_A(a_value: np.ndarray) -> np.ndarray:
    a_value = np.asarray(a_value, dtype=float)
    aj = a_value @ J_ST
    lhs = _IDENTITY - aj
    det = np.linalg.det(lhs)
    if np.any(np.abs(det) < _SINGULAR_DET):
        raise OutOfRegimeError(
            "1 - A J_st is singular; structure too far from J_st",
            {"min_abs_det": float(np.min(np.abs(det)))},
        )
    return -np.linalg.solve(lhs, _IDENTITY + aj)


def split_linear_antilinear(q: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """q·w = μ¹w + μ²w̄ for the C-linear and C-antilinear parts of a real 2×2 q."""
    q = np.asarray(q, dtype=float)
    jqj = J_ST @ q @ J_ST
    lin = 0.5 * (q - jqj)
    anti = 0.5 * (q + jqj)
    mu1 = lin[..., 0, 0] + 1j * lin[..., 1, 0]
    mu2 = anti[..., 0, 0] + 1j * anti[..., 1, 0]
    if mu1.ndim == 0:
        return complex(mu1), complex(mu2)
    return mu1, mu2


@dataclass(frozen=True)
class BeltramiCoefficients:
    """μ¹(z, v, u), μ²(z, v, u): z the disk variable, v the parameter
    component and u the unknown component."""

    mu1: CoefficientField
    mu2: CoefficientField
    bound: float

    def evaluate(self, z, param, value) -> Tuple[np.ndarray, np.ndarray]:
        return np.asarray(self.mu1(z, param, value)), np.asarray(self.mu2(z, param, value))

    @property
    def vanishes(self) -> bool:
        return self.bound == 0.0


def zero_coefficients() -> BeltramiCoefficients:
    def zero(z, param, value):
        return np.zeros(np.broadcast(np.asarray(z), np.asarray(param), np.asarray(value)).shape, dtype=complex)

    return BeltramiCoefficients(zero, zero, 0.0)


def constant_coefficients(mu1: complex = 0j, mu2: complex = 0j) -> BeltramiCoefficients:
    def const(c):
        def field(z, param, value):
            shape = np.broadcast(np.asarray(z), np.asarray(param), np.asarray(value)).shape
            return np.full(shape, c, dtype=complex)

        return field

    return BeltramiCoefficients(const(complex(mu1)), const(complex(mu2)), abs(mu1) + abs(mu2))


def coefficients_from_structure(
    J: AlmostComplexStructure,
    component: int,
    samples: Optional[Tuple[np.ndarray, np.ndarray]] = None,
) -> BeltramiCoefficients:
    """Coefficients of the equation for component 1 (block A) or 2 (block B)."""
    if component not in (1, 2):
        raise SchemaError("component must be 1 or 2", {"component": component})

    def matrices(param, value):
        if component == 1:
            return J.a_at(value, param)
        return J.b_at(param, value)

    def both(z, param, value):
        z, param, value = np.broadcast_arrays(
            np.asarray(z, dtype=complex), np.asarray(param, dtype=complex), np.asarray(value, dtype=complex)
        )
        return split_linear_antilinear(q_of_A(matrices(param, value)))

    z1, z2 = _validation_samples() if samples is None else samples
    mu1_s, mu2_s = both(0j, z2, z1)
    bound = float(np.max(np.abs(mu1_s) + np.abs(mu2_s)))
    return BeltramiCoefficients(
        lambda z, p, v: both(z, p, v)[0],
        lambda z, p, v: both(z, p, v)[1],
        bound,
    )


def structure_bound(J: AlmostComplexStructure) -> float:
    return max(coefficients_from_structure(J, 1).bound, coefficients_from_structure(J, 2).bound)


def pullback_coefficients(mu: BeltramiCoefficients, cover: CoveringMap, a: complex) -> BeltramiCoefficients:
    """Coefficients of the equation for w with u = (π∘φ_a)(w).

    μ¹ is evaluated at the pushed value; μ² picks up conj(Π')/Π', which has
    modulus one, so the bound is unchanged.  The factor is exp(-2i arg Π'), defined
    wherever |Π'| underflows.
    """
    value_map, _ = cover.composed_with_mobius(a)

    def factor(w):
        phase = cover.composed_phase(a, w)
        if not np.all(np.isfinite(phase)):
            raise OutOfRegimeError("covering derivative is undefined", {"a": [complex(a).real, complex(a).imag]})
        return np.exp(-2j * phase)

    def mu1(z, param, w):
        return mu.mu1(z, param, value_map(w))

    def mu2(z, param, w):
        return mu.mu2(z, param, value_map(w)) * factor(np.asarray(w, dtype=complex))

    return BeltramiCoefficients(mu1, mu2, mu.bound)
