"""Disk automorphisms, the universal covering of the punctured disk, and the
derivative bookkeeping that ties the two together."""
from dataclasses import dataclass
from typing import Callable

import numpy as np

from app.utils.errors import SchemaError

ArrayLike = np.ndarray


def _check_center(a: complex) -> complex:
    a = complex(a)
    if abs(a) >= 1.0:
        raise SchemaError("automorphism center must lie in the open unit disk", {"a": [a.real, a.imag]})
    return a


def mobius(a: complex, lam):
    """φ_a(λ) = (a - λ)/(1 - āλ): the involution exchanging a and 0."""
    a = _check_center(a)
    lam = np.asarray(lam, dtype=complex)
    return (a - lam) / (1.0 - np.conj(a) * lam)


def mobius_derivative(a: complex, lam):
    """φ_a'(λ) = (|a|² - 1)/(1 - āλ)²."""
    a = _check_center(a)
    lam = np.asarray(lam, dtype=complex)
    return (abs(a) ** 2 - 1.0) / (1.0 - np.conj(a) * lam) ** 2


def disk_automorphism(a: complex, lam):
    """λ ↦ (λ + a)/(1 + āλ), sends 0 to a with derivative 1 - |a|² at 0."""
    a = _check_center(a)
    lam = np.asarray(lam, dtype=complex)
    return (lam + a) / (1.0 + np.conj(a) * lam)


def disk_automorphism_derivative(a: complex, lam):
    a = _check_center(a)
    lam = np.asarray(lam, dtype=complex)
    return (1.0 - abs(a) ** 2) / (1.0 + np.conj(a) * lam) ** 2


def covering_punctured(lam):
    """π(λ) = exp((λ-1)/(λ+1)), the universal covering Δ → Δ*."""
    lam = np.asarray(lam, dtype=complex)
    if np.any(np.abs(lam + 1.0) < 1e-15):
        raise SchemaError("λ = -1 is a pole of the covering exponent")
    return np.exp((lam - 1.0) / (lam + 1.0))


def covering_punctured_derivative(lam):
    lam = np.asarray(lam, dtype=complex)
    return covering_punctured(lam) * 2.0 / (lam + 1.0) ** 2


def covering_punctured_phase(lam):
    """arg π'(λ), finite where |π'(λ)| underflows near λ = -1."""
    lam = np.asarray(lam, dtype=complex)
    return ((lam - 1.0) / (lam + 1.0)).imag + np.angle(2.0 / (lam + 1.0) ** 2)


def branch_point(a: complex) -> complex:
    """Preimage c of a under π using the branch of ln with Im in [-π, π)."""
    a = complex(a)
    if a == 0 or abs(a) >= 1.0:
        raise SchemaError("branch point needs 0 < |a| < 1", {"a": [a.real, a.imag]})
    b = _log_branch(a)
    return (b + 1.0) / (1.0 - b)


def _log_branch(a: complex) -> complex:
    arg = np.angle(a)
    if arg >= np.pi:
        arg -= 2 * np.pi
    return complex(np.log(abs(a)), arg)


def punctured_chain_factor(a: complex) -> complex:
    """dw(0)/du(0) for w = φ_c ∘ π⁻¹ ∘ u with u(0) = a and c = branch_point(a).

    φ_c'(c) = 1/(|c|² - 1) and π'(c) = a(1 - b)²/2 with b = ln a.
    """
    c = branch_point(a)
    b = _log_branch(a)
    return (1.0 / (abs(c) ** 2 - 1.0)) * (2.0 / (1.0 - b) ** 2) / a


@dataclass(frozen=True)
class CoveringMap:
    """Holomorphic covering π: Δ → D with its derivative."""

    name: str
    map: Callable[[ArrayLike], ArrayLike]
    derivative: Callable[[ArrayLike], ArrayLike]
    phase: Callable[[ArrayLike], ArrayLike]

    def __call__(self, lam):
        return self.map(lam)

    def composed_with_mobius(self, a: complex):
        """(π∘φ_a, (π∘φ_a)') as callables."""
        def value(lam):
            return self.map(mobius(a, lam))

        def deriv(lam):
            return self.derivative(mobius(a, lam)) * mobius_derivative(a, lam)

        return value, deriv

    def composed_phase(self, a: complex, lam):
        """arg (π∘φ_a)'(λ) without forming the derivative itself."""
        return self.phase(mobius(a, lam)) + np.angle(mobius_derivative(a, lam))


IDENTITY_COVER = CoveringMap(
    name="identity",
    map=lambda lam: np.asarray(lam, dtype=complex),
    derivative=lambda lam: np.ones_like(np.asarray(lam, dtype=complex)),
    phase=lambda lam: np.zeros(np.shape(lam)),
)

PUNCTURED_COVER = CoveringMap(
    name="punctured",
    map=covering_punctured,
    derivative=covering_punctured_derivative,
    phase=covering_punctured_phase,
)


def get_cover(name: str) -> CoveringMap:
    covers = {"identity": IDENTITY_COVER, "punctured": PUNCTURED_COVER}
    try:
        return covers[name]
    except KeyError:
        raise SchemaError(f"unknown covering '{name}'", {"known": sorted(covers)})
