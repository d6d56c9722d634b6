"""Intersections of J-complex disks in ℂ² and the linking of their slices by
small spheres.

For two disks meeting only at isolated points inside B_r, the linking number
of the slices M₁ ∩ S_r and M₂ ∩ S_r equals the sum of the local intersection
indices inside the ball.
"""
import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import brentq
from scipy.spatial.transform import Rotation

from app.models.pydantic_models import LinkingIndexReport, IntersectionRecord, LinkingReport, to_pair
from app.services.almost_complex import AlmostComplexStructure, standard_structure
from app.services.beltrami_solver import DiskMap
from app.services.disk_grid import build_grid
from app.utils.config import get_settings
from app.utils.errors import NumericalFailureError, SchemaError

logger = logging.getLogger(__name__)

_COARSE_RESOLUTION = 12
_CANDIDATES = 48
_MAX_ROOTS = 16
_NEWTON_STEPS = 80
_ROOT_TOL = 1e-11
_DEDUPE_TOL = 1e-3
_REGULAR_VALUE = 1e-4
_MIN_RAYS = 64
_MAX_RAYS = 1 << 15
_RAY_SAMPLES = 96
_TANGENTIAL_MARGIN = 1e-3
_PROJECTION_ATTEMPTS = 6


def _real4(u, v) -> np.ndarray:
    u, v = np.asarray(u, dtype=complex), np.asarray(v, dtype=complex)
    return np.stack([u.real, u.imag, v.real, v.imag], axis=-1)


def _real_block(d, dbar) -> np.ndarray:
    """Real 2×2 Jacobian of w(z) from its Wirtinger derivatives."""
    wx = d + dbar
    wy = 1j * (d - dbar)
    return np.stack([np.stack([wx.real, wy.real], -1), np.stack([wx.imag, wy.imag], -1)], -2)


def _difference(M1: DiskMap, M2: DiskMap, z1, z2):
    """F(z₁, z₂) = M₁(z₁) - M₂(z₂) as real 4-vectors with the real 4×4 Jacobian."""
    u1, v1 = M1.evaluate(z1)
    u2, v2 = M2.evaluate(z2)
    du1, dbu1, dv1, dbv1 = M1.derivatives(z1)
    du2, dbu2, dv2, dbv2 = M2.derivatives(z2)
    F = _real4(u1 - u2, v1 - v2)
    jac = np.zeros(F.shape[:-1] + (4, 4))
    jac[..., 0:2, 0:2] = _real_block(du1, dbu1)
    jac[..., 2:4, 0:2] = _real_block(dv1, dbv1)
    jac[..., 0:2, 2:4] = -_real_block(du2, dbu2)
    jac[..., 2:4, 2:4] = -_real_block(dv2, dbv2)
    return F, jac


def _newton(M1, M2, z1, z2, target=None, steps=_NEWTON_STEPS, max_step=0.25):
    """Batched Newton for F(z₁, z₂) = target; returns (z₁, z₂, |F - target|)."""
    z1 = np.array(z1, dtype=complex)
    z2 = np.array(z2, dtype=complex)
    t = np.zeros(4) if target is None else target
    r1, r2 = M1.radius, M2.radius
    for _ in range(steps):
        F, jac = _difference(M1, M2, z1, z2)
        delta = -np.einsum("kij,kj->ki", np.linalg.pinv(jac), F - t)
        norm = np.linalg.norm(delta, axis=-1, keepdims=True)
        delta = np.where(norm > max_step, delta * max_step / np.maximum(norm, 1e-300), delta)
        z1 = z1 + delta[:, 0] + 1j * delta[:, 1]
        z2 = z2 + delta[:, 2] + 1j * delta[:, 3]
        z1 = np.where(np.abs(z1) < r1, z1, z1 * 0.999 * r1 / np.abs(z1))
        z2 = np.where(np.abs(z2) < r2, z2, z2 * 0.999 * r2 / np.abs(z2))
    F, _ = _difference(M1, M2, z1, z2)
    return z1, z2, np.linalg.norm(F - t, axis=-1)


def _dedupe(z1, z2, tol) -> List[Tuple[complex, complex]]:
    roots = []
    for a, b in zip(z1, z2):
        if all(abs(a - p) > tol or abs(b - q) > tol for p, q in roots):
            roots.append((complex(a), complex(b)))
    return roots


def _regular_values(count: int, scale: float) -> List[np.ndarray]:
    rng = np.random.default_rng(7)
    out = []
    for _ in range(count):
        x = rng.normal(size=4)
        out.append(scale * x / np.linalg.norm(x))
    return out


def _kronecker_count(M1, M2, root, rho, eta, rings=(1 / 8, 1 / 3, 2 / 3), angles=6) -> int:
    """Signed count of preimages of η inside the ρ-polydisk around ``root``."""
    offsets = [0j] + [rho * f * np.exp(2j * np.pi * k / angles) for f in rings for k in range(angles)]
    o1, o2 = np.meshgrid(offsets, offsets, indexing="ij")
    z1, z2, err = _newton(M1, M2, root[0] + o1.ravel(), root[1] + o2.ravel(), target=eta)
    ok = (err < _ROOT_TOL) & (np.abs(z1 - root[0]) < rho) & (np.abs(z2 - root[1]) < rho)
    preimages = _dedupe(z1[ok], z2[ok], 1e-7)
    if not preimages:
        return 0
    _, jac = _difference(M1, M2, np.array([p[0] for p in preimages]), np.array([p[1] for p in preimages]))
    return int(np.sum(np.sign(np.linalg.det(jac))))


def _winding(values: np.ndarray) -> int:
    phase = np.unwrap(np.angle(values))
    return int(np.round((phase[-1] - phase[0] + np.angle(values[0] / values[-1])) / (2 * np.pi)))


def vanishing_order(M: DiskMap, z0: complex, radius: float = 0.02, samples: int = 128) -> int:
    """Order of vanishing of dM at z0, from the winding of each nonvanishing
    derivative component on a small circle."""
    circle = z0 + radius * np.exp(2j * np.pi * np.arange(samples + 1) / samples)
    du, dbu, dv, dbv = M.derivatives(circle)
    orders = []
    for d in (du, dv):
        if np.min(np.abs(d)) > 1e-12:
            orders.append(max(_winding(d), 0))
    if not orders:
        raise NumericalFailureError("derivative vanishes on the test circle", {"z0": to_pair(z0)})
    return min(orders)


def intersect_disks(M1: DiskMap, M2: DiskMap) -> List[IntersectionRecord]:
    """Isolated common values of M₁ and M₂ with their intersection indices."""
    coarse = build_grid(_COARSE_RESOLUTION).nodes.ravel()
    p1 = np.concatenate([[0j], 0.95 * M1.radius * coarse])
    p2 = np.concatenate([[0j], 0.95 * M2.radius * coarse])
    u1, v1 = M1.evaluate(p1)
    u2, v2 = M2.evaluate(p2)
    dist = np.maximum(np.abs(u1[:, None] - u2[None, :]), np.abs(v1[:, None] - v2[None, :]))
    flat = np.argsort(dist, axis=None)[:_CANDIDATES]
    i1, i2 = np.unravel_index(flat, dist.shape)
    z1, z2, err = _newton(M1, M2, p1[i1], p2[i2])
    inside = (np.abs(z1) < 0.999 * M1.radius) & (np.abs(z2) < 0.999 * M2.radius)
    ok = (err < _ROOT_TOL) & inside
    roots = _dedupe(z1[ok], z2[ok], _DEDUPE_TOL)
    if len(roots) > _MAX_ROOTS:
        raise NumericalFailureError("non-isolated intersection", {"roots_found": len(roots)})
    records = []
    for k, root in enumerate(roots):
        others = [abs(root[0] - q[0]) + abs(root[1] - q[1]) for j, q in enumerate(roots) if j != k]
        rho = min([0.1 * min(M1.radius, M2.radius)] + [0.4 * d for d in others])
        counts = [_kronecker_count(M1, M2, root, rho, eta) for eta in _regular_values(2, _REGULAR_VALUE)]
        if counts[0] != counts[1]:
            logger.debug("index disagreement %s at %s, refining", counts, root)
            counts = [
                _kronecker_count(M1, M2, root, rho, eta, rings=(1 / 16, 1 / 8, 1 / 4, 1 / 2, 3 / 4), angles=10)
                for eta in _regular_values(2, _REGULAR_VALUE / 10)
            ]
            if counts[0] != counts[1]:
                raise NumericalFailureError(
                    "intersection index undefined at tolerance",
                    {"preimages": [to_pair(root[0]), to_pair(root[1])], "counts": counts},
                )
        point_u, point_v = M1.evaluate(np.array([root[0]]))
        mult = (1 + vanishing_order(M1, root[0]), 1 + vanishing_order(M2, root[1]))
        records.append(
            IntersectionRecord(
                point=(to_pair(point_u[0]), to_pair(point_v[0])),
                preimages=(to_pair(root[0]), to_pair(root[1])),
                index=counts[0],
                multiplicities=mult,
            )
        )
    return records


@dataclass(frozen=True, eq=False)
class CurveSlice:
    """Closed polyline M ∩ S_r, consecutive points joined, last joined to first."""

    points: np.ndarray
    r: float
    source: str = ""
    parameters: Optional[np.ndarray] = None
    transversality_margin: float = 0.0
    fr_angle_degrees: float = 90.0
    max_step: float = 0.0

    @property
    def real_points(self) -> np.ndarray:
        return _real4(self.points[:, 0], self.points[:, 1])

    def length(self) -> float:
        x = self.real_points
        return float(np.sum(np.linalg.norm(np.roll(x, -1, axis=0) - x, axis=1)))

    def to_records(self) -> List[List[float]]:
        return [[float(c) for c in row] for row in self.real_points]


def _structure_matrix(J: AlmostComplexStructure, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    out = np.zeros(u.shape + (4, 4))
    out[..., 0:2, 0:2] = J.a_at(u, v)
    out[..., 2:4, 2:4] = J.b_at(u, v)
    return out


def _fr_angles(points: np.ndarray, J: AlmostComplexStructure) -> np.ndarray:
    """Angle in degrees between the curve and the J-complex planes of S_r."""
    x = _real4(points[:, 0], points[:, 1])
    tangent = np.roll(x, -1, axis=0) - np.roll(x, 1, axis=0)
    n = x / np.linalg.norm(x, axis=1, keepdims=True)
    jn = np.einsum("kij,kj->ki", _structure_matrix(J, points[:, 0], points[:, 1]), n)
    e = jn - np.sum(jn * n, axis=1, keepdims=True) * n
    e /= np.linalg.norm(e, axis=1, keepdims=True)
    t = tangent - np.sum(tangent * n, axis=1, keepdims=True) * n
    s = np.abs(np.sum(t * e, axis=1)) / np.linalg.norm(t, axis=1)
    return np.degrees(np.arcsin(np.clip(s, 0.0, 1.0)))


def _ray_crossings(M: DiskMap, z0: complex, r: float, angles: np.ndarray) -> np.ndarray:
    reach = M.radius - abs(z0)
    s_grid = np.linspace(0.0, 0.999 * reach, _RAY_SAMPLES)
    out = np.empty(angles.size)
    for k, phi in enumerate(angles):
        e = np.exp(1j * phi)
        u, v = M.evaluate(z0 + s_grid * e)
        mod = np.sqrt(np.abs(u) ** 2 + np.abs(v) ** 2)
        above = np.nonzero(mod > r)[0]
        if above.size == 0:
            raise NumericalFailureError("slice does not close inside the disk", {"r": r, "angle": float(phi)})
        j = above[0]

        def gap(s, e=e):
            uu, vv = M.evaluate(np.array([z0 + s * e]))
            return float(np.sqrt(abs(uu[0]) ** 2 + abs(vv[0]) ** 2)) - r

        out[k] = brentq(gap, s_grid[j - 1], s_grid[j], xtol=1e-15, rtol=4 * np.finfo(float).eps)
    return out


def sphere_slice(
    M: DiskMap,
    r: float,
    J: Optional[AlmostComplexStructure] = None,
    max_step: Optional[float] = None,
    fr_min_angle: Optional[float] = None,
    source: str = "",
) -> CurveSlice:
    """Trace M ∩ S_r by rays from the minimizer of |M| on the parameter disk.

    The number of points is the smallest power of two keeping consecutive
    points within ``max_step·r``.
    """
    settings = get_settings()
    max_step = settings.slice_max_step if max_step is None else max_step
    fr_min_angle = settings.fr_min_angle_degrees if fr_min_angle is None else fr_min_angle
    J = J or standard_structure()
    if r <= 0:
        raise SchemaError("sphere radius must be positive", {"r": r})
    starts = np.concatenate([[0j], M.radius * M.grid.nodes.ravel()])
    u, v = M.evaluate(starts)
    mod = np.sqrt(np.abs(u) ** 2 + np.abs(v) ** 2)
    z0 = starts[int(np.argmin(mod))]
    if mod.min() >= r:
        raise NumericalFailureError("sphere does not meet the disk", {"r": r, "min_modulus": float(mod.min())})

    n = _MIN_RAYS
    while True:
        angles = 2 * np.pi * np.arange(n) / n
        s = _ray_crossings(M, z0, r, angles)
        params = z0 + s * np.exp(1j * angles)
        pu, pv = M.evaluate(params)
        pts = np.stack([pu, pv], axis=1)
        x = _real4(pu, pv)
        step = np.max(np.linalg.norm(np.roll(x, -1, axis=0) - x, axis=1))
        if step <= max_step * r:
            break
        if n >= _MAX_RAYS:
            raise NumericalFailureError("slice refinement exceeded the ray budget", {"r": r, "step": float(step)})
        n *= 2

    du, dbu, dv, dbv = M.derivatives(params)
    e = np.exp(1j * angles)
    radial = _real4(du * e + dbu * np.conj(e), dv * e + dbv * np.conj(e))
    normal = x / np.linalg.norm(x, axis=1, keepdims=True)
    cosines = np.sum(radial * normal, axis=1) / np.linalg.norm(radial, axis=1)
    margin = float(np.min(cosines))
    angle = float(np.min(_fr_angles(pts, J)))
    if margin < _TANGENTIAL_MARGIN:
        raise NumericalFailureError("tangential crossing of the sphere", {"r": r, "margin": margin})
    if angle < fr_min_angle:
        raise NumericalFailureError(
            "slice too close to the J-complex planes of the sphere",
            {"r": r, "angle_degrees": angle, "threshold": fr_min_angle},
        )
    return CurveSlice(pts, float(r), source, params, margin, angle, float(step))


def _projection_frame(rng: np.random.Generator, avoid: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Pole N on S³ away from the curves and an oriented frame of N^⊥ with
    det[-N, f₁, f₂, f₃] > 0."""
    for _ in range(100):
        pole = rng.normal(size=4)
        pole /= np.linalg.norm(pole)
        if np.min(np.linalg.norm(avoid - pole, axis=1)) > 0.2:
            break
    else:
        raise NumericalFailureError("no admissible projection pole")
    q, _ = np.linalg.qr(np.column_stack([pole, rng.normal(size=(4, 3))]))
    frame = q[:, 1:]
    if np.linalg.det(np.column_stack([-pole, frame])) < 0:
        frame[:, 2] = -frame[:, 2]
    return pole, frame


def _stereographic(y: np.ndarray, pole: np.ndarray, frame: np.ndarray) -> np.ndarray:
    dot = y @ pole
    return (y - dot[:, None] * pole[None, :]) @ frame / (1.0 - dot)[:, None]


def _crossing_sum(a: np.ndarray, b: np.ndarray) -> Optional[int]:
    """Twice the linking number of closed polygons a, b in ℝ³ from the
    diagram seen from +x₃; None when the diagram is not generic."""
    pa, ra = a[:, :2], np.roll(a, -1, axis=0)[:, :2] - a[:, :2]
    pb, rb = b[:, :2], np.roll(b, -1, axis=0)[:, :2] - b[:, :2]
    za, dza = a[:, 2], np.roll(a, -1, axis=0)[:, 2] - a[:, 2]
    zb, dzb = b[:, 2], np.roll(b, -1, axis=0)[:, 2] - b[:, 2]
    qp = pb[None, :, :] - pa[:, None, :]
    denom = ra[:, None, 0] * rb[None, :, 1] - ra[:, None, 1] * rb[None, :, 0]
    with np.errstate(divide="ignore", invalid="ignore"):
        s = (qp[..., 0] * rb[None, :, 1] - qp[..., 1] * rb[None, :, 0]) / denom
        t = (qp[..., 0] * ra[:, None, 1] - qp[..., 1] * ra[:, None, 0]) / denom
    hit = (s >= 0) & (s < 1) & (t >= 0) & (t < 1) & np.isfinite(s) & np.isfinite(t)
    if not np.any(hit):
        return 0
    ia, ib = np.nonzero(hit)
    height_a = za[ia] + s[ia, ib] * dza[ia]
    height_b = zb[ib] + t[ia, ib] * dzb[ib]
    scale = max(np.ptp(a), np.ptp(b))
    edge = np.minimum(np.minimum(s[ia, ib], 1 - s[ia, ib]), np.minimum(t[ia, ib], 1 - t[ia, ib]))
    if np.any(np.abs(height_a - height_b) < 1e-12 * scale) or np.any(edge < 1e-9):
        return None
    over = np.where(height_a > height_b, 1, -1)
    return int(np.sum(np.sign(denom[ia, ib]) * over))


def linking_number(g1: CurveSlice, g2: CurveSlice, seed: int = 0) -> int:
    """Linking number in S_r via two independent stereographic diagrams."""
    if abs(g1.r - g2.r) > 1e-8 * max(g1.r, 1.0):
        raise SchemaError("slices lie on different spheres", {"r1": g1.r, "r2": g2.r})
    y1 = g1.real_points / g1.r
    y2 = g2.real_points / g2.r
    gap = np.min(np.linalg.norm(y1[:, None, :] - y2[None, :, :], axis=-1))
    if gap < 1e-6:
        raise NumericalFailureError("slices intersect", {"min_distance": float(gap * g1.r)})
    rng = np.random.default_rng(seed)
    both = np.vstack([y1, y2])
    values = []
    for _ in range(_PROJECTION_ATTEMPTS * 2):
        pole, frame = _projection_frame(rng, both)
        rot = Rotation.random(random_state=rng).as_matrix()
        a = _stereographic(y1, pole, frame) @ rot.T
        b = _stereographic(y2, pole, frame) @ rot.T
        twice = _crossing_sum(a, b)
        if twice is None or twice % 2:
            continue
        values.append(twice // 2)
        if len(values) >= 2:
            if values[-1] == values[-2]:
                return values[-1]
    raise NumericalFailureError("projections disagree", {"values": values})


def verify_linking_index(
    M1: DiskMap,
    M2: DiskMap,
    radii: Sequence[float],
    J: Optional[AlmostComplexStructure] = None,
    max_step: Optional[float] = None,
) -> LinkingIndexReport:
    """Compare linking numbers of sphere slices with the total intersection
    index inside each ball, and check δ_p ≥ μ₁μ₂."""
    intersections = intersect_disks(M1, M2)
    rows = []
    slices = []
    for r in radii:
        inside = [rec for rec in intersections if np.hypot(*rec.point[0]) ** 2 + np.hypot(*rec.point[1]) ** 2 < r ** 2]
        index_sum = sum(rec.index for rec in inside)
        try:
            s1 = sphere_slice(M1, r, J, max_step, source="M1")
            s2 = sphere_slice(M2, r, J, max_step, source="M2")
            lk = linking_number(s1, s2)
            slices.append({"radius": r, "first": s1.to_records(), "second": s2.to_records()})
        except NumericalFailureError as e:
            rows.append(LinkingReport(radius=r, index_sum=index_sum, admissible=False, reason=e.message))
            continue
        rows.append(
            LinkingReport(
                radius=r,
                linking_number=lk,
                index_sum=index_sum,
                equal=lk == index_sum,
                transversality_margin=min(s1.transversality_margin, s2.transversality_margin),
                fr_angle_degrees=min(s1.fr_angle_degrees, s2.fr_angle_degrees),
            )
        )
    admissible = [row for row in rows if row.admissible]
    if not admissible:
        raise NumericalFailureError("no admissible radius", {"radii": list(radii)})
    return LinkingIndexReport(
        intersections=intersections,
        radii=rows,
        positivity=all(rec.index >= 1 for rec in intersections),
        multiplicity_bound=all(rec.index >= rec.multiplicities[0] * rec.multiplicities[1] for rec in intersections),
        all_equal=all(row.equal for row in admissible),
        slices=slices,
    )
