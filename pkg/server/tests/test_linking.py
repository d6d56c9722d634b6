import numpy as np
import pytest

from app.services.beltrami_solver import DiskMap
from app.services.disk_grid import build_grid
from app.services.experiment_service import canonical_pairs, _disk_from_seed
from app.services.linking import (
    CurveSlice,
    intersect_disks,
    linking_number,
    sphere_slice,
    verify_linking_index,
)
from app.utils.errors import NumericalFailureError, SchemaError


@pytest.fixture(scope="module")
def grid():
    return build_grid(16)


@pytest.fixture(scope="module")
def pairs(grid):
    return [(_disk_from_seed(grid, p.first), _disk_from_seed(grid, p.second)) for p in canonical_pairs()]


def hopf_circle(r, first=True, n=256):
    t = np.exp(2j * np.pi * np.arange(n) / n) * r
    zero = np.zeros(n, dtype=complex)
    pts = np.stack([t, zero], axis=1) if first else np.stack([zero, t], axis=1)
    return CurveSlice(pts, r)


def test_hopf_circles_link_once():
    assert linking_number(hopf_circle(0.5), hopf_circle(0.5, first=False)) == 1


def test_slices_on_different_spheres_are_rejected():
    with pytest.raises(SchemaError):
        linking_number(hopf_circle(0.5), hopf_circle(0.4, first=False))


def test_intersecting_slices_are_rejected():
    with pytest.raises(NumericalFailureError):
        linking_number(hopf_circle(0.5), hopf_circle(0.5))


@pytest.mark.parametrize("k,expected", [(0, 1), (1, 2), (2, 3)])
def test_intersection_index_at_the_origin(pairs, k, expected):
    m1, m2 = pairs[k]
    records = intersect_disks(m1, m2)
    assert len(records) == 1
    rec = records[0]
    assert rec.index == expected
    assert np.hypot(*rec.point[0]) < 1e-4
    assert np.hypot(*rec.point[1]) < 1e-4
    assert rec.multiplicities == (1, 1)


def test_identical_disks_are_not_isolated(grid):
    m = DiskMap.from_holomorphic(grid, [0, 1], [0])
    with pytest.raises(NumericalFailureError):
        intersect_disks(m, m)


def test_sphere_slice_of_a_line(pairs):
    line = pairs[0][0]
    s = sphere_slice(line, 0.5, source="line")
    assert s.source == "line"
    np.testing.assert_allclose(np.abs(s.points[:, 0]), 0.5, atol=1e-10)
    np.testing.assert_allclose(np.abs(s.points[:, 1]), 0.0, atol=1e-12)
    assert s.transversality_margin > 0.99
    assert s.fr_angle_degrees > 89.0
    assert s.length() == pytest.approx(np.pi, rel=1e-3)


def test_sphere_slice_needs_a_positive_radius(pairs):
    with pytest.raises(SchemaError):
        sphere_slice(pairs[0][0], 0.0)


def test_sphere_missing_the_disk(grid):
    shifted = DiskMap.from_holomorphic(grid, [0.5, 0.1], [0.5])
    with pytest.raises(NumericalFailureError):
        sphere_slice(shifted, 0.3)


@pytest.mark.parametrize("k,expected", [(0, 1), (1, 2), (2, 3)])
def test_linking_equals_index_sum(pairs, k, expected):
    m1, m2 = pairs[k]
    report = verify_linking_index(m1, m2, [0.3, 0.5])
    assert report.positivity
    assert report.multiplicity_bound
    assert report.all_equal
    for row in report.radii:
        assert row.admissible
        assert row.linking_number == expected
        assert row.index_sum == expected
    assert [s["radius"] for s in report.slices] == [0.3, 0.5]


def test_transversal_lines_link_once(pairs):
    first, second = pairs[0]
    g1 = sphere_slice(first, 0.5)
    g2 = sphere_slice(second, 0.5)
    assert linking_number(g1, g2) == 1


@pytest.mark.parametrize("k", [0, 1, 2])
def test_linking_number_is_symmetric(pairs, k):
    m1, m2 = pairs[k]
    g1, g2 = sphere_slice(m1, 0.4), sphere_slice(m2, 0.4)
    assert linking_number(g1, g2) == linking_number(g2, g1)


def test_disjoint_disks_do_not_link(grid):
    upper = DiskMap.from_holomorphic(grid, [0, 1], [0.5])
    lower = DiskMap.from_holomorphic(grid, [0, 1], [-0.5])
    assert intersect_disks(upper, lower) == []
    g1, g2 = sphere_slice(upper, 0.8), sphere_slice(lower, 0.8)
    np.testing.assert_allclose(np.abs(g1.points[:, 0]), np.sqrt(0.8 ** 2 - 0.25), atol=1e-8)
    assert linking_number(g1, g2) == 0


def test_slice_refinement_keeps_the_length(pairs):
    line = pairs[0][0]
    coarse = sphere_slice(line, 0.5, max_step=0.01)
    fine = sphere_slice(line, 0.5, max_step=0.005)
    assert len(fine.points) == 2 * len(coarse.points)
    assert fine.max_step <= 0.005 * 0.5
    assert fine.length() == pytest.approx(coarse.length(), rel=1e-2)


def test_linking_number_is_stable_across_radii(pairs):
    m1, m2 = pairs[1]
    report = verify_linking_index(m1, m2, [0.2, 0.3, 0.5, 0.7])
    assert {row.linking_number for row in report.radii} == {2}
    assert report.all_equal
