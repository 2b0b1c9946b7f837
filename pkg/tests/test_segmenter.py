import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hyperseg.grid import GridSpec, nodal_coordinates
from hyperseg.hyperelastic import determinant_field
from hyperseg.phantoms import ellipsoid, labels_from, box
from hyperseg.segmenter import (
    Geometry,
    background_label,
    count_components,
    dice,
    extract_boundary,
    rasterize_mask,
    segmentation_from_transform,
    topology_report,
    warp_geometry,
)

from oracles import smooth_perturbation


def _reflected(g):
    Y = nodal_coordinates(g)
    Y[: g.n_nodes] *= -1  # mirror x1 only: orientation reverses
    return Y


def test_full_domain_boundary_is_frame():
    geo = extract_boundary(np.ones((8, 8), dtype=int))[1]
    assert geo.n_components() == 1 and geo.is_closed()
    v = geo.vertices
    on_frame = np.isclose(v, 0, atol=1e-12) | np.isclose(v, 1, atol=1e-12)
    assert np.all(on_frame.any(axis=1))
    assert abs(geo.length_or_area() - 4.0) <= 0.05 * 4.0


def test_square_perimeter():
    lab = np.ones((32, 32), dtype=int)
    lab[8:24, 8:24] = 2
    geo = extract_boundary(lab)[2]
    assert geo.n_components() == 1 and geo.is_closed()
    assert abs(geo.length_or_area() - 2.0) <= 0.05 * 2.0


def test_two_cuboids_give_two_closed_surfaces():
    n = 16
    lab = labels_from(box(n, (0.1, 0.2, 0.2), (0.4, 0.8, 0.8)), box(n, (0.6, 0.2, 0.2), (0.9, 0.8, 0.8)))
    geo = extract_boundary(lab)
    assert geo[2].n_components() == 2 and geo[2].is_closed()
    assert geo[2].euler_characteristic() == 4  # two spheres
    assert geo[1].is_closed()


def test_warp_identity_and_translation():
    g = GridSpec(2, 16)
    lab = labels_from(ellipsoid(16, (0.5, 0.5), 0.25))
    geo = extract_boundary(lab)[2]
    X = nodal_coordinates(g)
    same = warp_geometry(g, X, geo)
    np.testing.assert_allclose(same.vertices, geo.vertices, atol=1e-14)
    shift = X.copy()
    shift[: g.n_nodes] += 0.1
    moved = warp_geometry(g, shift, geo)
    np.testing.assert_allclose(moved.vertices - geo.vertices, np.tile([0.1, 0.0], (len(geo.vertices), 1)), atol=1e-14)
    np.testing.assert_array_equal(moved.elements, geo.elements)
    assert len(moved.edges()) == len(geo.edges())


def test_warp_connectivity_3d():
    g = GridSpec(3, 8)
    lab = labels_from(ellipsoid(8, (0.5, 0.5, 0.5), 0.3))
    geo = extract_boundary(lab)[2]
    warped = warp_geometry(g, smooth_perturbation(3, 8, 0.3, 1), geo)
    assert warped.vertices.shape == geo.vertices.shape
    np.testing.assert_array_equal(warped.elements, geo.elements)
    assert warped.euler_characteristic() == geo.euler_characteristic() == 2


@pytest.mark.parametrize("dim,n", [(2, 16), (3, 8)])
def test_rasterize_identity_reproduces_prior(dim, n):
    g = GridSpec(dim, n)
    lab = labels_from(ellipsoid(n, (0.5,) * dim, 0.3))
    lab[(0,) * dim] = 3
    np.testing.assert_array_equal(rasterize_mask(g, nodal_coordinates(g), lab), lab)


def test_rasterize_scaled_disk_area():
    n = 64
    g = GridSpec(2, n)
    lab = labels_from(ellipsoid(n, (0.5, 0.5), 0.25))
    X = nodal_coordinates(g)
    Y = 0.5 + 1.2 * (X - 0.5)
    mask = rasterize_mask(g, Y, lab)
    prior_area = np.sum(lab == 2)
    assert abs(np.sum(mask == 2) - 1.44 * prior_area) <= 0.1 * 1.44 * prior_area
    assert set(np.unique(mask)) <= set(np.unique(lab))


def test_rasterize_uncovered_cells_get_background():
    n = 16
    g = GridSpec(2, n)
    lab = labels_from(ellipsoid(n, (0.5, 0.5), 0.2))
    Y = 0.5 + 0.8 * (nodal_coordinates(g) - 0.5)  # shrink leaves a frame uncovered
    mask = rasterize_mask(g, Y, lab)
    assert background_label(lab) == 1
    assert np.all(mask[0, :] == 1) and np.all(mask[:, -1] == 1)
    with pytest.raises(ValueError):
        rasterize_mask(g, _reflected(g), lab)


def test_background_label_tie():
    lab = np.array([[1, 2], [2, 1]])
    assert background_label(lab) == 1


def test_topology_report_self_comparison():
    lab = labels_from(ellipsoid(16, (0.3, 0.5), 0.15), ellipsoid(16, (0.75, 0.5), 0.15))
    rep = topology_report(lab, lab, lab)
    assert rep["components"][2] == 2 and rep["components_match"]
    assert all(d == 1.0 for d in rep["dice"].values())
    with pytest.raises(ValueError):
        topology_report(lab, lab[:8])


def test_dice_one_voxel_flip():
    a = np.zeros((16, 16, 16), dtype=bool)
    a.flat[:100] = True
    b = a.copy()
    b.flat[0] = False
    assert dice(b, a) == pytest.approx(2 * 99 / 199, abs=1e-12)
    assert dice(np.zeros(3), np.zeros(3)) == 1.0


def test_count_components_full_connectivity():
    a = np.zeros((4, 4), dtype=bool)
    a[0, 0] = a[1, 1] = True  # diagonal neighbours are connected
    assert count_components(a) == 1
    b = np.zeros((5, 5, 5), dtype=bool)
    b[0, 0, 0] = b[1, 1, 1] = b[4, 4, 4] = True
    assert count_components(b) == 2


@settings(max_examples=8, deadline=None)
@given(seed=st.integers(0, 2**31), amp=st.floats(0.1, 0.45))
def test_two_spheres_stay_two_under_feasible_warp(seed, amp):
    n = 16
    g = GridSpec(3, n)
    lab = labels_from(ellipsoid(n, (0.3, 0.5, 0.5), 0.15), ellipsoid(n, (0.7, 0.5, 0.5), 0.15))
    Y = smooth_perturbation(3, n, amp * 4, seed)
    if determinant_field(g, Y).min() <= 0:
        return
    res = segmentation_from_transform(g, Y, lab, lab)
    assert res.metrics["components"][2] == 2
    assert res.metrics["components_match"]
    assert res.topology_preserving
    assert res.metrics["euler_characteristic"][2] == 4


def test_segmentation_rejects_folded():
    g = GridSpec(2, 4)
    lab = np.ones((4, 4), dtype=int)
    lab[1:3, 1:3] = 2
    with pytest.raises(ValueError):
        segmentation_from_transform(g, _reflected(g), lab)


def test_geometry_helpers():
    sq = Geometry(np.array([[0, 0], [1, 0], [1, 1], [0, 1]], float), np.array([[0, 1], [1, 2], [2, 3], [3, 0]]))
    assert sq.is_closed() and sq.n_components() == 1 and sq.length_or_area() == 4.0
    assert Geometry(np.zeros((0, 2)), np.zeros((0, 2), dtype=int)).n_components() == 0
