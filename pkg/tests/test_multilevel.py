import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hyperseg.fitting import build_prior, initial_constants
from hyperseg.grid import GridSpec, nodal_coordinates
from hyperseg.hyperelastic import RegularizerParams, determinant_field
from hyperseg.imagemodel import fit_image
from hyperseg.multilevel import build_pyramid, default_levels, prolong, restrict_labels, run_multilevel
from hyperseg.optimizer import SegmentationProblem, SolverConfig, ggn_solve
from hyperseg.phantoms import disk_2d

from oracles import parent_simplices, simplex_jacobians, smooth_perturbation

P2 = RegularizerParams(100.0, 0.0, 100.0)


def test_restrict_labels_tie_goes_to_lowest_id():
    lab = np.array([[1, 1, 2, 2], [2, 2, 1, 1], [3, 3, 3, 1], [2, 3, 1, 1]])
    coarse = restrict_labels(lab)
    np.testing.assert_array_equal(coarse, [[1, 1], [3, 1]])


def test_restrict_labels_majority_3d():
    lab = np.ones((2, 2, 2), dtype=int)
    lab[0, 0, :] = 2
    lab[1, 1, 1] = 2
    assert restrict_labels(lab)[0, 0, 0] == 1
    lab[0, 1, 0] = 2  # 4 against 4: tie
    assert restrict_labels(lab)[0, 0, 0] == 1
    lab[1, 0, 0] = 2
    assert restrict_labels(lab)[0, 0, 0] == 2


def test_build_pyramid_examples():
    img = np.full((16, 16), 5.0)
    lab = np.ones((16, 16), dtype=int)
    lab[4:12, 4:12] = 2
    pyr = build_pyramid(img, lab, 1)
    assert pyr.L == 1 and pyr.levels[0].image is img
    pyr = build_pyramid(img, lab, 3)
    assert [lvl.grid.n for lvl in pyr.levels] == [16, 8, 4]
    assert all(np.all(lvl.image == 5.0) for lvl in pyr.levels)
    with pytest.raises(ValueError):
        build_pyramid(np.zeros((12, 12)), np.ones((12, 12), dtype=int), 4)
    with pytest.raises(ValueError):
        build_pyramid(img, lab, 5)
    with pytest.raises(ValueError):
        build_pyramid(img, lab[:8], 2)


def test_build_pyramid_drops_levels_where_a_region_vanishes(caplog):
    img = np.zeros((16, 16))
    lab = np.ones((16, 16), dtype=int)
    lab[4:6, 4:6] = 2  # one aligned 2x2 block survives one coarsening, not two
    with caplog.at_level("WARNING"):
        pyr = build_pyramid(img, lab, 4)
    assert [lvl.grid.n for lvl in pyr.levels] == [16, 8]
    assert "vanishes" in caplog.text


def test_default_levels():
    assert default_levels(64) == 4
    assert default_levels(256) == 6
    assert default_levels(8) == 1
    assert default_levels(24) == 2


def test_prolong_identity_and_affine():
    for dim in (2, 3):
        gc, gf = GridSpec(dim, 2), GridSpec(dim, 4)
        np.testing.assert_allclose(prolong(nodal_coordinates(gc), gc, gf), nodal_coordinates(gf), atol=1e-15)
        r = np.random.default_rng(dim)
        B, t = r.standard_normal((dim, dim)), r.standard_normal(dim)
        Yc = (B @ nodal_coordinates(gc).reshape(dim, -1) + t[:, None]).ravel()
        Yf = (B @ nodal_coordinates(gf).reshape(dim, -1) + t[:, None]).ravel()
        np.testing.assert_allclose(prolong(Yc, gc, gf), Yf, atol=1e-13)
    with pytest.raises(ValueError):
        prolong(nodal_coordinates(GridSpec(2, 2)), GridSpec(2, 2), GridSpec(2, 6))


@pytest.mark.parametrize("dim,nc", [(2, 3), (3, 2)])
def test_prolongation_preserves_determinants(dim, nc):
    gc, gf = GridSpec(dim, nc), GridSpec(dim, 2 * nc)
    parent = parent_simplices(dim, nc)
    assert len(parent) == gf.n_simplices
    for seed in range(50):
        Yc = smooth_perturbation(dim, nc, 0.15, seed)
        Yf = prolong(Yc, gc, gf)
        vc = np.linalg.det(simplex_jacobians(dim, nc, Yc))
        assert vc.min() > 0
        np.testing.assert_allclose(determinant_field(gf, Yf), vc[parent], atol=1e-12)


@settings(max_examples=20, deadline=None)
@given(dim=st.sampled_from([2, 3]), seed=st.integers(0, 2**31))
def test_positivity_transport(dim, seed):
    gc = GridSpec(dim, 3)
    Yc = smooth_perturbation(dim, 3, 0.15, seed)
    vc = determinant_field(gc, Yc)
    vf = determinant_field(gc.refine(), prolong(Yc, gc, gc.refine()))
    assert vc.min() > 0 and vf.min() > 0
    assert abs(vf.min() - vc.min()) <= 1e-12 and abs(vf.max() - vc.max()) <= 1e-12


def test_single_level_equals_ggn_solve():
    ph = disk_2d(16)
    config = SolverConfig(max_outer_iter=6)
    ml = run_multilevel(ph.image, ph.prior, P2, config, L=1)
    g = GridSpec(2, 16)
    problem = SegmentationProblem(g, fit_image(g, ph.image), build_prior(ph.prior), P2, config)
    warped, _ = problem.warped(problem.X, gradient=False)
    ref = ggn_solve(problem, problem.X, initial_constants(warped, problem.prior), config)
    np.testing.assert_array_equal(ml.final.state.Y, ref.state.Y)
    assert ml.final.state.F == ref.state.F
    assert len(ml.results) == 1 and ml.grids == [g]


def test_multilevel_levels_start_feasible_and_decrease():
    ph = disk_2d(32)
    ml = run_multilevel(ph.image, ph.prior, P2, SolverConfig(max_outer_iter=10), L=3)
    assert [g.n for g in ml.grids] == [8, 16, 32]
    for k, res in enumerate(ml.results):
        assert res.level == k
        assert res.history[0]["min_det"] > 0 and res.history[0]["iteration"] == 0
        F = [r["F"] for r in res.history]
        assert all(b < a for a, b in zip(F, F[1:]))
    assert len(ml.history) == sum(len(r.history) for r in ml.results)
    assert ml.final.state.min_det > 0
