"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Phantom runs are cached at module level so that the feasibility and I/O
checks reuse the runs made by the segmentation criteria.
"""
import time

import numpy as np
import pytest

from hyperseg import formats
from hyperseg.diagnostics import gradient_check, smooth_test_state
from hyperseg.fitting import initial_constants
from hyperseg.grid import GridSpec
from hyperseg.hyperelastic import RegularizerParams, cofactor_field, determinant_field
from hyperseg.imagemodel import fit_image
from hyperseg.multilevel import prolong, run_multilevel
from hyperseg.optimizer import SegmentationProblem, SolverConfig
from hyperseg.phantoms import banded_sphere_3d, disk_2d, two_blobs_2d, two_ellipsoids_3d
from hyperseg.segmenter import segmentation_from_transform

from oracles import cofactor_by_minors, dense_operator, parent_simplices, simplex_jacobians, smooth_perturbation

P2 = RegularizerParams(100.0, 0.0, 100.0)
P3 = RegularizerParams(10.0, 1.0, 1.0)

_RUNS: dict[str, dict] = {}


def phantom_run(name, phantom, params, **kw):
    if name not in _RUNS:
        t0 = time.perf_counter()
        ml = run_multilevel(phantom.image, phantom.prior, params, **kw)
        seg = segmentation_from_transform(ml.grids[-1], ml.final.state.Y, phantom.prior, phantom.ground_truth)
        _RUNS[name] = {"phantom": phantom, "ml": ml, "seg": seg, "seconds": time.perf_counter() - t0}
    return _RUNS[name]


def _problem(dim, n, bc, seed, amplitude=0.15):
    grid, image, prior, _ = smooth_test_state(dim, n)
    grid = GridSpec(dim, n, bc)
    params = P2 if dim == 2 else P3
    problem = SegmentationProblem(grid, fit_image(grid, image.sample()), prior, params, SolverConfig())
    Y = smooth_perturbation(dim, n, amplitude, seed)
    if bc == "dirichlet":
        Y = np.where(problem.free, Y, problem.X)
    warped, _ = problem.warped(Y, gradient=False)
    C = initial_constants(warped, prior) + np.random.default_rng(seed).normal(0, 5, prior.m)
    return problem, Y, C


def test_criterion_1_gradient(verdict):
    t0 = time.perf_counter()
    worst = 0.0
    for dim, n in [(2, 4), (3, 3)]:
        problem, Y, C = _problem(dim, n, "natural", seed=11)
        assert determinant_field(problem.grid, Y).min() > 0
        worst = max(worst, gradient_check(problem, Y, C).max_error)
    seconds = time.perf_counter() - t0
    ok = worst <= 1e-6 and seconds < 10
    assert verdict("criterion 1 gradient", ok, f"max rel err {worst:.2e}, {seconds:.1f} s")


def test_criterion_2_oracle(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    g = GridSpec(3, 2)
    worst = 0.0
    for _ in range(200):
        Y = smooth_perturbation(3, 2, 0.0, 0) + 0.3 * g.h * rng.standard_normal(g.size)
        J = simplex_jacobians(3, 2, Y)
        s, v = cofactor_field(g, Y), determinant_field(g, Y)
        worst = max(worst, np.abs(np.moveaxis(s, 2, 0) - cofactor_by_minors(J)).max(),
                    np.abs(v - np.linalg.det(J)).max())
    seconds = time.perf_counter() - t0
    ok = worst <= 1e-12 and seconds < 5
    assert verdict("criterion 2 oracle", ok, f"max abs err {worst:.1e}, {seconds:.1f} s")


def test_criterion_3_spd(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    worst_sym, min_quad = 0.0, np.inf
    for bc in ("natural", "dirichlet"):
        for k in range(50):
            dim, n = (2, 5) if k % 2 else (3, 3)
            problem, Y, C = _problem(dim, n, bc, seed=k)
            H = problem.hessian(problem.evaluate(Y, C))
            A = dense_operator(H.apply, H.shape[0])
            worst_sym = max(worst_sym, np.abs(A - A.T).max() / np.abs(A).max())
            W = rng.standard_normal((H.shape[0], 100))
            quad = np.einsum("ij,ij->j", W, A @ W) / np.einsum("ij,ij->j", W, W)
            min_quad = min(min_quad, quad.min())
    seconds = time.perf_counter() - t0
    ok = worst_sym <= 1e-10 and min_quad > 0 and seconds < 30
    assert verdict("criterion 3 SPD", ok, f"asym {worst_sym:.1e}, min Rayleigh {min_quad:.2e}, {seconds:.1f} s")


@pytest.mark.slow
def test_criterion_5_topology_3d(verdict):
    band = phantom_run("banded_sphere", banded_sphere_3d(64), P3)
    ell = phantom_run("two_ellipsoids", two_ellipsoids_3d(64), P3)
    bm, em = band["seg"].metrics, ell["seg"].metrics
    seconds = band["seconds"] + ell["seconds"]
    ok = (bm["components"][2] == 1 and bm["dice"][2] >= 0.90
          and em["components"][2] == 2 and em["dice"][2] >= 0.90
          and min(band["seg"].det_range[0], ell["seg"].det_range[0]) > 0
          and seconds <= 600)
    detail = (f"band: {bm['components'][2]} comp, dice {bm['dice'][2]:.3f}; "
              f"ellipsoids: {em['components'][2]} comp, dice {em['dice'][2]:.3f}, "
              f"min det {ell['seg'].det_range[0]:.3f}; {seconds:.0f} s")
    assert verdict("criterion 5 topology 3D", ok, detail)


def test_criterion_6_blobs_2d(verdict):
    one = phantom_run("blobs_one", two_blobs_2d(256, 1), P2)
    two = phantom_run("blobs_two", two_blobs_2d(256, 2), P2)
    om, tm = one["seg"].metrics, two["seg"].metrics
    seconds = one["seconds"] + two["seconds"]
    ok = (om["components"][2] == 1 and tm["components"][2] == 2
          and om["dice"][2] >= 0.95 and tm["dice"][2] >= 0.95
          and min(one["seg"].det_range[0], two["seg"].det_range[0]) > 0
          and seconds <= 120)
    detail = (f"one-component prior: dice {om['dice'][2]:.3f}; two-component prior: "
              f"{tm['components'][2]} comp, dice {tm['dice'][2]:.3f}; {seconds:.0f} s")
    assert verdict("criterion 6 blobs 2D", ok, detail)


def test_criterion_7_multilevel(verdict):
    parents = {2: parent_simplices(2, 4), 3: parent_simplices(3, 2)}
    worst = 0.0
    for k in range(100):
        dim, nc = (2, 4) if k % 2 else (3, 2)
        gc, gf = GridSpec(dim, nc), GridSpec(dim, 2 * nc)
        Yc = smooth_perturbation(dim, nc, 0.15, k)
        vc, vf = determinant_field(gc, Yc), determinant_field(gf, prolong(Yc, gc, gf))
        worst = max(worst, np.abs(vf - vc[parents[dim]]).max())
    multi = phantom_run("disk", disk_2d(64, sigma=2.0), P2)
    ph = multi["phantom"]
    single = run_multilevel(ph.image, ph.prior, P2, L=1)
    Fm, Fs = multi["ml"].final.state.F, single.final.state.F
    gap = abs(Fm - Fs) / Fs
    _RUNS["disk_single"] = {"phantom": ph, "ml": single, "seg": None, "seconds": 0.0}
    ok = worst <= 1e-12 and gap <= 0.05
    assert verdict("criterion 7 multilevel", ok, f"det err {worst:.1e}, F multi {Fm:.2f} vs single {Fs:.2f}")


def _all_histories():
    for name, run in _RUNS.items():
        for res in run["ml"].results:
            yield name, res.history


def test_criterion_4_feasibility(verdict):
    if "disk" not in _RUNS:
        phantom_run("disk", disk_2d(64, sigma=2.0), P2)
    bad = []
    for name, hist in _all_histories():
        F = [r["F"] for r in hist]
        if min(r["min_det"] for r in hist) <= 0 or any(b >= a for a, b in zip(F, F[1:])):
            bad.append(name)
    ok = not bad
    assert verdict("criterion 4 feasibility", ok, f"runs {sorted(_RUNS)}" + (f", failing {bad}" if bad else ""))


def test_criterion_8_minres(verdict):
    if "disk" not in _RUNS:
        phantom_run("disk", disk_2d(64, sigma=2.0), P2)
    n_steps, capped, bad = 0, 0, []
    for name, hist in _all_histories():
        for r in hist[1:]:
            n_steps += 1
            capped += r["minres_capped"]
            if not (r["minres_relres"] <= 0.1 or r["minres_capped"] or r["fallback"]) or not r["slope"] < 0:
                bad.append((name, r["level"], r["iteration"]))
    ok = not bad and n_steps > 0
    assert verdict("criterion 8 MINRES", ok, f"{n_steps} steps, {capped} capped" + (f", failing {bad[:3]}" if bad else ""))


def test_criterion_9_io(verdict, tmp_path):
    if "disk" not in _RUNS:
        phantom_run("disk", disk_2d(64, sigma=2.0), P2)
    bad = []
    for name, run in _RUNS.items():
        if run["seg"] is None:
            continue
        ml = run["ml"]
        grid = ml.grids[-1]
        mask = run["seg"].mask
        ext = "pgm" if grid.dim == 2 else "mhd"
        formats.write_labels(tmp_path / f"{name}.{ext}", mask)
        back = formats.load_labels(tmp_path / f"{name}.{ext}")
        formats.write_transform(tmp_path / f"{name}.txt", grid, ml.final.state.Y)
        g2, Y2 = formats.read_transform(tmp_path / f"{name}.txt")
        same_mask = back.dtype == mask.dtype and back.shape == mask.shape and back.tobytes() == mask.tobytes()
        same_y = (g2.dim, g2.n) == (grid.dim, grid.n) and Y2.tobytes() == ml.final.state.Y.tobytes()
        if not (same_mask and same_y):
            bad.append(name)
    ok = not bad
    assert verdict("criterion 9 I/O", ok, f"runs {sorted(k for k, r in _RUNS.items() if r['seg'] is not None)}")
