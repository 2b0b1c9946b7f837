"""Finite-difference verification of the analytic gradients."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import fitting, hyperelastic
from .fitting import build_prior
from .grid import GridSpec, cell_centers, nodal_coordinates
from .hyperelastic import RegularizerParams
from .imagemodel import fit_image
from .optimizer import SegmentationProblem, SolverConfig

#: both norms below this count as an exactly vanishing gradient
ZERO_TOL = 1e-7


@dataclass
class GradientReport:
    errors: dict[str, float]  # relative errors per term
    norms: dict[str, float]  # analytic gradient norms per term

    @property
    def max_error(self) -> float:
        return max(self.errors.values())

    def passed(self, tol: float = 1e-5) -> bool:
        return self.max_error <= tol


def _relerr(g, fd) -> float:
    g, fd = np.asarray(g), np.asarray(fd)
    scale = max(np.linalg.norm(g), np.linalg.norm(fd))
    if scale <= ZERO_TOL:
        return 0.0
    return float(np.linalg.norm(g - fd) / scale)


def _central(f, z, step):
    out = np.empty_like(z)
    for i in range(z.size):
        e = np.zeros_like(z)
        e[i] = step
        out[i] = (f(z + e) - f(z - e)) / (2 * step)
    return out


def _term_functions(problem: SegmentationProblem):
    grid, X, params = problem.grid, problem.X, problem.params
    n_y = problem.n_y

    def fit(z):
        Y, C = z[:n_y], z[n_y:]
        warped, _ = problem.warped(Y, gradient=False)
        return fitting.fit_energy(warped, problem.prior, C, grid.cell_volume)

    def length(z):
        return hyperelastic.length_energy(grid, z[:n_y], X, params.alpha_l)

    def surface(z):
        s = hyperelastic.cofactor_field(grid, z[:n_y])
        return hyperelastic.surface_energy(grid, s, params.alpha_s, params.surface_mode)

    def volume(z):
        return hyperelastic.volume_energy(grid, hyperelastic.determinant_field(grid, z[:n_y]), params.alpha_v)

    def total(z):
        return problem.energy(z[:n_y], z[n_y:])

    return {"fit": fit, "length": length, "surface": surface, "volume": volume, "total": total}


def gradient_check(problem: SegmentationProblem, Y, C, step: float = 1e-6) -> GradientReport:
    """Compare every term's analytic gradient with central differences.

    Dirichlet masking is ignored here: the full gradient is checked.
    """
    grid = problem.grid
    Y = np.asarray(Y, dtype=float)
    C = np.asarray(C, dtype=float)
    z = np.concatenate([Y, C])
    warped, grads = problem.warped(Y)
    gY_fit, gC_fit = fitting.fit_gradient(grid, warped, grads, problem.prior, C)
    terms = hyperelastic.reg_term_gradients(grid, Y, problem.X, problem.params)
    zeros_c = np.zeros_like(C)
    analytic = {
        "fit": np.concatenate([gY_fit, gC_fit]),
        "length": np.concatenate([terms["length"], zeros_c]),
        "surface": np.concatenate([terms["surface"], zeros_c]),
        "volume": np.concatenate([terms["volume"], zeros_c]),
    }
    analytic["total"] = sum(analytic.values())
    errors, norms = {}, {}
    for name, f in _term_functions(problem).items():
        fd = _central(f, z, step)
        errors[name] = _relerr(analytic[name], fd)
        norms[name] = float(np.linalg.norm(analytic[name]))
    norms["fit_Y"] = float(np.linalg.norm(gY_fit))
    return GradientReport(errors, norms)


def smooth_test_state(dim: int, n: int, amplitude: float = 0.25, flat: bool = False):
    """Deterministic smooth image, two-region prior and perturbed feasible ``Y``.

    The perturbation is ``amplitude * h`` times a product of sines that
    vanishes on the boundary, so determinants stay near 1.
    """
    grid = GridSpec(dim, n)
    xc = cell_centers(grid)
    if flat:
        img = np.full(grid.n_cells, 100.0)
    else:
        img = 127.5 * (1 + np.prod(np.cos(np.pi * (xc - 0.3)), axis=1) * np.sin(2.0 + 3.0 * xc[:, 0]))
    labels = np.where(xc[:, 0] + 0.3 * xc[:, -1] < 0.55, 1, 2).reshape(grid.cell_shape, order="F")
    X = nodal_coordinates(grid).reshape(dim, -1)
    bump = np.prod(np.sin(np.pi * X), axis=0)
    shift = np.stack([np.cos(1.0 + 2.0 * q + 3.0 * X[q]) for q in range(dim)])
    Y = (X + amplitude * grid.h * bump * shift).ravel()
    image = fit_image(grid, img.reshape(grid.cell_shape, order="F"))
    return grid, image, build_prior(labels), Y


def check_gradient_problem(dim: int, n: int, params: RegularizerParams | None = None, flat: bool = False):
    """Problem, ``Y`` and ``C`` for :func:`gradient_check` on a synthetic state."""
    if params is None:
        params = RegularizerParams(100.0, 0.0, 100.0) if dim == 2 else RegularizerParams(10.0, 1.0, 1.0)
    grid, image, prior, Y = smooth_test_state(dim, n, flat=flat)
    problem = SegmentationProblem(grid, image, prior, params, SolverConfig())
    C = np.array([60.0 + 90.0 * k for k in range(prior.m)])
    return problem, Y, C
