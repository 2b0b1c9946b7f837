"""Coarse-to-fine solution: image/label pyramids and nodal prolongation."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .fitting import build_prior, initial_constants
from .grid import GridSpec, from_components, nodal_coordinates, to_components
from .hyperelastic import InfeasibleError, RegularizerParams, determinant_field
from .imagemodel import fit_image, restrict_once
from .optimizer import SegmentationProblem, SolveResult, SolverConfig, ggn_solve

logger = logging.getLogger(__name__)


@dataclass
class Level:
    grid: GridSpec
    image: np.ndarray
    labels: np.ndarray


@dataclass
class Pyramid:
    """Levels ordered finest first, coarsest last."""

    levels: list[Level]

    @property
    def L(self) -> int:
        return len(self.levels)


def restrict_labels(labels: np.ndarray) -> np.ndarray:
    """Majority vote over each ``2^dim`` block; ties go to the lowest id."""
    lab = np.asarray(labels)
    if any(s % 2 for s in lab.shape):
        raise ValueError(f"label shape {lab.shape} not divisible by 2")
    shape = []
    for s in lab.shape:
        shape += [s // 2, 2]
    blocks = lab.reshape(shape)
    child_axes = tuple(range(1, 2 * lab.ndim, 2))
    ids = np.unique(lab)
    counts = np.stack([(blocks == i).sum(axis=child_axes) for i in ids])
    return ids[np.argmax(counts, axis=0)]


def default_levels(n: int, coarsest: int = 8) -> int:
    """Number of levels so the coarsest grid has ``coarsest`` cells per axis, if possible."""
    L = 1
    while n % 2 == 0 and n // 2 >= coarsest:
        n //= 2
        L += 1
    return L


def build_pyramid(image, labels, L: int, boundary_condition: str = "natural") -> Pyramid:
    """Block-averaged images and majority-voted labels for ``L`` levels.

    Levels on which a prior region disappears are dropped together with all
    coarser ones (with a warning).
    """
    image = np.asarray(image, dtype=float)
    labels = np.asarray(labels)
    if image.shape != labels.shape:
        raise ValueError(f"image shape {image.shape} != labels shape {labels.shape}")
    if L < 1:
        raise ValueError("L must be >= 1")
    n = image.shape[0]
    if len(set(image.shape)) != 1:
        raise ValueError("only square/cubic images are supported")
    if n % 2 ** (L - 1):
        raise ValueError(f"n={n} is not divisible by 2^{L - 1}")
    if n // 2 ** (L - 1) < 2:
        raise ValueError(f"{L} levels would leave fewer than 2 cells per axis")
    m = len(np.unique(labels))
    levels = [Level(GridSpec(image.ndim, n, boundary_condition), image, labels)]
    for _ in range(L - 1):
        img = restrict_once(levels[-1].image)
        lab = restrict_labels(levels[-1].labels)
        if len(np.unique(lab)) != m:
            logger.warning("a prior region vanishes at n=%d; using %d levels", img.shape[0], len(levels))
            break
        levels.append(Level(levels[-1].grid.coarsen(), img, lab))
    return Pyramid(levels)


def prolong(Y_coarse, grid_coarse: GridSpec, grid_fine: GridSpec) -> np.ndarray:
    """Evaluate the coarse piecewise-linear interpolant at the fine nodes.

    Fine nodes with half-integer offsets along a set of axes lie on the
    coarse Kuhn edge joining the two coarse nodes that differ along exactly
    those axes, so each fine value is a coarse value or a two-point mean.
    """
    if grid_fine.dim != grid_coarse.dim or grid_fine.n != 2 * grid_coarse.n:
        raise ValueError("prolongation requires factor-2 refinement")
    U = to_components(grid_coarse, Y_coarse)
    d, nc = grid_coarse.dim, grid_coarse.n
    out = np.empty((d,) + grid_fine.node_shape)
    for code in range(2**d):
        parity = [(code >> a) & 1 for a in range(d)]
        fine = tuple(slice(a, None, 2) for a in parity)
        base = tuple(slice(0, nc + 1 - a) for a in parity)
        shifted = tuple(slice(a, nc + 1) for a in parity)
        out[(slice(None),) + fine] = 0.5 * (U[(slice(None),) + base] + U[(slice(None),) + shifted])
    return from_components(out)


@dataclass
class MultilevelResult:
    results: list[SolveResult] = field(default_factory=list)
    grids: list[GridSpec] = field(default_factory=list)

    @property
    def final(self) -> SolveResult:
        return self.results[-1]

    @property
    def history(self) -> list[dict]:
        return [rec for r in self.results for rec in r.history]


def run_multilevel(image, labels, params: RegularizerParams, config: SolverConfig | None = None,
                   L: int | None = None, boundary_condition: str = "natural", callback=None) -> MultilevelResult:
    """Solve coarse to fine; each level starts from the prolonged transformation.

    ``image`` and ``labels`` are finest-level cell-centered arrays. Level
    numbers in the log count from 0 at the coarsest level.
    """
    config = config or SolverConfig()
    image = np.asarray(image, dtype=float)
    if L is None:
        L = default_levels(image.shape[0])
    pyramid = build_pyramid(image, labels, L, boundary_condition)
    out = MultilevelResult()
    Y = None
    prev_grid = None
    for level_no, level in enumerate(reversed(pyramid.levels)):
        grid = level.grid
        prior = build_prior(level.labels)
        problem = SegmentationProblem(grid, fit_image(grid, level.image), prior, params, config)
        if Y is None:
            Y = nodal_coordinates(grid)
        else:
            Y = prolong(Y, prev_grid, grid)
        min_det = float(determinant_field(grid, Y).min())
        if min_det <= 0:
            raise InfeasibleError(f"level {level_no} starts folded (min det {min_det:.3e})")
        warped, _ = problem.warped(Y, gradient=False)
        C = initial_constants(warped, prior)
        logger.info("level %d: n=%d, start min det %.3g", level_no, grid.n, min_det)
        result = ggn_solve(problem, Y, C, config, level=level_no, callback=callback)
        out.results.append(result)
        out.grids.append(grid)
        Y = result.state.Y
        prev_grid = grid
    return out
