"""Piecewise-constant data term ``h^d/2 |I(PY) - MC|^2`` and its derivatives."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from ._kernels import fit_gn_apply
from .grid import GridSpec, average_to_cells_adjoint, kernel_tables

logger = logging.getLogger(__name__)

__all__ = [
    "PriorPartition",
    "build_prior",
    "fit_energy",
    "fit_residual",
    "fit_gradient",
    "fit_gn_blocks_apply",
    "initial_constants",
]


@dataclass(frozen=True, eq=False)
class PriorPartition:
    """Cell-centered label map with regions ``1..m``.

    ``flat`` holds zero-based region indices in lexicographic cell order, so
    ``M C`` is ``C[flat]``.
    """

    labels: np.ndarray
    m: int
    counts: np.ndarray
    flat: np.ndarray

    def prior_image(self, C) -> np.ndarray:
        return np.asarray(C, dtype=float)[self.flat]

    def MT(self, r) -> np.ndarray:
        """Apply ``M^T``: per-region sums of a cell vector."""
        return np.bincount(self.flat, weights=r, minlength=self.m)

    @property
    def MTM(self) -> np.ndarray:
        return np.diag(self.counts.astype(float))


def build_prior(labels) -> PriorPartition:
    """Validate a label image whose ids are exactly ``1..m``."""
    lab = np.asarray(labels)
    if lab.size == 0:
        raise ValueError("empty label image")
    if not np.issubdtype(lab.dtype, np.integer):
        if not np.all(lab == np.round(lab)):
            raise ValueError("labels must be integers")
        lab = lab.astype(np.int64)
    ids = np.unique(lab)
    m = int(ids.max())
    if ids.min() < 1 or len(ids) != m:
        missing = sorted(set(range(1, m + 1)) - set(ids.tolist()))
        raise ValueError(f"label ids must be 1..m without gaps (missing {missing}, found {ids.tolist()})")
    flat = lab.reshape(-1, order="F").astype(np.intp) - 1
    counts = np.bincount(flat, minlength=m)
    return PriorPartition(lab.copy(), m, counts, flat)


def fit_residual(warped, prior: PriorPartition, C) -> np.ndarray:
    warped = np.asarray(warped, dtype=float)
    if warped.shape != prior.flat.shape:
        raise ValueError(f"warped image has {warped.size} cells, prior has {prior.flat.size}")
    return warped - prior.prior_image(C)


def fit_energy(warped, prior: PriorPartition, C, cell_volume: float) -> float:
    r = fit_residual(warped, prior, C)
    return 0.5 * cell_volume * float(r @ r)


def fit_gradient(grid: GridSpec, warped, grads, prior: PriorPartition, C):
    """Gradient of the data term with respect to ``Y`` (nodal) and ``C``.

    ``grads`` has shape ``(n_cells, dim)``: the image gradient at ``PY``, i.e.
    the block-diagonal Jacobian ``I_PY``.
    """
    r = fit_residual(warped, prior, C)
    hd = grid.cell_volume
    grads = np.asarray(grads, dtype=float)
    if grads.shape != (grid.n_cells, grid.dim):
        raise ValueError(f"grads must have shape {(grid.n_cells, grid.dim)}")
    gY = hd * average_to_cells_adjoint(grid, (grads * r[:, None]).T.reshape(-1))
    gC = -hd * prior.MT(r)
    return gY, gC


def fit_gn_blocks_apply(grid: GridSpec, grads, prior: PriorPartition, w_Y, w_C):
    """Apply ``h^d [P^T I^T I P, -P^T I^T M; -M^T I P, M^T M]`` to ``(w_Y, w_C)``."""
    tab = kernel_tables(grid)
    grads = np.ascontiguousarray(grads, dtype=float)
    if grads.shape != (grid.n_cells, grid.dim):
        raise ValueError(f"grads must have shape {(grid.n_cells, grid.dim)}")
    wY = np.ascontiguousarray(w_Y, dtype=float).reshape(grid.dim, -1)
    outY = np.empty_like(wY)
    outC = np.empty(prior.m)
    fit_gn_apply(wY, np.asarray(w_C, dtype=float), grads, prior.flat, tab.cell_base, tab.coff,
                 grid.cell_volume, outY, outC)
    return outY.ravel(), outC


def fit_gn_blocks_reference(grid: GridSpec, grads, prior: PriorPartition, w_Y, w_C):
    """Plain array implementation of :func:`fit_gn_blocks_apply`."""
    from .grid import average_to_cells

    hd = grid.cell_volume
    grads = np.asarray(grads, dtype=float)
    Pw = average_to_cells(grid, w_Y).reshape(grid.dim, -1).T
    u = np.einsum("cq,cq->c", grads, Pw) - prior.prior_image(w_C)
    out_Y = hd * average_to_cells_adjoint(grid, (grads * u[:, None]).T.reshape(-1))
    out_C = -hd * prior.MT(u)
    return out_Y, out_C


def initial_constants(warped, prior: PriorPartition) -> np.ndarray:
    """Per-region mean of the warped image (minimizer of the data term in C)."""
    warped = np.asarray(warped, dtype=float)
    if np.any(prior.counts == 0):
        raise ValueError("every region must contain at least one cell")
    C = prior.MT(warped) / prior.counts
    for l in range(prior.m):
        if not np.any(warped[prior.flat == l]):
            logger.warning("region %d maps entirely onto zero intensities", l + 1)
    return C
