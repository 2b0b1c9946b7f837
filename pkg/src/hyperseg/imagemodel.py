"""Cubic-spline image model on the cell-centered grid, plus pyramid restriction."""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.linalg import solve_banded

from ._kernels import bspline_eval_2d, bspline_eval_3d
from .grid import GridSpec

__all__ = ["ImageModel", "fit_image", "eval_with_gradient", "restrict_image", "restrict_once"]

_PAD = 2


@lru_cache(maxsize=16)
def _natural_banded(n: int) -> np.ndarray:
    """Banded form of the natural cubic B-spline interpolation matrix."""
    ab = np.zeros((3, n))
    ab[1, :] = 4.0 / 6.0
    ab[0, 1:] = 1.0 / 6.0
    ab[2, :-1] = 1.0 / 6.0
    # zero second derivative at both end samples collapses the end rows to c = f
    ab[1, 0] = ab[1, -1] = 1.0
    ab[0, 1] = 0.0
    ab[2, -2] = 0.0
    return ab


def _coefficients_along(a: np.ndarray, axis: int) -> np.ndarray:
    n = a.shape[axis]
    moved = np.moveaxis(a, axis, 0)
    c = solve_banded((1, 1), _natural_banded(n), moved.reshape(n, -1))
    c = c.reshape(moved.shape)
    # linear extension keeps the second derivative zero past the end samples
    lo1 = 2 * c[0] - c[1]
    lo2 = 2 * lo1 - c[0]
    hi1 = 2 * c[-1] - c[-2]
    hi2 = 2 * hi1 - c[-1]
    c = np.concatenate([lo2[None], lo1[None], c, hi1[None], hi2[None]], axis=0)
    return np.moveaxis(c, 0, axis)


@dataclass(frozen=True, eq=False)
class ImageModel:
    """Interpolating natural cubic spline of a cell-centered image.

    ``coefficients`` are padded by two entries per side so that the spline is
    defined on all of the closed unit domain; outside it the model is zero.
    The spline interpolates ``samples - offset``; keeping the offset separate
    makes constant images exactly flat.
    """

    grid: GridSpec
    coefficients: np.ndarray
    intensity_range: tuple[float, float]
    offset: float = 0.0

    def __call__(self, points) -> np.ndarray:
        return eval_with_gradient(self, points, gradient=False)[0]

    def sample(self) -> np.ndarray:
        from .grid import cell_centers

        return self(cell_centers(self.grid)).reshape(self.grid.cell_shape, order="F")


def fit_image(grid: GridSpec, samples) -> ImageModel:
    """Fit an interpolating cubic spline to cell-centered ``samples``.

    ``samples`` may be given with shape ``grid.cell_shape`` or flat in
    lexicographic order.
    """
    a = np.asarray(samples, dtype=float)
    if a.size != grid.n_cells:
        raise ValueError(f"image has {a.size} samples, grid expects {grid.n_cells}")
    if not np.all(np.isfinite(a)):
        raise ValueError("image contains non-finite values")
    if a.ndim == 1:
        a = a.reshape(grid.cell_shape, order="F")
    elif a.shape != grid.cell_shape:
        raise ValueError(f"image shape {a.shape} does not match {grid.cell_shape}")
    lo, hi = float(a.min()), float(a.max())
    offset = 0.5 * (lo + hi)
    coef = a - offset
    for axis in range(grid.dim):
        coef = _coefficients_along(coef, axis)
    return ImageModel(grid, np.ascontiguousarray(coef), (lo, hi), offset)


def eval_with_gradient(model: ImageModel, points, gradient: bool = True):
    """Spline values and spatial gradients at arbitrary points.

    Parameters
    ----------
    model : ImageModel
    points : array, shape (npts, dim)
    gradient : bool
        When False, the gradient is skipped and ``None`` is returned for it.

    Returns
    -------
    values : array, shape (npts,)
    grads : array, shape (npts, dim) or None
        Row ``i`` is the gradient of the image at ``points[i]``. Both outputs
        vanish for points with any coordinate outside ``[0, 1]``.
    """
    grid = model.grid
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    npts, dim = pts.shape
    if dim != grid.dim:
        raise ValueError(f"points must have {grid.dim} columns")
    inside = np.all((pts >= 0.0) & (pts <= 1.0), axis=1)
    t = pts / grid.h - 0.5
    base = np.clip(np.floor(t), -1, grid.n - 1)
    u = np.where(inside[:, None], t - base, 0.0)
    base = np.where(inside[:, None], base, 0).astype(np.intp) + (_PAD - 1)

    values = np.empty(npts)
    grads = np.empty((npts, dim)) if gradient else np.empty((0, dim))
    kernel = bspline_eval_2d if dim == 2 else bspline_eval_3d
    kernel(model.coefficients, base, u, 1.0 / grid.h, gradient, values, grads)
    if not gradient:
        grads = None
    values += model.offset
    values[~inside] = 0.0
    if gradient:
        grads[~inside] = 0.0
    return values, grads


def restrict_once(samples: np.ndarray) -> np.ndarray:
    """Average each ``2^dim`` block of cells into one coarse cell."""
    a = np.asarray(samples, dtype=float)
    if any(s % 2 for s in a.shape):
        raise ValueError(f"shape {a.shape} not divisible by 2")
    shape = []
    for s in a.shape:
        shape += [s // 2, 2]
    return a.reshape(shape).mean(axis=tuple(range(1, 2 * a.ndim, 2)))


def restrict_image(image, levels: int) -> list[np.ndarray]:
    """Image pyramid by block averaging, finest first, ``levels`` arrays total.

    ``image`` is a cell-centered array or an :class:`ImageModel` (its samples
    are used).
    """
    if isinstance(image, ImageModel):
        image = image.sample()
    a = np.asarray(image, dtype=float)
    if levels < 1:
        raise ValueError("levels must be >= 1")
    factor = 2 ** (levels - 1)
    if any(s % factor for s in a.shape):
        raise ValueError(f"shape {a.shape} not divisible by 2^{levels - 1}")
    pyramid = [a]
    for _ in range(levels - 1):
        pyramid.append(restrict_once(pyramid[-1]))
    return pyramid
