"""Deterministic synthetic images and priors for demos and tests.

Every generator returns cell-centered arrays on ``[0, 1]^dim`` with
``n`` cells per axis. Label maps use 1 for the background.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

BACKGROUND = 0.0
FOREGROUND = 200.0


def _centers(n: int, dim: int):
    x = (np.arange(n) + 0.5) / n
    return np.meshgrid(*([x] * dim), indexing="ij")


def ellipsoid(n: int, center, radii) -> np.ndarray:
    """Boolean cells whose centers lie inside the axis-aligned ellipsoid."""
    dim = len(center)
    radii = np.broadcast_to(np.asarray(radii, dtype=float), (dim,))
    X = _centers(n, dim)
    return sum(((X[a] - center[a]) / radii[a]) ** 2 for a in range(dim)) < 1.0


def box(n: int, lower, upper) -> np.ndarray:
    dim = len(lower)
    X = _centers(n, dim)
    inside = np.ones((n,) * dim, dtype=bool)
    for a in range(dim):
        inside &= (X[a] > lower[a]) & (X[a] < upper[a])
    return inside


def render(*masks, sigma: float = 1.0, value: float = FOREGROUND, background: float = BACKGROUND):
    """Piecewise-constant image of the union of ``masks``, Gaussian-blurred by ``sigma`` cells."""
    img = np.full(masks[0].shape, background)
    for m in masks:
        img[m] = value
    return gaussian_filter(img, sigma, mode="nearest") if sigma > 0 else img


def labels_from(*masks) -> np.ndarray:
    """Label map: 1 outside all masks, 2 inside any of them."""
    lab = np.ones(masks[0].shape, dtype=np.uint8)
    for m in masks:
        lab[m] = 2
    return lab


@dataclass
class Phantom:
    image: np.ndarray
    prior: np.ndarray
    ground_truth: np.ndarray
    description: str = ""


def disk_2d(n: int = 64, shift: float = 0.1, sigma: float = 0.0) -> Phantom:
    """A bright disk and a prior disk of the same radius shifted along ``x1``.

    ``sigma`` is the Gaussian blur of the image in cells; with a sharp edge a
    single-level solve only sees the target where the disks overlap.
    """
    target = ellipsoid(n, (0.5 + shift, 0.5), 0.25)
    prior = ellipsoid(n, (0.5, 0.5), 0.25)
    return Phantom(render(target, sigma=sigma), labels_from(prior), labels_from(target), "shifted disk")


def two_blobs_2d(n: int = 256, components: int = 1) -> Phantom:
    """Two bright elliptic blobs; the prior covers one or both of them.

    With ``components=1`` the ground truth contains only the blob the prior
    overlaps, the other blob must stay background.
    """
    a = ellipsoid(n, (0.30, 0.34), (0.16, 0.12))
    b = ellipsoid(n, (0.70, 0.64), (0.12, 0.16))
    image = render(a, b)
    pa = ellipsoid(n, (0.34, 0.38), 0.11)
    pb = ellipsoid(n, (0.66, 0.60), 0.11)
    if components == 1:
        return Phantom(image, labels_from(pa), labels_from(a), "two blobs, one-component prior")
    if components == 2:
        return Phantom(image, labels_from(pa, pb), labels_from(a, b), "two blobs, two-component prior")
    raise ValueError("components must be 1 or 2")


def banded_sphere_3d(n: int = 64, band_halfwidth: float = 1 / 32, band_value: float = 90.0) -> Phantom:
    """Bright sphere whose central slab (in ``x3``) is darkened; the prior is a smaller sphere.

    The default band value lies below the midpoint between background and
    foreground, so a threshold splits the sphere in two. The ground truth is
    the undegraded sphere.
    """
    sphere = ellipsoid(n, (0.5, 0.5, 0.5), 0.3)
    X = _centers(n, 3)
    band = np.abs(X[2] - 0.5) < band_halfwidth
    img = np.full(sphere.shape, BACKGROUND)
    img[sphere] = FOREGROUND
    img[sphere & band] = band_value
    img = gaussian_filter(img, 1.0, mode="nearest")
    prior = ellipsoid(n, (0.5, 0.5, 0.5), 0.24)
    return Phantom(img, labels_from(prior), labels_from(sphere), "sphere with dark band")


def two_ellipsoids_3d(n: int = 64) -> Phantom:
    """Two bright ellipsoids and a prior made of two boxes roughly inside them."""
    a = ellipsoid(n, (0.30, 0.5, 0.5), (0.16, 0.22, 0.26))
    b = ellipsoid(n, (0.70, 0.5, 0.5), (0.16, 0.26, 0.22))
    pa = box(n, (0.22, 0.38, 0.36), (0.38, 0.62, 0.64))
    pb = box(n, (0.62, 0.36, 0.38), (0.78, 0.64, 0.62))
    return Phantom(render(a, b), labels_from(pa, pb), labels_from(a, b), "two ellipsoids, two-box prior")
