"""Turn a solved transformation into a segmentation and check its topology."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from skimage import measure

from .grid import GridSpec, interpolate_nodal, to_components
from .hyperelastic import determinant_field

logger = logging.getLogger(__name__)


@dataclass
class Geometry:
    """Indexed polyline (2D, ``elements`` are segments) or triangle mesh (3D)."""

    vertices: np.ndarray
    elements: np.ndarray

    @property
    def dim(self) -> int:
        return self.vertices.shape[1]

    def edges(self) -> np.ndarray:
        if self.elements.shape[1] == 2:
            e = self.elements
        else:
            f = self.elements
            e = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
        return np.unique(np.sort(e, axis=1), axis=0)

    def n_components(self) -> int:
        if len(self.elements) == 0:
            return 0
        e = self.edges()
        nv = len(self.vertices)
        graph = coo_matrix((np.ones(len(e)), (e[:, 0], e[:, 1])), shape=(nv, nv))
        used = np.unique(self.elements)
        _, comp = connected_components(graph, directed=False)
        return len(np.unique(comp[used]))

    def euler_characteristic(self) -> int:
        used = len(np.unique(self.elements))
        return used - len(self.edges()) + (len(self.elements) if self.elements.shape[1] == 3 else 0)

    def is_closed(self) -> bool:
        """Every vertex has degree 2 (2D) / every edge bounds two triangles (3D)."""
        if self.elements.shape[1] == 2:
            deg = np.bincount(self.elements.ravel(), minlength=len(self.vertices))
            return bool(np.all(deg[np.unique(self.elements)] == 2))
        f = self.elements
        e = np.sort(np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]]), axis=1)
        _, counts = np.unique(e, axis=0, return_counts=True)
        return bool(np.all(counts == 2))

    def length_or_area(self) -> float:
        v = self.vertices[self.elements]
        if self.elements.shape[1] == 2:
            return float(np.linalg.norm(v[:, 1] - v[:, 0], axis=1).sum())
        return float(0.5 * np.linalg.norm(np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]), axis=1).sum())


def _padded_to_coords(p, h):
    # padded array index p sits at cell p-1, whose center is (p - 0.5) h
    return (np.asarray(p, dtype=float) - 0.5) * h


def extract_boundary(labels, h: float | None = None) -> dict[int, Geometry]:
    """Boundary of every region at the 0.5 level of its indicator.

    The indicator is padded with zeros so regions touching the domain edge
    yield closed curves/surfaces running along the edge. Coordinates are in
    the reference domain ``[0, 1]^dim``.
    """
    lab = np.asarray(labels)
    h = h if h is not None else 1.0 / lab.shape[0]
    out = {}
    for l in np.unique(lab):
        ind = np.pad((lab == l).astype(float), 1)
        if lab.ndim == 2:
            contours = measure.find_contours(ind, 0.5, fully_connected="high")
            verts, segs, offset = [], [], 0
            for c in contours:
                ring = c[:-1] if np.allclose(c[0], c[-1]) else c
                k = len(ring)
                idx = np.arange(k) + offset
                verts.append(ring)
                segs.append(np.stack([idx, np.roll(idx, -1)], axis=1))
                offset += k
            V = np.concatenate(verts) if verts else np.zeros((0, 2))
            E = np.concatenate(segs) if segs else np.zeros((0, 2), dtype=int)
            out[int(l)] = Geometry(_padded_to_coords(V, h), E.astype(np.int64))
        else:
            V, F, _, _ = measure.marching_cubes(ind, 0.5, allow_degenerate=False)
            out[int(l)] = Geometry(_padded_to_coords(V, h), F.astype(np.int64))
    return out


def warp_geometry(grid: GridSpec, Y, geometry: Geometry) -> Geometry:
    """Map vertices through the piecewise-linear transformation; connectivity is kept."""
    return Geometry(interpolate_nodal(grid, Y, geometry.vertices), geometry.elements.copy())


def background_label(labels) -> int:
    """Most frequent label on the outer layer of cells (lowest id on ties)."""
    lab = np.asarray(labels)
    inner = tuple(slice(1, -1) for _ in range(lab.ndim))
    edge = np.ones(lab.shape, dtype=bool)
    edge[inner] = False
    vals, counts = np.unique(lab[edge], return_counts=True)
    return int(vals[np.argmax(counts)])


def rasterize_mask(grid: GridSpec, Y, labels, chunk: int = 200_000) -> np.ndarray:
    """Label every cell center by the deformed simplex that contains it.

    Each simplex carries the prior label of the reference cell it belongs to.
    Cells not covered by the deformed mesh get :func:`background_label`.
    Points on shared faces go to the simplex in which they are deepest, ties
    to the lowest simplex index.
    """
    lab = np.asarray(labels)
    v = determinant_field(grid, Y)
    if np.any(v <= 0):
        raise ValueError("transformation is folded; mask is undefined")
    d, n, N, h = grid.dim, grid.n, grid.n_cells, grid.h
    U = to_components(grid, Y)
    flat_labels = lab.reshape(-1, order="F")

    # deformed vertex coordinates for every simplex: (S, d+1, d)
    verts = np.empty((grid.n_simplices, d + 1, d))
    for t in range(grid.simplices_per_cell):
        for r, off in enumerate(grid.simplex_vertices(t)):
            corner = U[(slice(None),) + tuple(slice(o, o + n) for o in off)]
            verts[t * N : (t + 1) * N, r] = corner.reshape(d, -1, order="F").T
    simplex_label = np.tile(flat_labels, grid.simplices_per_cell)

    best_simplex = np.full(N, -1, dtype=np.int64)
    best_depth = np.full(N, -np.inf)
    tol = 1e-10
    strides = n ** np.arange(d)
    for start in range(0, grid.n_simplices, chunk):
        V = verts[start : start + chunk]
        lo = np.clip(np.ceil(V.min(axis=1) / h - 0.5 - tol), 0, n - 1).astype(np.int64)
        hi = np.clip(np.floor(V.max(axis=1) / h - 0.5 + tol), 0, n - 1).astype(np.int64)
        hi = np.where(V.max(axis=1) / h - 0.5 + tol < 0, -1, hi)
        lo = np.where(V.min(axis=1) / h - 0.5 - tol > n - 1, n, lo)
        ext = np.maximum(hi - lo + 1, 0)
        cnt = np.prod(ext, axis=1)
        if cnt.sum() == 0:
            continue
        sid = np.repeat(np.arange(len(V)), cnt)
        # enumerate the candidate lattice points of every bounding box
        local = np.arange(cnt.sum()) - np.repeat(np.cumsum(cnt) - cnt, cnt)
        idx = np.empty((len(sid), d), dtype=np.int64)
        rem = local
        for a in range(d):
            e = ext[sid, a]
            idx[:, a] = lo[sid, a] + rem % e
            rem = rem // e
        x = (idx + 0.5) * h
        E = np.transpose(V[:, 1:] - V[:, :1], (0, 2, 1))  # columns are edge vectors
        Einv = np.linalg.inv(E)
        lam = np.einsum("sij,sj->si", Einv[sid], x - V[sid, 0])
        lam = np.concatenate([1.0 - lam.sum(axis=1, keepdims=True), lam], axis=1)
        depth = lam.min(axis=1)
        inside = depth >= -tol
        cell = idx[inside] @ strides
        cand_s = sid[inside] + start
        cand_d = depth[inside]
        better = (cand_d > best_depth[cell] + 1e-14) | (
            (np.abs(cand_d - best_depth[cell]) <= 1e-14) & (cand_s < best_simplex[cell])
        )
        order = np.lexsort((cand_s, -cand_d, cell))
        cell, cand_s, cand_d, better = cell[order], cand_s[order], cand_d[order], better[order]
        first = np.r_[True, cell[1:] != cell[:-1]]
        sel = first & better
        best_simplex[cell[sel]] = cand_s[sel]
        best_depth[cell[sel]] = cand_d[sel]

    mask_flat = np.where(best_simplex >= 0, simplex_label[np.maximum(best_simplex, 0)], background_label(lab))
    uncovered = int(np.sum(best_simplex < 0))
    if uncovered:
        logger.info("%d cells outside the deformed domain get the background label", uncovered)
    return mask_flat.reshape(grid.cell_shape, order="F").astype(lab.dtype)


def count_components(binary) -> int:
    b = np.asarray(binary, dtype=bool)
    structure = np.ones((3,) * b.ndim, dtype=bool)
    return int(ndimage.label(b, structure=structure)[1])


def dice(a, b) -> float:
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    denom = a.sum() + b.sum()
    return 1.0 if denom == 0 else float(2.0 * np.logical_and(a, b).sum() / denom)


def topology_report(mask, prior_labels, ground_truth=None) -> dict:
    """Per-region component counts (full connectivity) and optional Dice scores."""
    mask = np.asarray(mask)
    prior_labels = np.asarray(prior_labels)
    if mask.shape != prior_labels.shape:
        raise ValueError("mask and prior must share a grid")
    regions = [int(l) for l in np.unique(prior_labels)]
    report = {
        "components": {l: count_components(mask == l) for l in regions},
        "prior_components": {l: count_components(prior_labels == l) for l in regions},
    }
    report["components_match"] = report["components"] == report["prior_components"]
    if ground_truth is not None:
        gt = np.asarray(ground_truth)
        report["dice"] = {l: dice(mask == l, gt == l) for l in regions}
    return report


@dataclass
class SegmentationResult:
    mask: np.ndarray
    boundary_geometry: dict
    det_range: tuple[float, float]
    metrics: dict = field(default_factory=dict)

    @property
    def topology_preserving(self) -> bool:
        return self.det_range[0] > 0


def segmentation_from_transform(grid: GridSpec, Y, labels, ground_truth=None) -> SegmentationResult:
    """Mask, warped boundary, determinant range and metrics for a solved ``Y``."""
    v = determinant_field(grid, Y)
    det_range = (float(v.min()), float(v.max()))
    if det_range[0] <= 0:
        raise ValueError(f"transformation folds (min det {det_range[0]:.3e})")
    mask = rasterize_mask(grid, Y, labels)
    boundary = {l: warp_geometry(grid, Y, g) for l, g in extract_boundary(labels, grid.h).items()}
    metrics = topology_report(mask, labels, ground_truth)
    if grid.dim == 3:
        metrics["euler_characteristic"] = {l: g.euler_characteristic() for l, g in boundary.items()}
    return SegmentationResult(mask, boundary, det_range, metrics)

