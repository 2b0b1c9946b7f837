"""Nodal grids on the unit square/cube and the stencil operators acting on them.

Conventions
-----------
Nodal and cell-centered arrays are indexed ``a[i, j, k]`` with axis ``q``
corresponding to the spatial coordinate ``x_{q+1}``. Flat vectors use
lexicographic ordering with ``x1`` running fastest (Fortran order), and
vector fields are stored component-major: all ``y1`` values, then ``y2``,
then ``y3``.

Each cell is split into ``dim!`` simplices (Kuhn/Freudenthal split along the
main diagonal). A simplex is identified by a permutation ``perm`` of the axes;
its vertices are the cell corners reached by walking from the lower corner
along ``perm[0]``, then ``perm[1]``, and so on. Per-simplex arrays are ordered
simplex-type-major: index ``t * n_cells + cell``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property, lru_cache
from itertools import permutations

import numpy as np

__all__ = [
    "GridSpec",
    "nodal_coordinates",
    "cell_centers",
    "to_components",
    "from_components",
    "average_to_cells",
    "average_to_cells_adjoint",
    "forward_difference",
    "forward_difference_adjoint",
    "tet_derivatives",
    "tet_derivatives_adjoint",
    "interpolate_nodal",
    "boundary_mask",
]

BOUNDARY_CONDITIONS = ("natural", "dirichlet")


@dataclass(frozen=True)
class GridSpec:
    """Uniform discretization of ``[0, 1]^dim`` with ``n`` cells per axis."""

    dim: int
    n: int
    boundary_condition: str = "natural"

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise ValueError(f"dim must be 2 or 3, got {self.dim}")
        if int(self.n) != self.n or self.n < 1:
            raise ValueError(f"n must be a positive integer, got {self.n}")
        if self.boundary_condition not in BOUNDARY_CONDITIONS:
            raise ValueError(
                f"boundary_condition must be one of {BOUNDARY_CONDITIONS}, "
                f"got {self.boundary_condition!r}"
            )

    @property
    def h(self) -> float:
        return 1.0 / self.n

    @property
    def cell_volume(self) -> float:
        return self.h**self.dim

    @property
    def node_shape(self) -> tuple[int, ...]:
        return (self.n + 1,) * self.dim

    @property
    def cell_shape(self) -> tuple[int, ...]:
        return (self.n,) * self.dim

    @property
    def n_nodes(self) -> int:
        return (self.n + 1) ** self.dim

    @property
    def n_cells(self) -> int:
        return self.n**self.dim

    @property
    def size(self) -> int:
        """Length of a nodal vector field."""
        return self.dim * self.n_nodes

    @cached_property
    def simplex_perms(self) -> tuple[tuple[int, ...], ...]:
        return tuple(permutations(range(self.dim)))

    @property
    def simplices_per_cell(self) -> int:
        return len(self.simplex_perms)

    @property
    def n_simplices(self) -> int:
        return self.simplices_per_cell * self.n_cells

    @property
    def simplex_volume(self) -> float:
        return self.cell_volume / self.simplices_per_cell

    def simplex_vertices(self, t: int) -> list[tuple[int, ...]]:
        """Corner offsets (0/1 per axis) of simplex type ``t``, in path order."""
        corner = [0] * self.dim
        verts = [tuple(corner)]
        for axis in self.simplex_perms[t]:
            corner[axis] = 1
            verts.append(tuple(corner))
        return verts

    def coarsen(self) -> "GridSpec":
        if self.n % 2:
            raise ValueError(f"cannot coarsen grid with odd n={self.n}")
        return GridSpec(self.dim, self.n // 2, self.boundary_condition)

    def refine(self) -> "GridSpec":
        return GridSpec(self.dim, 2 * self.n, self.boundary_condition)


def _check_size(arr, expected, what="field"):
    arr = np.asarray(arr, dtype=float)
    if arr.ndim != 1 or arr.size != expected:
        raise ValueError(f"{what} has size {arr.size}, expected {expected}")
    return arr


def to_components(grid: GridSpec, Y) -> np.ndarray:
    """Reshape a flat nodal field to ``(dim, n+1, ..., n+1)``."""
    Y = _check_size(Y, grid.size, "nodal field")
    return np.moveaxis(Y.reshape(grid.node_shape + (grid.dim,), order="F"), -1, 0)


def from_components(U: np.ndarray) -> np.ndarray:
    """Inverse of :func:`to_components` (also works for cell-centered fields)."""
    return np.moveaxis(np.asarray(U, dtype=float), 0, -1).reshape(-1, order="F")


def nodal_coordinates(grid: GridSpec) -> np.ndarray:
    """Identity transformation X sampled on the nodes, as a flat field."""
    axes = [np.arange(grid.n + 1) * grid.h] * grid.dim
    return from_components(np.stack(np.meshgrid(*axes, indexing="ij")))


def cell_centers(grid: GridSpec) -> np.ndarray:
    """Cell-centered points, shape ``(n_cells, dim)`` in lexicographic order."""
    axes = [(np.arange(grid.n) + 0.5) * grid.h] * grid.dim
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"))
    return from_components(mesh).reshape(grid.dim, -1).T.copy()


def boundary_mask(grid: GridSpec) -> np.ndarray:
    """Boolean flat nodal mask, True for every component of every boundary node."""
    on = np.zeros(grid.node_shape, dtype=bool)
    for axis in range(grid.dim):
        idx = [slice(None)] * grid.dim
        idx[axis] = 0
        on[tuple(idx)] = True
        idx[axis] = -1
        on[tuple(idx)] = True
    return np.tile(on.reshape(-1, order="F"), grid.dim)


@dataclass(frozen=True)
class KernelTables:
    """Flat-index lookup tables shared by the compiled operators."""

    cell_base: np.ndarray  # (n_cells,) node index of each cell's lower corner
    voff: np.ndarray  # (simplices_per_cell, dim+1) node offsets along each Kuhn path
    perms: np.ndarray  # (simplices_per_cell, dim)
    coff: np.ndarray  # (2^dim,) node offsets of the cell corners
    node_shape: np.ndarray


@lru_cache(maxsize=16)
def kernel_tables(grid: GridSpec) -> KernelTables:
    strides = (grid.n + 1) ** np.arange(grid.dim)
    idx = np.stack(np.meshgrid(*[np.arange(grid.n)] * grid.dim, indexing="ij"))
    cell_base = (np.tensordot(strides, idx, axes=1)).reshape(-1, order="F").astype(np.int64)
    voff = np.array([[int(np.dot(v, strides)) for v in grid.simplex_vertices(t)]
                     for t in range(grid.simplices_per_cell)], dtype=np.int64)
    perms = np.array(grid.simplex_perms, dtype=np.int64)
    coff = np.array([int(np.dot(c, strides)) for c in _corners(grid.dim)], dtype=np.int64)
    return KernelTables(cell_base, voff, perms, coff, np.array(grid.node_shape, dtype=np.int64))


def _corner(U, offset, n):
    """View of nodal array ``U`` (leading component axis) at cell corner ``offset``."""
    return U[(slice(None),) + tuple(slice(o, o + n) for o in offset)]


def _corners(dim):
    return [tuple((c >> a) & 1 for a in range(dim)) for c in range(2**dim)]


def average_to_cells(grid: GridSpec, Y) -> np.ndarray:
    """Apply the averaging operator P: corner mean per cell and component.

    Returns a flat vector of length ``dim * n_cells`` (component-major).
    """
    U = to_components(grid, Y)
    acc = np.zeros((grid.dim,) + grid.cell_shape)
    for offset in _corners(grid.dim):
        acc += _corner(U, offset, grid.n)
    return from_components(acc / 2**grid.dim)


def average_to_cells_adjoint(grid: GridSpec, V) -> np.ndarray:
    """Apply P^T to a cell-centered field (flat, component-major)."""
    V = _check_size(V, grid.dim * grid.n_cells, "cell field")
    Vc = V.reshape(grid.cell_shape + (grid.dim,), order="F")
    Vc = np.moveaxis(Vc, -1, 0) / 2**grid.dim
    out = np.zeros((grid.dim,) + grid.node_shape)
    for offset in _corners(grid.dim):
        _corner(out, offset, grid.n)[...] += Vc
    return from_components(out)


def _diff_shape(grid, axis):
    shape = list(grid.node_shape)
    shape[axis] = grid.n
    return tuple(shape)


def forward_difference(grid: GridSpec, W) -> np.ndarray:
    """Stacked forward differences ``A W``.

    Ordering follows ``A = I_dim (x) (A_1; ...; A_dim)``: for every component,
    the differences along axis 1, then axis 2, ..., each block flattened
    lexicographically.
    """
    U = to_components(grid, W)
    parts = []
    for q in range(grid.dim):
        for axis in range(grid.dim):
            d = np.diff(U[q], axis=axis) / grid.h
            parts.append(d.reshape(-1, order="F"))
    return np.concatenate(parts)


def forward_difference_adjoint(grid: GridSpec, V) -> np.ndarray:
    """Apply ``A^T`` to a vector shaped like the output of :func:`forward_difference`."""
    blocks = [int(np.prod(_diff_shape(grid, a))) for a in range(grid.dim)]
    V = _check_size(V, grid.dim * sum(blocks), "difference vector")
    out = np.zeros((grid.dim,) + grid.node_shape)
    pos = 0
    for q in range(grid.dim):
        for axis in range(grid.dim):
            d = V[pos : pos + blocks[axis]].reshape(_diff_shape(grid, axis), order="F")
            pos += blocks[axis]
            hi = [slice(None)] * grid.dim
            lo = [slice(None)] * grid.dim
            hi[axis] = slice(1, None)
            lo[axis] = slice(0, -1)
            out[q][tuple(hi)] += d / grid.h
            out[q][tuple(lo)] -= d / grid.h
    return from_components(out)


def tet_derivatives(grid: GridSpec, Y) -> np.ndarray:
    """Per-simplex Jacobian of the piecewise-linear interpolant of ``Y``.

    Returns an array ``J`` of shape ``(dim, dim, n_simplices)`` with
    ``J[p, q] = d y_p / d x_q``; in 3D, ``J.reshape(9, -1)`` lists the nine
    derivative arrays D1 Y ... D9 Y in row-major order.
    """
    U = to_components(grid, Y)
    n, N = grid.n, grid.n_cells
    J = np.empty((grid.dim, grid.dim, grid.n_simplices))
    for t, perm in enumerate(grid.simplex_perms):
        verts = grid.simplex_vertices(t)
        for r, axis in enumerate(perm):
            d = _corner(U, verts[r + 1], n) - _corner(U, verts[r], n)
            J[:, axis, t * N : (t + 1) * N] = d.reshape(grid.dim, -1, order="F") / grid.h
    return J


def tet_derivatives_adjoint(grid: GridSpec, G) -> np.ndarray:
    """Transpose of :func:`tet_derivatives`: maps ``(dim, dim, n_simplices)`` to nodes."""
    G = np.asarray(G, dtype=float)
    if G.shape != (grid.dim, grid.dim, grid.n_simplices):
        raise ValueError(f"expected shape {(grid.dim, grid.dim, grid.n_simplices)}, got {G.shape}")
    n, N = grid.n, grid.n_cells
    out = np.zeros((grid.dim,) + grid.node_shape)
    shape = (grid.dim,) + grid.cell_shape
    for t, perm in enumerate(grid.simplex_perms):
        verts = grid.simplex_vertices(t)
        for r, axis in enumerate(perm):
            g = G[:, axis, t * N : (t + 1) * N].reshape(shape, order="F") / grid.h
            _corner(out, verts[r + 1], n)[...] += g
            _corner(out, verts[r], n)[...] -= g
    return from_components(out)


def locate_simplex(grid: GridSpec, points):
    """Cell index, simplex type and barycentric weights for reference points.

    Points are clipped into the closed unit cube. Returns ``(cell_multi_index,
    t, vertex_offsets, weights)`` where ``vertex_offsets`` has shape
    ``(npts, dim+1, dim)`` and ``weights`` has shape ``(npts, dim+1)``.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    s = np.clip(pts, 0.0, 1.0) / grid.h
    base = np.minimum(np.floor(s).astype(int), grid.n - 1)
    frac = s - base
    # descending sort of local coordinates selects the Kuhn simplex
    order = np.argsort(-frac, axis=1, kind="stable")
    sorted_frac = np.take_along_axis(frac, order, axis=1)
    npts, dim = pts.shape
    weights = np.empty((npts, dim + 1))
    weights[:, 0] = 1.0 - sorted_frac[:, 0]
    weights[:, 1:dim] = sorted_frac[:, :-1] - sorted_frac[:, 1:]
    weights[:, dim] = sorted_frac[:, -1]
    offsets = np.zeros((npts, dim + 1, dim), dtype=int)
    for r in range(dim):
        offsets[:, r + 1] = offsets[:, r]
        offsets[np.arange(npts), r + 1, order[:, r]] = 1
    radix = dim ** np.arange(dim)
    lookup = np.full(dim**dim, -1, dtype=int)
    for i, p in enumerate(grid.simplex_perms):
        lookup[int(np.dot(p, radix))] = i
    t = lookup[order @ radix]
    return base, t, offsets, weights


def interpolate_nodal(grid: GridSpec, Y, points) -> np.ndarray:
    """Evaluate the piecewise-linear (Kuhn) interpolant of ``Y`` at ``points``.

    ``points`` has shape ``(npts, dim)``; the result has the same shape.
    Points outside the closed unit cube raise ``ValueError``.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape[1] != grid.dim:
        raise ValueError(f"points must have {grid.dim} columns")
    eps = 1e-12
    if np.any(pts < -eps) or np.any(pts > 1 + eps):
        raise ValueError("points outside the domain")
    U = to_components(grid, Y)
    base, _, offsets, weights = locate_simplex(grid, pts)
    out = np.zeros_like(pts)
    for r in range(grid.dim + 1):
        idx = tuple((base + offsets[:, r]).T)
        out += weights[:, r : r + 1] * U[(slice(None),) + idx].T
    return out
