"""Hyperelastic regularizer on the Kuhn simplex mesh.

The energy combines a length term on forward differences with surface and
volume terms evaluated per simplex from the piecewise-linear Jacobian:

    R(Y) = alpha_l h^d / 2 |A (Y - X)|^2
           + |simplex| * sum_t ( alpha_s phi_w(S_t) + alpha_v phi_v(v_t) )

with ``S_t`` the squared Frobenius norm of the cofactor matrix and ``v_t``
the Jacobian determinant on simplex ``t``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from ._kernels import graph_laplacian_apply, rank_one_apply, rank_two_apply_3d
from .grid import (
    GridSpec,
    forward_difference,
    forward_difference_adjoint,
    tet_derivatives,
    kernel_tables,
    tet_derivatives_adjoint,
)

logger = logging.getLogger(__name__)

SURFACE_MODES = ("well", "convex")
PHI_V_FLOOR = 1e-12


class InfeasibleError(ValueError):
    """Raised when a transformation has a non-positive simplex determinant."""


@dataclass(frozen=True)
class RegularizerParams:
    alpha_l: float
    alpha_s: float
    alpha_v: float
    surface_mode: str = "well"

    def __post_init__(self):
        if self.alpha_l < 0 or self.alpha_s < 0:
            raise ValueError("alpha_l and alpha_s must be non-negative")
        if not self.alpha_v > 0:
            raise ValueError("alpha_v must be positive (the volume barrier is required)")
        if self.surface_mode not in SURFACE_MODES:
            raise ValueError(f"surface_mode must be one of {SURFACE_MODES}")

    def check_dim(self, dim: int) -> None:
        if dim == 2 and self.alpha_s != 0:
            raise ValueError("alpha_s must be 0 for 2D problems")


# -- scalar penalty functions -------------------------------------------------


def phi_v(x):
    x = np.asarray(x, dtype=float)
    return ((x - 1.0) ** 2 / x) ** 2


def dphi_v(x):
    x = np.asarray(x, dtype=float)
    return 2.0 * (x - 1.0) ** 3 * (x + 1.0) / x**3


def d2phi_v(x):
    x = np.asarray(x, dtype=float)
    return 2.0 * (x - 1.0) ** 2 * (x * x + 2.0 * x + 3.0) / x**4


def phi_surface(S, mode="well"):
    S = np.asarray(S, dtype=float)
    r = S - 3.0 if mode == "well" else np.maximum(S - 3.0, 0.0)
    return 0.5 * r * r


def dphi_surface(S, mode="well"):
    S = np.asarray(S, dtype=float)
    return S - 3.0 if mode == "well" else np.maximum(S - 3.0, 0.0)


def gn_phi_surface(S, mode="well"):
    """Curvature weight of the surface penalty used by Gauss-Newton."""
    S = np.asarray(S, dtype=float)
    return np.ones_like(S) if mode == "well" else (S > 3.0).astype(float)


# -- per-simplex algebra ------------------------------------------------------


def cofactor(J: np.ndarray) -> np.ndarray:
    """Cofactor matrices of a stack of Jacobians shaped ``(d, d, ...)``."""
    d = J.shape[0]
    if d == 2:
        return np.stack([np.stack([J[1, 1], -J[1, 0]]), np.stack([-J[0, 1], J[0, 0]])])
    cof = np.empty_like(J)
    for a in range(3):
        a1, a2 = (a + 1) % 3, (a + 2) % 3
        for b in range(3):
            b1, b2 = (b + 1) % 3, (b + 2) % 3
            cof[a, b] = J[a1, b1] * J[a2, b2] - J[a1, b2] * J[a2, b1]
    return cof


def cofactor_jvp(J: np.ndarray, K: np.ndarray) -> np.ndarray:
    """Directional derivative of :func:`cofactor` at ``J`` along ``K``."""
    if J.shape[0] == 2:
        return cofactor(K)
    out = np.empty_like(J)
    for a in range(3):
        a1, a2 = (a + 1) % 3, (a + 2) % 3
        for b in range(3):
            b1, b2 = (b + 1) % 3, (b + 2) % 3
            out[a, b] = (
                J[a1, b1] * K[a2, b2]
                + K[a1, b1] * J[a2, b2]
                - J[a1, b2] * K[a2, b1]
                - K[a1, b2] * J[a2, b1]
            )
    return out


def cofactor_vjp(J: np.ndarray, G: np.ndarray) -> np.ndarray:
    """Adjoint of :func:`cofactor_jvp`: ``<G, jvp(J, K)> = <vjp(J, G), K>``."""
    # the bilinear form behind the 3D cofactor is symmetric and self-adjoint
    return cofactor_jvp(J, G)


def determinant(J: np.ndarray) -> np.ndarray:
    if J.shape[0] == 2:
        return J[0, 0] * J[1, 1] - J[0, 1] * J[1, 0]
    return (
        J[0, 0] * J[1, 1] * J[2, 2]
        + J[0, 1] * J[1, 2] * J[2, 0]
        + J[1, 0] * J[2, 1] * J[0, 2]
        - J[0, 1] * J[1, 0] * J[2, 2]
        - J[0, 0] * J[1, 2] * J[2, 1]
        - J[0, 2] * J[1, 1] * J[2, 0]
    )


def cofactor_field(grid: GridSpec, Y) -> np.ndarray:
    """Per-simplex cofactor entries ``s_1 ... s_9`` as an array ``(d, d, n_simplices)``."""
    return cofactor(tet_derivatives(grid, Y))


def determinant_field(grid: GridSpec, Y) -> np.ndarray:
    """Per-simplex Jacobian determinants ``v(Y)``."""
    return determinant(tet_derivatives(grid, Y))


def surface_measure(s: np.ndarray) -> np.ndarray:
    """``S = sum_i s_i * s_i`` per simplex."""
    return np.einsum("ab...,ab...->...", s, s)


# -- energies -----------------------------------------------------------------


def length_energy(grid: GridSpec, Y, X, alpha_l: float) -> float:
    r = forward_difference(grid, np.asarray(Y) - np.asarray(X))
    return 0.5 * alpha_l * grid.cell_volume * float(r @ r)


def length_gradient(grid: GridSpec, Y, X, alpha_l: float) -> np.ndarray:
    W = np.asarray(Y) - np.asarray(X)
    return alpha_l * grid.cell_volume * forward_difference_adjoint(grid, forward_difference(grid, W))


def surface_energy(grid: GridSpec, s: np.ndarray, alpha_s: float, mode: str = "well") -> float:
    if alpha_s == 0:
        return 0.0
    return grid.simplex_volume * alpha_s * float(np.sum(phi_surface(surface_measure(s), mode)))


def volume_energy(grid: GridSpec, v: np.ndarray, alpha_v: float) -> float:
    """Volume penalty; ``inf`` when any determinant is non-positive."""
    if np.any(v <= 0):
        return np.inf
    return grid.simplex_volume * alpha_v * float(np.sum(phi_v(v)))


@dataclass
class HyperelasticEval:
    energy_length: float
    energy_surface: float
    energy_volume: float
    J: np.ndarray
    s: np.ndarray
    v: np.ndarray

    @property
    def total(self) -> float:
        return self.energy_length + self.energy_surface + self.energy_volume

    @property
    def min_det(self) -> float:
        return float(self.v.min())

    @property
    def max_det(self) -> float:
        return float(self.v.max())

    @property
    def feasible(self) -> bool:
        return self.min_det > 0


def evaluate(grid: GridSpec, Y, X, params: RegularizerParams) -> HyperelasticEval:
    J = tet_derivatives(grid, Y)
    s = cofactor(J)
    v = determinant(J)
    return HyperelasticEval(
        length_energy(grid, Y, X, params.alpha_l),
        surface_energy(grid, s, params.alpha_s, params.surface_mode),
        volume_energy(grid, v, params.alpha_v),
        J,
        s,
        v,
    )


def regularizer_energy(grid: GridSpec, Y, X, params: RegularizerParams) -> float:
    return evaluate(grid, Y, X, params).total


def _surface_direction(J, s):
    """Gradient of ``S`` with respect to the simplex Jacobian."""
    return 2.0 * cofactor_vjp(J, s)


def reg_term_gradients(grid: GridSpec, Y, X, params: RegularizerParams,
                       ev: HyperelasticEval | None = None) -> dict[str, np.ndarray]:
    """Gradients of the length, surface and volume terms with respect to ``Y``."""
    if ev is None:
        ev = evaluate(grid, Y, X, params)
    if not ev.feasible:
        raise InfeasibleError(f"min determinant {ev.min_det:.3e} <= 0")
    w = grid.simplex_volume
    out = {
        "length": length_gradient(grid, Y, X, params.alpha_l),
        "volume": w * tet_derivatives_adjoint(grid, params.alpha_v * dphi_v(ev.v) * ev.s),
    }
    if params.alpha_s:
        S = surface_measure(ev.s)
        G = params.alpha_s * dphi_surface(S, params.surface_mode) * _surface_direction(ev.J, ev.s)
        out["surface"] = w * tet_derivatives_adjoint(grid, G)
    else:
        out["surface"] = np.zeros_like(out["length"])
    return out


def reg_gradient(grid: GridSpec, Y, X, params: RegularizerParams, ev: HyperelasticEval | None = None):
    """Exact gradient of the discrete regularizer with respect to ``Y``."""
    if ev is None:
        ev = evaluate(grid, Y, X, params)
    if not ev.feasible:
        raise InfeasibleError(f"min determinant {ev.min_det:.3e} <= 0")
    G = params.alpha_v * dphi_v(ev.v) * ev.s
    if params.alpha_s:
        S = surface_measure(ev.s)
        G = G + params.alpha_s * dphi_surface(S, params.surface_mode) * _surface_direction(ev.J, ev.s)
    grad = grid.simplex_volume * tet_derivatives_adjoint(grid, G)
    return grad + length_gradient(grid, Y, X, params.alpha_l)


def vertex_coefficients(grid: GridSpec, G: np.ndarray) -> np.ndarray:
    """Rewrite per-simplex linear forms ``<G_s, J_s(w)>`` as vertex coefficients.

    Returns ``B`` of shape ``(n_simplices, dim, dim+1)`` with
    ``<G_s, J_s(w)> = sum_{a,k} B[s, a, k] w_a(vertex k of s)``.
    """
    d, N = grid.dim, grid.n_cells
    B = np.zeros((grid.n_simplices, d, d + 1))
    for t, perm in enumerate(grid.simplex_perms):
        sl = slice(t * N, (t + 1) * N)
        for r, axis in enumerate(perm):
            col = G[:, axis, sl].T / grid.h
            B[sl, :, r + 1] += col
            B[sl, :, r] -= col
    return B


class RegularizerCurvature:
    """Gauss-Newton curvature of the regularizer, frozen at one transformation.

    Applies ``alpha_l h^d A^T A + |simplex| (alpha_s dS^T dS + alpha_v dv^T
    diag(phi_v'') dv)`` matrix-free.
    """

    def __init__(self, grid: GridSpec, Y, params: RegularizerParams, ev: HyperelasticEval | None = None):
        if ev is None:
            J = tet_derivatives(grid, Y)
            s = cofactor(J)
            v = determinant(J)
        else:
            J, s, v = ev.J, ev.s, ev.v
        if np.any(v <= 0):
            raise InfeasibleError(f"min determinant {v.min():.3e} <= 0")
        self.grid = grid
        self.params = params
        self.dv = s
        self.wv = grid.simplex_volume * params.alpha_v * np.maximum(d2phi_v(v), PHI_V_FLOOR)
        if params.alpha_s:
            self.dS = _surface_direction(J, s)
            S = surface_measure(s)
            self.wS = grid.simplex_volume * params.alpha_s * gn_phi_surface(S, params.surface_mode)
        else:
            self.dS = None
        self._Bv = self._BS = None

    def apply(self, w) -> np.ndarray:
        grid = self.grid
        tab = kernel_tables(grid)
        W = np.ascontiguousarray(w, dtype=float).reshape(grid.dim, -1)
        out = np.zeros_like(W)
        if self._Bv is None:
            self._Bv = vertex_coefficients(grid, self.dv)
            self._BS = vertex_coefficients(grid, self.dS) if self.dS is not None else None
        if self._BS is None:
            rank_one_apply(W, tab.cell_base, tab.voff, self._Bv, self.wv, out)
        elif grid.dim == 3:
            rank_two_apply_3d(W, tab.cell_base, tab.voff, self._Bv, self.wv, self._BS, self.wS, out)
        else:
            rank_one_apply(W, tab.cell_base, tab.voff, self._Bv, self.wv, out)
            rank_one_apply(W, tab.cell_base, tab.voff, self._BS, self.wS, out)
        scale = self.params.alpha_l * grid.cell_volume / grid.h**2
        graph_laplacian_apply(W, tab.node_shape, scale, out)
        return out.ravel()

    def apply_reference(self, w) -> np.ndarray:
        """Plain array implementation of :meth:`apply`."""
        grid = self.grid
        K = tet_derivatives(grid, w)
        G = (self.wv * np.einsum("ab...,ab...->...", self.dv, K)) * self.dv
        if self.dS is not None:
            G += (self.wS * np.einsum("ab...,ab...->...", self.dS, K)) * self.dS
        out = tet_derivatives_adjoint(grid, G)
        lw = forward_difference_adjoint(grid, forward_difference(grid, w))
        return out + self.params.alpha_l * grid.cell_volume * lw

    __call__ = apply

    def tridiagonal(self) -> tuple[np.ndarray, np.ndarray]:
        """Main diagonal and first off-diagonal of the operator's matrix.

        The off-diagonal entry ``k`` couples flat unknowns ``k`` and ``k+1``;
        only neighbours along the first axis contribute.
        """
        grid = self.grid
        diag = np.zeros((grid.dim,) + grid.node_shape)
        off = np.zeros((grid.dim,) + grid.node_shape)
        terms = [(self.wv, self.dv)]
        if self.dS is not None:
            terms.append((self.wS, self.dS))
        for weight, direction in terms:
            _rank_one_tridiagonal(grid, weight, direction, diag, off)
        _length_tridiagonal(grid, self.params.alpha_l * grid.cell_volume, diag, off)
        return _flatten_tridiagonal(grid, diag, off)


def _flatten_tridiagonal(grid, diag, off):
    from .grid import from_components

    return from_components(diag), from_components(off)[:-1]


def _rank_one_tridiagonal(grid, weight, direction, diag, off):
    """Accumulate the tridiagonal part of ``sum_t weight_t g_t g_t^T``.

    ``g_t = D^T direction_t`` is supported on the vertices of simplex ``t``.
    """
    n, N, h, d = grid.n, grid.n_cells, grid.h, grid.dim
    shape = grid.cell_shape
    for t, perm in enumerate(grid.simplex_perms):
        verts = grid.simplex_vertices(t)
        sl = slice(t * N, (t + 1) * N)
        wt = weight[sl].reshape(shape, order="F")
        for p in range(d):
            coefs = []
            for r in range(d + 1):
                c = np.zeros(N)
                if r > 0:
                    c += direction[p, perm[r - 1], sl]
                if r < d:
                    c -= direction[p, perm[r], sl]
                coefs.append(c.reshape(shape, order="F") / h)
            for r in range(d + 1):
                idx = tuple(slice(o, o + n) for o in verts[r])
                diag[p][idx] += wt * coefs[r] ** 2
                if r < d and perm[r] == 0:
                    off[p][idx] += wt * coefs[r] * coefs[r + 1]


def _length_tridiagonal(grid, scale, diag, off):
    h2 = grid.h**2
    for axis in range(grid.dim):
        lo = [slice(None)] * grid.dim
        hi = [slice(None)] * grid.dim
        lo[axis] = slice(0, -1)
        hi[axis] = slice(1, None)
        for p in range(grid.dim):
            diag[p][tuple(lo)] += scale / h2
            diag[p][tuple(hi)] += scale / h2
            if axis == 0:
                off[p][tuple(lo)] -= scale / h2
