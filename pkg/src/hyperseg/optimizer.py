"""Generalized Gauss-Newton solver for the joint unknown ``(Y, C)``."""
from __future__ import annotations

import logging
import dataclasses
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve_banded, cholesky_banded

from . import fitting, hyperelastic
from .fitting import PriorPartition
from .grid import GridSpec, average_to_cells, boundary_mask, nodal_coordinates
from .hyperelastic import InfeasibleError, RegularizerCurvature, RegularizerParams
from .imagemodel import ImageModel, eval_with_gradient
from .krylov import minres, pcg

logger = logging.getLogger(__name__)

LOG_COLUMNS = (
    "level",
    "iteration",
    "F",
    "fit",
    "length",
    "surface",
    "volume",
    "grad_norm",
    "eta",
    "minres_iter",
    "minres_relres",
    "minres_capped",
    "slope",
    "fallback",
    "min_det",
    "max_det",
)


@dataclass(frozen=True)
class SolverConfig:
    """Settings of the outer Gauss-Newton loop and its inner solvers.

    ``gamma=None`` picks the default shift: ``h^dim`` for natural boundary
    conditions and ``0`` for Dirichlet.
    """

    gamma: float | None = None
    minres_tol: float = 0.1
    minres_max_iter: int = 100
    ls_delta: float = 1e-4
    ls_max_backtracks: int = 20
    tol_f: float = 1e-3
    tol_y: float = 1e-2
    tol_g: float = 1e-2
    grad_abs_tol: float = 1e-10
    max_outer_iter: int = 50
    krylov: str = "minres"
    preconditioner: bool = True

    def __post_init__(self):
        if self.gamma is not None and self.gamma < 0:
            raise ValueError("gamma must be non-negative")
        if not 0 < self.ls_delta < 1:
            raise ValueError("ls_delta must lie in (0, 1)")
        if self.krylov not in ("minres", "cg"):
            raise ValueError("krylov must be 'minres' or 'cg'")

    def resolve_gamma(self, grid: GridSpec) -> float:
        if grid.boundary_condition == "dirichlet":
            if self.gamma not in (None, 0, 0.0):
                raise ValueError("gamma must be 0 for Dirichlet boundary conditions")
            return 0.0
        if self.gamma is None:
            return grid.cell_volume
        if self.gamma <= 0:
            raise ValueError("gamma must be positive for natural boundary conditions")
        return float(self.gamma)


@dataclass
class Evaluation:
    """Energy, breakdown and (optionally) gradient at one ``(Y, C)``."""

    Y: np.ndarray
    C: np.ndarray
    F: float
    fit: float
    reg: hyperelastic.HyperelasticEval
    warped: np.ndarray
    grads: np.ndarray | None = None
    d: np.ndarray | None = None

    @property
    def feasible(self) -> bool:
        return self.reg.feasible

    @property
    def breakdown(self) -> dict:
        return {
            "fit": self.fit,
            "length": self.reg.energy_length,
            "surface": self.reg.energy_surface,
            "volume": self.reg.energy_volume,
        }


@dataclass
class GNState:
    Y: np.ndarray
    C: np.ndarray
    F: float
    breakdown: dict
    grad_norm: float
    min_det: float
    max_det: float
    iteration: int


@dataclass
class SolveResult:
    state: GNState
    history: list = field(default_factory=list)
    status: str = "converged"
    level: int = 0


class SegmentationProblem:
    """Discrete objective ``F(Y, C)`` for one grid level."""

    def __init__(self, grid: GridSpec, image: ImageModel, prior: PriorPartition,
                 params: RegularizerParams, config: SolverConfig | None = None):
        if grid.n < 2:
            raise ValueError("a segmentation problem needs n >= 2 cells per axis")
        if image.grid.n != grid.n or image.grid.dim != grid.dim:
            raise ValueError("image model and grid disagree")
        if prior.flat.size != grid.n_cells:
            raise ValueError("prior and grid disagree")
        params.check_dim(grid.dim)
        self.grid = grid
        self.image = image
        self.prior = prior
        self.params = params
        self.config = config or SolverConfig()
        self.gamma = self.config.resolve_gamma(grid)
        self.X = nodal_coordinates(grid)
        if grid.boundary_condition == "dirichlet":
            self.free = ~boundary_mask(grid)
        else:
            self.free = np.ones(grid.size, dtype=bool)

    @property
    def n_y(self) -> int:
        return self.grid.size

    def split(self, z):
        return z[: self.n_y], z[self.n_y :]

    def warped(self, Y, gradient=True):
        pts = average_to_cells(self.grid, Y).reshape(self.grid.dim, -1).T
        return eval_with_gradient(self.image, pts, gradient=gradient)

    def evaluate(self, Y, C, gradient: bool = True) -> Evaluation:
        """Energy (``inf`` if infeasible) and, if requested, the joint gradient."""
        Y = np.asarray(Y, dtype=float)
        C = np.asarray(C, dtype=float)
        reg = hyperelastic.evaluate(self.grid, Y, self.X, self.params)
        if not reg.feasible:
            return Evaluation(Y, C, np.inf, np.nan, reg, np.empty(0))
        warped, grads = self.warped(Y, gradient=gradient)
        fit = fitting.fit_energy(warped, self.prior, C, self.grid.cell_volume)
        ev = Evaluation(Y, C, fit + reg.total, fit, reg, warped, grads)
        if gradient:
            gY, gC = fitting.fit_gradient(self.grid, warped, grads, self.prior, C)
            gY = gY + hyperelastic.reg_gradient(self.grid, Y, self.X, self.params, reg)
            ev.d = np.concatenate([gY * self.free, gC])
        return ev

    def energy(self, Y, C) -> float:
        return self.evaluate(Y, C, gradient=False).F

    def hessian(self, ev: Evaluation) -> "GaussNewtonHessian":
        return GaussNewtonHessian(self, ev)


class GaussNewtonHessian:
    """Matrix-free approximate Hessian at a feasible evaluation point."""

    def __init__(self, problem: SegmentationProblem, ev: Evaluation):
        if not ev.feasible:
            raise InfeasibleError("Hessian requested at an infeasible point")
        if ev.grads is None:
            raise ValueError("evaluation lacks image gradients")
        self.problem = problem
        self.grads = ev.grads
        self.reg = RegularizerCurvature(problem.grid, ev.Y, problem.params, ev.reg)

    @property
    def shape(self):
        n = self.problem.n_y + self.problem.prior.m
        return (n, n)

    def apply(self, w) -> np.ndarray:
        p = self.problem
        wY, wC = p.split(np.asarray(w, dtype=float))
        free = p.free
        wYf = wY * free
        fY, fC = fitting.fit_gn_blocks_apply(p.grid, self.grads, p.prior, wYf, wC)
        outY = fY + self.reg.apply(wYf) + p.gamma * wYf
        outY = outY * free + wY * ~free
        return np.concatenate([outY, fC])

    __call__ = apply

    def tridiagonal_y(self):
        """Main and first off-diagonal of the ``Y`` block."""
        p = self.problem
        grid = p.grid
        diag, off = self.reg.tridiagonal()
        fd, fo = _fit_tridiagonal(grid, self.grads)
        diag = diag + fd + p.gamma
        off = off + fo
        fixed = ~p.free
        diag[fixed] = 1.0
        off[fixed[:-1] | fixed[1:]] = 0.0
        return diag, off


def _fit_tridiagonal(grid: GridSpec, grads):
    from .grid import _corner, _corners, from_components

    scale = grid.cell_volume / 4**grid.dim
    diag = np.zeros((grid.dim,) + grid.node_shape)
    off = np.zeros((grid.dim,) + grid.node_shape)
    g2 = (grads.T**2).reshape((grid.dim,) + grid.cell_shape, order="F") * scale
    for offset in _corners(grid.dim):
        _corner(diag, offset, grid.n)[...] += g2
        if offset[0] == 0:
            _corner(off, offset, grid.n)[...] += g2
    return from_components(diag), from_components(off)[:-1]


class BandPreconditioner:
    """Inverse of ``Q = blockdiag(T, h^d M^T M)`` with ``T`` tridiagonal.

    ``T`` holds the main and first off-diagonal of the ``Y`` block of the
    Gauss-Newton Hessian and is factored once by banded Cholesky. If ``T`` is
    not positive definite, its main diagonal alone is used.
    """

    def __init__(self, hessian: GaussNewtonHessian):
        p = hessian.problem
        diag, off = hessian.tridiagonal_y()
        self.n_y = p.n_y
        self.c_scale = p.grid.cell_volume * p.prior.counts.astype(float)
        self.diag = diag
        self.off = off
        self.fallback = False
        ab = np.zeros((2, diag.size))
        ab[0, 1:] = off
        ab[1] = diag
        try:
            self.factor = cholesky_banded(ab, lower=False)
        except np.linalg.LinAlgError:
            logger.warning("tridiagonal preconditioner not SPD; using its diagonal")
            self.fallback = True
            self.factor = None

    def apply(self, r) -> np.ndarray:
        rY, rC = r[: self.n_y], r[self.n_y :]
        if self.fallback:
            zY = rY / self.diag
        else:
            zY = cho_solve_banded((self.factor, False), rY)
        return np.concatenate([zY, rC / self.c_scale])

    __call__ = apply

    def forward(self, w) -> np.ndarray:
        """Apply ``Q`` itself (used for round-trip checks)."""
        wY, wC = w[: self.n_y], w[self.n_y :]
        if self.fallback:
            qY = self.diag * wY
        else:
            qY = self.diag * wY
            qY[:-1] += self.off * wY[1:]
            qY[1:] += self.off * wY[:-1]
        return np.concatenate([qY, self.c_scale * wC])


def preconditioner(hessian: GaussNewtonHessian) -> BandPreconditioner:
    return BandPreconditioner(hessian)


def solve_direction(hessian: GaussNewtonHessian, d, config: SolverConfig):
    """Solve ``H p = -d``; fall back to ``-d`` on breakdown or non-descent."""
    M = preconditioner(hessian) if config.preconditioner else None
    solver = minres if config.krylov == "minres" else pcg
    p, info = solver(hessian, -d, M, tol=config.minres_tol, maxiter=config.minres_max_iter)
    if info.breakdown or not np.all(np.isfinite(p)) or (np.any(d) and d @ p >= 0):
        logger.warning("Krylov solve failed (iterations=%d); using steepest descent", info.iterations)
        return -d, dataclasses.replace(info, fallback=True)
    if not info.converged:
        logger.info("Krylov solver hit iteration cap %d (relres %.3g)", info.iterations, info.relres)
    return p, info


@dataclass
class LineSearchResult:
    eta: float
    F: float
    backtracks: int
    accepted: bool


def line_search(energy, F, Y, C, p, d, config: SolverConfig) -> LineSearchResult:
    """Backtracking ``eta = 0.5^i`` with Armijo decrease and positivity.

    ``energy(Y, C)`` must return ``inf`` for transformations with a
    non-positive simplex determinant, so the positivity requirement is part
    of the acceptance test.
    """
    n_y = Y.size
    slope = float(d @ p)
    eta = 1.0
    for i in range(config.ls_max_backtracks + 1):
        F_new = energy(Y + eta * p[:n_y], C + eta * p[n_y:])
        if np.isfinite(F_new) and F_new <= F + eta * config.ls_delta * slope and F_new < F:
            return LineSearchResult(eta, F_new, i, True)
        eta *= 0.5
    return LineSearchResult(0.0, F, config.ls_max_backtracks, False)


def _state(ev: Evaluation, iteration: int) -> GNState:
    return GNState(ev.Y, ev.C, ev.F, ev.breakdown, float(np.linalg.norm(ev.d)),
                   ev.reg.min_det, ev.reg.max_det, iteration)


def _record(level, it, ev, eta, info, slope=0.0):
    b = ev.breakdown
    return {
        "level": level,
        "iteration": it,
        "F": ev.F,
        "fit": b["fit"],
        "length": b["length"],
        "surface": b["surface"],
        "volume": b["volume"],
        "grad_norm": float(np.linalg.norm(ev.d)),
        "eta": eta,
        "minres_iter": info.iterations if info else 0,
        "minres_relres": info.precond_relres if info else 0.0,
        "minres_capped": int(not info.converged) if info else 0,
        "slope": slope,
        "fallback": int(info.fallback) if info else 0,
        "min_det": ev.reg.min_det,
        "max_det": ev.reg.max_det,
    }


def ggn_solve(problem: SegmentationProblem, Y0, C0, config: SolverConfig | None = None,
              level: int = 0, callback=None) -> SolveResult:
    """Run generalized Gauss-Newton from a feasible ``(Y0, C0)``.

    Every accepted iterate keeps all simplex determinants positive and
    strictly lowers ``F``. ``callback(record)`` is invoked after each
    iteration with the log record.
    """
    config = config or problem.config
    Y = np.asarray(Y0, dtype=float).copy()
    if problem.grid.boundary_condition == "dirichlet":
        fixed = ~problem.free
        if np.any(Y[fixed] != problem.X[fixed]):
            logger.warning("resetting boundary nodes to the identity for Dirichlet conditions")
            Y[fixed] = problem.X[fixed]
    C = np.asarray(C0, dtype=float).copy()
    ev = problem.evaluate(Y, C)
    if not ev.feasible:
        raise InfeasibleError(f"initial transformation is folded (min det {ev.reg.min_det:.3e})")
    F0 = ev.F
    Y0n = float(np.linalg.norm(Y))
    history = [_record(level, 0, ev, 0.0, None)]
    if callback:
        callback(history[-1])
    status = "max_iter"
    it = 0
    while True:
        gnorm = float(np.linalg.norm(ev.d))
        if gnorm <= config.grad_abs_tol:
            status = "converged"
            break
        if it >= config.max_outer_iter:
            status = "max_iter"
            break
        H = problem.hessian(ev)
        p, info = solve_direction(H, ev.d, config)
        slope = float(ev.d @ p)
        ls = line_search(problem.energy, ev.F, ev.Y, ev.C, p, ev.d, config)
        if not ls.accepted:
            # a stalled search at a near-stationary point is convergence
            status = "converged" if gnorm <= config.tol_g * (1 + abs(F0)) else "line_search_stalled"
            logger.info("line search failed at iteration %d (status %s)", it + 1, status)
            break
        it += 1
        n_y = problem.n_y
        Y_new = ev.Y + ls.eta * p[:n_y]
        C_new = ev.C + ls.eta * p[n_y:]
        ev_new = problem.evaluate(Y_new, C_new)
        assert ev_new.reg.min_det > 0 and ev_new.F < ev.F
        dF = ev.F - ev_new.F
        dY = float(np.linalg.norm(Y_new - ev.Y))
        ev = ev_new
        history.append(_record(level, it, ev, ls.eta, info, slope))
        if callback:
            callback(history[-1])
        logger.debug("level %d it %d F=%.6g |d|=%.3g eta=%.3g", level, it, ev.F, history[-1]["grad_norm"], ls.eta)
        if (dF <= config.tol_f * (1 + abs(F0))
                and dY <= config.tol_y * (1 + Y0n)
                and np.linalg.norm(ev.d) <= config.tol_g * (1 + abs(F0))):
            status = "converged"
            break
    return SolveResult(_state(ev, it), history, status, level)
