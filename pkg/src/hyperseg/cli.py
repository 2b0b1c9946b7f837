"""Command-line front end: ``python -m hyperseg {segment,register,check-gradient}``.

Exit codes: 0 success, 1 gradient check failed, 2 configuration error,
3 I/O error, 4 line search stalled on the finest level, 5 topology violation.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import formats
from .diagnostics import check_gradient_problem, gradient_check
from .grid import average_to_cells
from .hyperelastic import InfeasibleError, RegularizerParams, determinant_field
from .imagemodel import eval_with_gradient, fit_image
from .multilevel import default_levels, run_multilevel
from .optimizer import LOG_COLUMNS, SolverConfig
from .segmenter import segmentation_from_transform

logger = logging.getLogger("hyperseg")

EXIT_OK = 0
EXIT_GRADIENT = 1
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_STALL = 4
EXIT_TOPOLOGY = 5

MODES = ("segment", "register", "check-gradient")
DEFAULT_PARAMS = {2: (100.0, 0.0, 100.0), 3: (10.0, 1.0, 1.0)}
MAX_CHECK_N_3D = 16


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    mode: str = "segment"
    image: str | None = None
    labels: str | None = None
    out: str | None = None
    ground_truth: str | None = None
    alpha_l: float | None = None
    alpha_s: float | None = None
    alpha_v: float | None = None
    surface: str = "well"
    bc: str = "natural"
    gamma: float | None = None
    levels: int | None = None
    tol_f: float = 1e-3
    tol_y: float = 1e-2
    tol_g: float = 1e-2
    max_iter: int = 50
    # check-gradient only
    dim: int = 3
    n: int = 2
    flat: bool = False

    def params(self, dim: int) -> RegularizerParams:
        """Regularization weights with per-dimension defaults filled in."""
        al, as_, av = DEFAULT_PARAMS[dim]
        al = al if self.alpha_l is None else self.alpha_l
        as_ = as_ if self.alpha_s is None else self.alpha_s
        av = av if self.alpha_v is None else self.alpha_v
        if dim == 2 and as_ != 0:
            raise ConfigError("alpha_s must be 0 for 2D inputs")
        try:
            return RegularizerParams(al, as_, av, self.surface)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def solver(self) -> SolverConfig:
        try:
            return SolverConfig(gamma=self.gamma, tol_f=self.tol_f, tol_y=self.tol_y,
                                tol_g=self.tol_g, max_outer_iter=self.max_iter)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc


_KEYS = {f.name for f in fields(RunConfig)}


def validate(cfg: RunConfig) -> RunConfig:
    if cfg.mode not in MODES:
        raise ConfigError(f"unknown mode {cfg.mode!r}")
    for name in ("alpha_l", "alpha_s", "alpha_v", "gamma"):
        v = getattr(cfg, name)
        if v is not None and (not np.isfinite(v) or v < 0):
            raise ConfigError(f"{name} must be a finite non-negative number")
    if cfg.alpha_v == 0:
        raise ConfigError("alpha_v must be positive (the volume barrier is required)")
    if cfg.surface not in ("well", "convex"):
        raise ConfigError("surface must be 'well' or 'convex'")
    if cfg.bc not in ("natural", "dirichlet"):
        raise ConfigError("bc must be 'natural' or 'dirichlet'")
    if cfg.bc == "dirichlet" and cfg.gamma:
        raise ConfigError("gamma must be 0 with Dirichlet boundary conditions")
    if cfg.levels is not None and cfg.levels < 1:
        raise ConfigError("levels must be >= 1")
    if cfg.max_iter < 0 or min(cfg.tol_f, cfg.tol_y, cfg.tol_g) < 0:
        raise ConfigError("tolerances and max_iter must be non-negative")
    if cfg.dim not in (2, 3) or cfg.n < 2:
        raise ConfigError("check-gradient needs dim in {2, 3} and n >= 2")
    if cfg.dim == 2 and cfg.mode == "check-gradient" and cfg.alpha_s:
        raise ConfigError("alpha_s must be 0 for 2D inputs")
    if cfg.mode != "check-gradient":
        missing = [k for k in ("image", "labels", "out") if getattr(cfg, k) is None]
        if missing:
            raise ConfigError(f"missing required setting(s): {', '.join(missing)}")
    return cfg


def parse_config(file_values: dict | None = None, overrides: dict | None = None) -> RunConfig:
    """Merge config-file values and flag overrides (flags win); reject unknown keys."""
    merged = {}
    for source in (file_values or {}, overrides or {}):
        for key, value in source.items():
            key = key.replace("-", "_")
            if key not in _KEYS:
                raise ConfigError(f"unknown configuration key {key!r}")
            if value is not None:
                merged[key] = value
    try:
        cfg = RunConfig(**merged)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    for name in ("alpha_l", "alpha_s", "alpha_v", "gamma", "tol_f", "tol_y", "tol_g"):
        v = getattr(cfg, name)
        if v is not None and not isinstance(v, (int, float)):
            raise ConfigError(f"{name} must be a number")
    return validate(cfg)


def read_config_file(path) -> dict:
    try:
        data = json.loads(Path(path).read_text())
    except OSError as exc:
        raise OSError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return data


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hyperseg", description="Topology-preserving segmentation by hyperelastic registration of a labeled prior.")
    sub = parser.add_subparsers(dest="mode", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file with settings (flags take precedence)")
    common.add_argument("--alpha-l", type=float)
    common.add_argument("--alpha-s", type=float)
    common.add_argument("--alpha-v", type=float)
    common.add_argument("--surface", choices=("well", "convex"))
    common.add_argument("-v", "--verbose", action="count", default=0)
    run = argparse.ArgumentParser(add_help=False)
    run.add_argument("--image", help="template image (.pgm for 2D, .mhd for 3D)")
    run.add_argument("--labels", help="prior label map with ids 1..m")
    run.add_argument("--out", help="output directory")
    run.add_argument("--ground-truth", help="optional label map for Dice scores")
    run.add_argument("--levels", type=int, help="number of multilevel grids")
    run.add_argument("--bc", choices=("natural", "dirichlet"))
    run.add_argument("--gamma", type=float, help="Hessian shift (default h^dim, 0 for Dirichlet)")
    run.add_argument("--tol-f", type=float)
    run.add_argument("--tol-y", type=float)
    run.add_argument("--tol-g", type=float)
    run.add_argument("--max-iter", type=int, help="outer iterations per level")
    sub.add_parser("segment", parents=[common, run], help="segment an image and write the mask")
    sub.add_parser("register", parents=[common, run], help="write the transformation and deformed template only")
    chk = sub.add_parser("check-gradient", parents=[common], help="finite-difference gradient check")
    chk.add_argument("--dim", type=int, choices=(2, 3))
    chk.add_argument("--n", type=int, help="cells per axis")
    chk.add_argument("--flat", action="store_true", default=None, help="use a constant image")
    return parser


def config_from_args(argv=None) -> RunConfig:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    flags = {k: v for k, v in vars(args).items() if k not in ("config", "verbose")}
    file_values = read_config_file(args.config) if args.config else {}
    file_values.pop("mode", None)
    return parse_config(file_values, flags)


# -- runs ---------------------------------------------------------------------


def _load_inputs(cfg: RunConfig):
    image = formats.load_image(cfg.image)
    labels = formats.load_labels(cfg.labels)
    if image.shape != labels.shape:
        raise formats.FormatError(f"image shape {image.shape} != labels shape {labels.shape}")
    gt = None
    if cfg.ground_truth:
        gt = formats.load_labels(cfg.ground_truth)
        if gt.shape != labels.shape:
            raise formats.FormatError("ground truth does not match the labels grid")
    return image, labels, gt


def _ext(dim):
    return ".pgm" if dim == 2 else ".mhd"


def run(cfg: RunConfig) -> int:
    if cfg.mode == "check-gradient":
        return run_check_gradient(cfg)
    t0 = time.perf_counter()
    try:
        image, labels, gt = _load_inputs(cfg)
        out = formats.ensure_dir(cfg.out)
    except (OSError, formats.FormatError) as exc:
        logger.error("%s", exc)
        return EXIT_IO
    dim = image.ndim
    if dim not in (2, 3) or len(set(image.shape)) != 1:
        logger.error("inputs must be square (2D) or cubic (3D), got shape %s", image.shape)
        return EXIT_CONFIG
    try:
        params = cfg.params(dim)
        solver = cfg.solver()
        L = cfg.levels if cfg.levels is not None else default_levels(image.shape[0])
        result = run_multilevel(image, labels, params, solver, L, cfg.bc)
    except ConfigError as exc:
        logger.error("%s", exc)
        return EXIT_CONFIG
    except InfeasibleError as exc:
        logger.error("%s", exc)
        return EXIT_TOPOLOGY
    except ValueError as exc:
        logger.error("%s", exc)
        return EXIT_CONFIG

    grid = result.grids[-1]
    final = result.final
    Y = final.state.Y
    v = determinant_field(grid, Y)
    det_range = [float(v.min()), float(v.max())]
    summary = {
        "mode": cfg.mode,
        "dim": dim,
        "n": grid.n,
        "levels": len(result.results),
        "params": asdict(params),
        "boundary_condition": cfg.bc,
        "F": final.state.F,
        "breakdown": final.state.breakdown,
        "det_range": det_range,
        "status": [r.status for r in result.results],
        "iterations": [r.state.iteration for r in result.results],
    }
    code = EXIT_OK
    try:
        formats.write_energy_log(out / "energy_log.csv", result.history, LOG_COLUMNS)
        if det_range[0] <= 0:
            logger.error("final transformation folds (min det %.3e); no outputs besides the log", det_range[0])
            return EXIT_TOPOLOGY
        formats.write_transform(out / "transform.txt", grid, Y)
        if cfg.mode == "register":
            pts = average_to_cells(grid, Y).reshape(dim, -1).T
            warped, _ = eval_with_gradient(fit_image(grid, image), pts, gradient=False)
            warped = warped.reshape(grid.cell_shape, order="F")
            if dim == 2:
                formats.write_pgm(out / "deformed.pgm", np.clip(np.rint(warped), 0, 255).astype(np.uint8))
            else:
                formats.write_mhd(out / "deformed.mhd", warped.astype(np.float32), "MET_FLOAT")
        else:
            seg = segmentation_from_transform(grid, Y, labels, gt)
            formats.write_labels(out / f"mask{_ext(dim)}", seg.mask)
            formats.write_geometry(out / "boundary.txt", seg.boundary_geometry)
            summary["metrics"] = seg.metrics
            if not seg.metrics["components_match"]:
                logger.error("component counts changed: %s vs prior %s",
                             seg.metrics["components"], seg.metrics["prior_components"])
                code = EXIT_TOPOLOGY
        if code == EXIT_OK and final.status == "line_search_stalled":
            logger.warning("line search stalled on the finest level")
            code = EXIT_STALL
        summary["exit_code"] = code
        summary["wall_time_s"] = time.perf_counter() - t0
        formats.write_summary(out / "summary.json", summary)
    except OSError as exc:
        logger.error("%s", exc)
        return EXIT_IO
    return code


def run_check_gradient(cfg: RunConfig) -> int:
    if cfg.dim == 3 and cfg.n > MAX_CHECK_N_3D:
        logger.error("check-gradient refuses 3D grids with n > %d", MAX_CHECK_N_3D)
        return EXIT_CONFIG
    try:
        params = cfg.params(cfg.dim)
    except ConfigError as exc:
        logger.error("%s", exc)
        return EXIT_CONFIG
    problem, Y, C = check_gradient_problem(cfg.dim, cfg.n, params, flat=bool(cfg.flat))
    report = gradient_check(problem, Y, C)
    for name, err in report.errors.items():
        print(f"{name:8s} rel_err={err:.3e} |grad|={report.norms[name]:.6e}")
    print(f"fit_Y    |grad|={report.norms['fit_Y']:.6e}")
    ok = report.passed(1e-5)
    print(f"max rel_err={report.max_error:.3e} {'PASS' if ok else 'FAIL'}")
    return EXIT_OK if ok else EXIT_GRADIENT


def main(argv=None) -> int:
    try:
        cfg = config_from_args(argv)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
