"""Topology-preserving segmentation by hyperelastic registration of a labeled prior."""
from .fitting import PriorPartition, build_prior
from .grid import GridSpec, cell_centers, nodal_coordinates
from .hyperelastic import InfeasibleError, RegularizerParams, determinant_field
from .imagemodel import ImageModel, fit_image, restrict_image
from .multilevel import MultilevelResult, build_pyramid, prolong, run_multilevel
from .optimizer import LOG_COLUMNS, SegmentationProblem, SolveResult, SolverConfig, ggn_solve
from .segmenter import (
    SegmentationResult,
    extract_boundary,
    rasterize_mask,
    segmentation_from_transform,
    topology_report,
)

__version__ = "0.1.0"

__all__ = [
    "GridSpec", "cell_centers", "nodal_coordinates",
    "ImageModel", "fit_image", "restrict_image",
    "RegularizerParams", "InfeasibleError", "determinant_field",
    "PriorPartition", "build_prior",
    "SolverConfig", "SegmentationProblem", "SolveResult", "ggn_solve", "LOG_COLUMNS",
    "MultilevelResult", "build_pyramid", "prolong", "run_multilevel",
    "SegmentationResult", "extract_boundary", "rasterize_mask",
    "segmentation_from_transform", "topology_report",
]
