"""Complexity measures of trained networks."""
from .norms import (
    LayerNorms,
    frobenius_measures,
    layer_matrix,
    layer_norms,
    margin,
    margins,
    norms_of,
    output_measure,
    path_measures,
    percentile_nearest_rank,
    spectral_measures,
    vc_measure,
)
from .pacbayes import (
    MAGNITUDE,
    UNIFORM,
    PacBayesConfig,
    PerturbationProblem,
    SigmaResult,
    flatness_measures,
    grid_scan_sigma,
    pacbayes_sigma,
)
from .report import ALIASES, MEASURE_NAMES, MeasureConfig, MeasureReport, compute_all, steps_measure

__all__ = [
    "ALIASES", "LayerNorms", "MAGNITUDE", "MEASURE_NAMES", "MeasureConfig", "MeasureReport",
    "PacBayesConfig", "PerturbationProblem", "SigmaResult", "UNIFORM", "compute_all",
    "flatness_measures", "frobenius_measures", "grid_scan_sigma", "layer_matrix", "layer_norms",
    "margin", "margins", "norms_of", "output_measure", "pacbayes_sigma", "path_measures",
    "percentile_nearest_rank", "spectral_measures", "steps_measure", "vc_measure",
]
