"""Space-time interaction tests for spatio-temporal point patterns."""

__version__ = "0.1.0"

from .classical import k_surface, knox_statistic, mantel_statistic, omnibus_statistic
from .data import CovariateGrid, Event, PointPattern, build_grid, filter_by_mark, load_events, write_events
from .geometry import Disc, Region, Window, disc_window_area, polygon_area, ripley_weight, temporal_weight
from .model import (
    FitResult,
    ModelParams,
    ModelSpec,
    conditional_intensity,
    fit_endemic,
    fit_full,
    log_likelihood,
    reproduction_number,
    score,
    spatial_residuals,
    temporal_residuals,
)
from .permute import PermutationPlan, TestReport, p_value, permute_times, run_test
from .simulate import SimulationConfig, simulate, simulate_endemic, simulate_offspring

__all__ = [
    "CovariateGrid",
    "Disc",
    "Event",
    "FitResult",
    "ModelParams",
    "ModelSpec",
    "PermutationPlan",
    "PointPattern",
    "Region",
    "SimulationConfig",
    "TestReport",
    "Window",
    "build_grid",
    "conditional_intensity",
    "disc_window_area",
    "filter_by_mark",
    "fit_endemic",
    "fit_full",
    "k_surface",
    "knox_statistic",
    "load_events",
    "log_likelihood",
    "mantel_statistic",
    "omnibus_statistic",
    "p_value",
    "permute_times",
    "polygon_area",
    "reproduction_number",
    "ripley_weight",
    "run_test",
    "score",
    "simulate",
    "simulate_endemic",
    "simulate_offspring",
    "spatial_residuals",
    "temporal_residuals",
    "temporal_weight",
    "write_events",
]
