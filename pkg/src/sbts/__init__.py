"""Synthetic time series by kernel-estimated Schrödinger-bridge drift and Euler simulation."""

__version__ = "0.1.0"

from ._backend import USE_NUMBA, backend_name
from .core import (
    ConfigError,
    DriftConfig,
    GenerationConfig,
    Panel,
    PanelError,
    TimeGrid,
    anchor,
    read_panel_csv,
    strip_anchor,
    write_panel_csv,
)
from .drift import DegenerateWeights, DriftQuery, SingularityError, estimate_drift
from .sampler import GeneratedPanel, generate_conditional_terminals, generate_paths
from .scaling import ScalingTransform, fit_transform, invert, rescale_returns
from .selection import SelectionConfig, SelectionReport, select, select_split

__all__ = [
    "__version__",
    "USE_NUMBA",
    "backend_name",
    "ConfigError",
    "DriftConfig",
    "GenerationConfig",
    "Panel",
    "PanelError",
    "TimeGrid",
    "anchor",
    "read_panel_csv",
    "strip_anchor",
    "write_panel_csv",
    "DegenerateWeights",
    "DriftQuery",
    "SingularityError",
    "estimate_drift",
    "GeneratedPanel",
    "generate_conditional_terminals",
    "generate_paths",
    "ScalingTransform",
    "fit_transform",
    "invert",
    "rescale_returns",
    "SelectionConfig",
    "SelectionReport",
    "select",
    "select_split",
]
