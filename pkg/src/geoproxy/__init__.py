"""geoproxy: geographically conditioned regression with proxy-consistent
location encoders.

The estimator API (``ProxyConsistentRegressor``, ``LocationEmbeddingTransformer``)
composes with scikit-learn; the submodules expose the full experiment stack
(autodiff engine, encoders, splits, synthetic benchmark, metrics, CLI).
"""

from .config import ExperimentConfig
from .data import LabeledSample, LabeledTable, ProxyField, load_field, load_labeled_table
from .encoders import FrozenEmbeddingTable, LocationTimeEncoder, RffBank
from .estimator import LocationEmbeddingTransformer, ProxyConsistentRegressor
from .metrics import MetricReport, aggregate, compute_metrics, export_embedding_grid
from .model import FusionModel, LossConfig, proxy_only_regression
from .projection import equal_earth_project
from .splits import (
    CheckerboardConfig,
    SamplerConfig,
    SplitAssignment,
    checkerboard_split,
    make_seed_streams,
    uar_site_split,
)
from .synth import WorldConfig, generate_world, world_report
from .training import RunResult, run_experiment, run_sweep

__version__ = "0.1.0"

__all__ = [
    "CheckerboardConfig",
    "ExperimentConfig",
    "FrozenEmbeddingTable",
    "FusionModel",
    "LabeledSample",
    "LabeledTable",
    "LocationEmbeddingTransformer",
    "LocationTimeEncoder",
    "LossConfig",
    "MetricReport",
    "ProxyConsistentRegressor",
    "ProxyField",
    "RffBank",
    "RunResult",
    "SamplerConfig",
    "SplitAssignment",
    "WorldConfig",
    "aggregate",
    "checkerboard_split",
    "compute_metrics",
    "equal_earth_project",
    "export_embedding_grid",
    "generate_world",
    "load_field",
    "load_labeled_table",
    "make_seed_streams",
    "proxy_only_regression",
    "run_experiment",
    "run_sweep",
    "uar_site_split",
    "world_report",
]
