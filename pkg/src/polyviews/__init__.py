"""
Polygonal analysis of cumulative view profiles.

Fit continuous piecewise-linear curves to cumulative views, describe each
segment by its angle and length, cluster the descriptions and compare
generative models of them. Use :func:`polyviews.run_pipeline` for the full
analysis or the stage modules for single steps.
"""

from .adherence import (
    AdherenceScore,
    GridConfig,
    Histogram2D,
    epsilon,
    histogram2d,
    joint_pca,
    rank_models,
)
from .clustering import (
    ClusterConfig,
    Dendrogram,
    average_curve,
    cut,
    pca,
    prototype_frequencies,
    single_linkage,
)
from .config import PipelineConfig, build_config, derive_seed, load_config
from .errors import PolyviewsError
from .features import (
    SegmentFeatures,
    correlations,
    extract_features,
    gate_by_rmse,
    sign_pattern,
)
from .ingest import (
    ControlConfig,
    NormalizedProfile,
    ViewProfile,
    generate_control_corpus,
    load_corpus,
    normalize,
)
from .models import (
    ModelConfig,
    fit_independent,
    fit_markov1_multi,
    fit_markov1_uni,
    fit_null,
    sample,
)
from .pipeline import run_pipeline, run_stage
from .segmented import (
    FitConfig,
    SegmentedFit,
    fit_auto,
    fit_fixed,
    grid_search_single,
    predict,
    ssr,
)

try:
    # Prefer the file written by setuptools_scm at build/install time
    from .__about__ import __version__
except Exception:  # file not generated yet (e.g., fresh clone)
    try:
        # If the package is installed, ask importlib.metadata
        from importlib.metadata import version as _pkg_version

        __version__ = _pkg_version("polyviews")
    except Exception:
        # Last resort for local source trees without SCM metadata
        __version__ = "0+unknown"

__all__ = [
    "AdherenceScore",
    "ClusterConfig",
    "ControlConfig",
    "Dendrogram",
    "FitConfig",
    "GridConfig",
    "Histogram2D",
    "ModelConfig",
    "NormalizedProfile",
    "PipelineConfig",
    "PolyviewsError",
    "SegmentFeatures",
    "SegmentedFit",
    "ViewProfile",
    "average_curve",
    "build_config",
    "correlations",
    "cut",
    "derive_seed",
    "epsilon",
    "extract_features",
    "fit_auto",
    "fit_fixed",
    "fit_independent",
    "fit_markov1_multi",
    "fit_markov1_uni",
    "fit_null",
    "gate_by_rmse",
    "generate_control_corpus",
    "grid_search_single",
    "histogram2d",
    "joint_pca",
    "load_config",
    "load_corpus",
    "normalize",
    "pca",
    "predict",
    "prototype_frequencies",
    "rank_models",
    "run_pipeline",
    "run_stage",
    "sample",
    "sign_pattern",
    "single_linkage",
    "ssr",
    "__version__",
]
