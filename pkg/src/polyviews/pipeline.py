"""
Pipeline stages and their artifacts.

Every stage reads the artifacts of the stage before it from the output
directory and records what it writes in the run manifest, so stages can be
rerun one at a time. Running a stage first deletes its own outputs and those
of every later stage. Layout of an output directory::

    manifest.json
    fits.json                       fit stage
    summary/rmse_histogram.json
    summary/total_views.json
    control/fits.json               fit stage with control enabled
    control/comparison.json         features stage with control enabled
    features/N<n>.csv               features stage, one file per segment count
    features/N<n>/correlations.json
    features/N<n>/marginals.json
    features/N<n>/joint_densities.json
    summary/segment_counts.json
    summary/angle_histogram.json
    clusters/N<n>/...               cluster stage
    models/N<n>/<kind>.json         model stage
    scores/N<n>.json                score stage
    scores/summary.json
"""

from __future__ import annotations

import logging
import re
from collections.abc import Callable, Sequence
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path
from typing import Any

import numpy as np
import numpy.typing as npt
import scipy

from .adherence import evaluate_models
from .clustering import (
    UNASSIGNED,
    ClusterAssignment,
    average_curve,
    cluster_names,
    cut,
    pattern_frequencies,
    pca,
    prototype_frequencies,
    single_linkage,
    standardize,
)
from .config import PipelineConfig, derive_seed
from .errors import (
    ConfigError,
    DegenerateCovarianceError,
    EmptyInputError,
    MissingUpstreamArtifactError,
    ZeroVarianceError,
)
from .features import (
    SegmentFeatures,
    angle_histogram,
    consecutive_joint_densities,
    correlations,
    extract_all,
    feature_matrix,
    gate_by_rmse,
    group_by_segments,
    marginal_histograms,
    read_features_csv,
    segment_count_proportions,
    sign_pattern,
    write_features_csv,
)
from .fileutils import Manifest, read_csv, read_json, write_csv, write_json
from .ingest import (
    ControlConfig,
    NormalizedProfile,
    generate_control_corpus,
    largest_monthly_views,
    load_corpus,
    normalize_corpus,
)
from .models import MODEL_KINDS, fit_per_cluster, model_from_dict
from .segmented import SegmentedFit, fit_corpus, is_local_minimum

FloatArray = npt.NDArray[np.float64]

STAGES = ("fit", "features", "cluster", "model", "score")

FITS = "fits.json"
CONTROL_FITS = "control/fits.json"
_GROUP_FILE = re.compile(r"^N(\d+)\.csv$")

STAGE_OUTPUTS: dict[str, tuple[str, ...]] = {
    "fit": (
        FITS,
        CONTROL_FITS,
        "summary/rmse_histogram.json",
        "summary/total_views.json",
    ),
    "features": (
        "features",
        "control/comparison.json",
        "summary/segment_counts.json",
        "summary/angle_histogram.json",
    ),
    "cluster": ("clusters",),
    "model": ("models",),
    "score": ("scores",),
}

logger = logging.getLogger(__name__)


def package_versions() -> dict[str, str]:
    try:
        own = version("polyviews")
    except PackageNotFoundError:
        own = "0+unknown"
    return {"polyviews": own, "numpy": np.__version__, "scipy": scipy.__version__}


def _histogram(
    values: Sequence[float], bins: int, upper: float | None = None
) -> dict[str, Any]:
    data = np.asarray(values, dtype=float)
    if data.shape[0] == 0:
        return {"edges": [], "counts": []}
    hi = float(data.max()) if upper is None else max(upper, float(data.max()))
    lo = min(0.0, float(data.min()))
    if hi <= lo:
        hi = lo + 1.0
    counts, edges = np.histogram(data, bins=bins, range=(lo, hi))
    return {"edges": edges.tolist(), "counts": counts.tolist()}


def _write_json(manifest: Manifest, relative: str, data: Any) -> Path:
    path = write_json(manifest.directory / relative, data, manifest.settings)
    manifest.record_artifact(path)
    return path


def _fit_records(fits: Sequence[SegmentedFit]) -> list[dict[str, Any]]:
    return [f.to_record() for f in fits]


def _read_fits(manifest: Manifest, relative: str) -> list[SegmentedFit]:
    return [SegmentedFit.from_record(r) for r in read_json(manifest.require(relative))]


def _check_oracle(
    fits: Sequence[SegmentedFit], profiles: Sequence[NormalizedProfile]
) -> float | None:
    """Share of single-breakpoint fits beaten by the exhaustive search."""
    by_id = {p.id: p for p in profiles}
    single = [f for f in fits if f.n_breakpoints == 1]
    local = sum(is_local_minimum(f, by_id[f.id]) for f in single)
    if not single:
        logger.info("No single-breakpoint fits to check against the grid search")
        return None
    rate = local / len(single)
    logger.info(
        "Grid search disagrees with %d of %d single-breakpoint fits (%.1f%%)",
        local,
        len(single),
        100.0 * rate,
    )
    return rate


def _fit_profiles(
    config: PipelineConfig, profiles: Sequence[NormalizedProfile]
) -> list[SegmentedFit]:
    fits = fit_corpus(profiles, config.fit)
    if config.check_oracle:
        _check_oracle(fits, profiles)
    return fits


def stage_fit(config: PipelineConfig, manifest: Manifest) -> None:
    """Load and normalize the corpus, fit every profile, optionally the control too."""
    if config.input is None:
        raise ConfigError("The fit stage needs an input corpus.")
    corpus = load_corpus(config.input, config.format)
    profiles = normalize_corpus(corpus)
    fits = _fit_profiles(config, profiles)
    _write_json(manifest, FITS, _fit_records(fits))
    _write_json(
        manifest,
        "summary/rmse_histogram.json",
        {
            "threshold": config.rmse_threshold,
            **_histogram([f.rmse for f in fits], 50, config.rmse_threshold),
        },
    )
    _write_json(
        manifest,
        "summary/total_views.json",
        _histogram([float(p.total_views) for p in profiles], 50),
    )

    if config.control:
        h_max = config.h_max or largest_monthly_views(corpus)
        control = generate_control_corpus(
            corpus, ControlConfig(h_max, derive_seed(config.seed, "control"))
        )
        control_fits = _fit_profiles(config, normalize_corpus(control))
        _write_json(manifest, CONTROL_FITS, _fit_records(control_fits))
        manifest.data["control"] = {"h_max": h_max}


def _pass_rate(passed: Sequence[SegmentedFit], total: int) -> float | None:
    return len(passed) / total if total else None


def _angle_histogram(features: Sequence[SegmentFeatures]) -> dict[str, Any]:
    if not features:
        return {"edges": [], "masses": []}
    edges, masses = angle_histogram(features)
    return {"edges": edges.tolist(), "masses": masses.tolist()}


def stage_features(config: PipelineConfig, manifest: Manifest) -> None:
    """Gate fits by RMSE, extract features and summarize each segment-count group."""
    fits = _read_fits(manifest, FITS)
    passed, _ = gate_by_rmse(fits, config.rmse_threshold)
    features = extract_all(passed)
    groups = group_by_segments(features)

    for n, group in groups.items():
        csv_path = write_features_csv(
            manifest.directory / "features" / f"N{n}.csv", group
        )
        manifest.record_artifact(csv_path)
        _write_json(
            manifest, f"features/N{n}/marginals.json", marginal_histograms(group)
        )
        _write_json(
            manifest,
            f"features/N{n}/joint_densities.json",
            consecutive_joint_densities(group),
        )
        try:
            report = correlations(group, n)
        except (EmptyInputError, ZeroVarianceError) as e:
            logger.warning("No correlations for %d-segment profiles: %s", n, e)
        else:
            _write_json(manifest, f"features/N{n}/correlations.json", report.to_dict())

    _write_json(
        manifest,
        "summary/segment_counts.json",
        {
            "n_fits": len(fits),
            "n_passed": len(passed),
            "proportions": {
                str(n): p for n, p in segment_count_proportions(passed).items()
            },
        },
    )
    _write_json(manifest, "summary/angle_histogram.json", _angle_histogram(features))

    if config.control:
        control_fits = _read_fits(manifest, CONTROL_FITS)
        control_passed, _ = gate_by_rmse(control_fits, config.rmse_threshold)
        _write_json(
            manifest,
            "control/comparison.json",
            {
                "real": {
                    "pass_rate": _pass_rate(passed, len(fits)),
                    "angles": _angle_histogram(features),
                },
                "control": {
                    "pass_rate": _pass_rate(control_passed, len(control_fits)),
                    "angles": _angle_histogram(extract_all(control_passed)),
                },
            },
        )
    logger.info(
        "Extracted features of %d profiles in %d groups", len(features), len(groups)
    )


def feature_groups(manifest: Manifest) -> dict[int, list[SegmentFeatures]]:
    """Read every ``features/N<n>.csv`` of a run."""
    directory = manifest.directory / "features"
    if not directory.is_dir():
        raise MissingUpstreamArtifactError(
            f"No features in '{manifest.directory}'; run the features stage first."
        )
    groups = {}
    for path in directory.iterdir():
        match = _GROUP_FILE.match(path.name)
        if match:
            groups[int(match.group(1))] = read_features_csv(path)
    return dict(sorted(groups.items()))


def _cluster_points(
    config: PipelineConfig, group: Sequence[SegmentFeatures]
) -> FloatArray:
    points = feature_matrix(group)
    return standardize(points) if config.cluster.standardize else points


def _cluster_group(
    config: PipelineConfig, manifest: Manifest, n: int, group: Sequence[SegmentFeatures]
) -> None:
    base = f"clusters/N{n}"
    points = _cluster_points(config, group)
    dendrogram = single_linkage(points)
    k = min(config.cluster.k, len(group))
    assignment = cut(dendrogram, k, config.cluster.min_size_for(len(group)))
    names = cluster_names(assignment, n)

    path = write_csv(
        manifest.directory / base / "assignments.csv",
        ["id", "label", "name"],
        (
            [f.id, int(label), names.get(int(label), "")]
            for f, label in zip(group, assignment.labels)
        ),
    )
    manifest.record_artifact(path)
    _write_json(
        manifest,
        f"{base}/dendrogram.json",
        {
            "linkage": dendrogram.linkage_matrix().tolist(),
            "merge_distance_ratio": dendrogram.merge_distance_ratio(),
        },
    )

    n_components = min(3 if n >= 4 else 2, points.shape[1])
    try:
        projection = pca(points, n_components)
    except DegenerateCovarianceError as e:
        logger.warning("No PCA for %d-segment profiles: %s", n, e)
    else:
        _write_json(
            manifest,
            f"{base}/pca.json",
            {
                **projection.to_dict(),
                "explained_first_two": float(
                    projection.explained_variance_ratio[:2].sum()
                ),
            },
        )
        path = write_csv(
            manifest.directory / base / "pca_scores.csv",
            ["id", "label", *(f"pc{i + 1}" for i in range(n_components))],
            (
                [f.id, int(label), *row.tolist()]
                for f, label, row in zip(group, assignment.labels, projection.scores)
            ),
        )
        manifest.record_artifact(path)

    curves: dict[str, Any] = {}
    members = {
        label: [f for f, c in zip(group, assignment.labels) if c == label]
        for label in assignment.cluster_labels
    }
    prototypes: dict[str, Any] = {}
    if n >= 2:
        patterns = [sign_pattern(f) for f in group]
        tables = prototype_frequencies(assignment, patterns)
        for label, table in tables.items():
            modal = table.modal
            prototypes[names[label]] = {
                "count": table.count,
                "frequencies": table.frequencies,
                "modal": modal,
            }
            modal_members = [f for f in members[label] if sign_pattern(f) == modal]
            curves[names[label]] = {
                "all": average_curve(members[label]).tolist(),
                "modal": average_curve(modal_members).tolist(),
            }
        _write_json(manifest, f"{base}/prototypes.json", prototypes)
        overall = pattern_frequencies(patterns)
        _write_json(
            manifest,
            f"{base}/prototypes_all.json",
            {
                "count": overall.count,
                "frequencies": overall.frequencies,
                "modal": overall.modal,
            },
        )
    else:
        for label, group_members in members.items():
            curves[names[label]] = {"all": average_curve(group_members).tolist()}
    _write_json(manifest, f"{base}/average_curves.json", curves)
    logger.info(
        "%d-segment profiles: %d clusters, %d unassigned",
        n,
        len(assignment.cluster_labels),
        int(np.sum(assignment.labels == UNASSIGNED)),
    )


def stage_cluster(config: PipelineConfig, manifest: Manifest) -> None:
    """Cluster each segment-count group and summarize its clusters."""
    for n, group in feature_groups(manifest).items():
        if len(group) < 2:
            logger.warning(
                "Skipping clustering of %d-segment profiles: %d profile(s)",
                n,
                len(group),
            )
            continue
        _cluster_group(config, manifest, n, group)


def _read_assignment(
    manifest: Manifest, n: int, group: Sequence[SegmentFeatures]
) -> ClusterAssignment | None:
    path = manifest.directory / f"clusters/N{n}/assignments.csv"
    if not path.exists():
        return None
    labels = {row[0]: int(row[1]) for row in read_csv(path)[1:]}
    return ClusterAssignment(
        np.asarray([labels.get(f.id, UNASSIGNED) for f in group], dtype=np.int64),
        len({v for v in labels.values() if v != UNASSIGNED}),
    )


def _clusters_of(
    manifest: Manifest, n: int, group: Sequence[SegmentFeatures]
) -> list[list[SegmentFeatures]]:
    assignment = _read_assignment(manifest, n, group)
    if assignment is None or not assignment.cluster_labels:
        return [list(group)]
    return [
        [f for f, c in zip(group, assignment.labels) if c == label]
        for label in assignment.cluster_labels
    ]


def stage_model(config: PipelineConfig, manifest: Manifest) -> None:
    """Fit the four generative models per segment-count group, per cluster."""
    for n, group in feature_groups(manifest).items():
        if len(group) < 2:
            logger.warning(
                "Skipping models of %d-segment profiles: %d profile(s)",
                n,
                len(group),
            )
            continue
        clusters = _clusters_of(manifest, n, group)
        for kind in MODEL_KINDS:
            model = fit_per_cluster(kind, clusters, config.model)
            _write_json(manifest, f"models/N{n}/{kind}.json", model.to_dict())
        logger.info("Fitted %d models for %d-segment profiles", len(MODEL_KINDS), n)


def stage_score(config: PipelineConfig, manifest: Manifest) -> None:
    """Sample every model, compare it with the real features and rank the models."""
    summary: dict[str, Any] = {}
    for n, group in feature_groups(manifest).items():
        if len(group) < 2:
            continue
        models = [
            model_from_dict(read_json(manifest.require(f"models/N{n}/{kind}.json")))
            for kind in MODEL_KINDS
        ]
        results = evaluate_models(
            group,
            models,
            config.model.samples_per_model,
            derive_seed(config.seed, f"score/{n}"),
            config.grid,
            config.workers,
        )
        _write_json(
            manifest,
            f"scores/N{n}.json",
            {
                "scores": [score.to_dict() for score, _ in results],
                "plots": [plot.to_dict() for _, plot in results],
            },
        )
        summary[str(n)] = [score.to_dict() for score, _ in results]
        for score, _ in results:
            logger.info(
                "%d segments, %s: epsilon %.4f", n, score.model_kind, score.epsilon
            )
    _write_json(manifest, "scores/summary.json", summary)


STAGE_FUNCTIONS: dict[str, Callable[[PipelineConfig, Manifest], None]] = {
    "fit": stage_fit,
    "features": stage_features,
    "cluster": stage_cluster,
    "model": stage_model,
    "score": stage_score,
}


def _record_config(config: PipelineConfig, manifest: Manifest) -> None:
    manifest.data["config"] = config.to_dict()
    manifest.data["config_hash"] = config.config_hash()
    manifest.data["seed"] = config.seed
    manifest.data["versions"] = package_versions()


def _invalidate(manifest: Manifest, name: str) -> None:
    """Delete the outputs of stage ``name`` and of every stage after it."""
    for later in STAGES[STAGES.index(name) :]:
        for relative in STAGE_OUTPUTS[later]:
            manifest.discard(relative)
        manifest.forget_stage(later)


def run_stage(config: PipelineConfig, name: str, *, fresh: bool = False) -> Path:
    """
    Run one stage against ``config.out`` and update its manifest.

    :raises ~polyviews.errors.MissingUpstreamArtifactError:
        if the previous stage has not been run
    """
    if name not in STAGE_FUNCTIONS:
        raise ConfigError(f"Unknown stage '{name}'.")
    with Manifest(config.out, fresh=fresh) as manifest:
        _record_config(config, manifest)
        _invalidate(manifest, name)
        manifest.start_stage(name)
        STAGE_FUNCTIONS[name](config, manifest)
        manifest.finish_stage(name)
    return manifest.directory


def run_pipeline(config: PipelineConfig) -> Path:
    """
    Run every stage in order into a fresh manifest.

    :return: the output directory
    """
    with Manifest(config.out, fresh=True) as manifest:
        _record_config(config, manifest)
        _invalidate(manifest, STAGES[0])
        for name in STAGES:
            manifest.start_stage(name)
            STAGE_FUNCTIONS[name](config, manifest)
            manifest.finish_stage(name)
    logger.info("Pipeline finished, artifacts in '%s'", manifest.directory)
    return manifest.directory
