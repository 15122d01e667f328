"""Scoring generative models against real features in a shared PCA plane."""

from __future__ import annotations

import hashlib
import logging
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any

import numpy as np
import numpy.typing as npt

from .clustering import PCAProjection, pca
from .errors import (
    BinMismatchError,
    ConfigError,
    EmptyInputError,
    MixedSegmentCountsError,
)
from .features import SegmentFeatures, feature_matrix, uniform_segment_count
from .models import MODEL_KINDS, GenerativeModel

FloatArray = npt.NDArray[np.float64]

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class GridConfig:
    bins_x: int = 20
    bins_y: int = 20

    def __post_init__(self) -> None:
        if self.bins_x < 1 or self.bins_y < 1:
            raise ConfigError(
                f"Grid needs >= 1 bin per axis, got {self.bins_x}x{self.bins_y}."
            )


@dataclass(frozen=True, eq=False)
class Histogram2D:
    """Normalized 2-D histogram; ``masses[i, j]`` covers x bin ``i`` and y bin ``j``."""

    x_edges: FloatArray
    y_edges: FloatArray
    masses: FloatArray

    def same_bins(self, other: Histogram2D) -> bool:
        return (
            self.x_edges.shape == other.x_edges.shape
            and self.y_edges.shape == other.y_edges.shape
            and bool(np.array_equal(self.x_edges, other.x_edges))
            and bool(np.array_equal(self.y_edges, other.y_edges))
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "x_edges": self.x_edges.tolist(),
            "y_edges": self.y_edges.tolist(),
            "masses": self.masses.tolist(),
        }


@dataclass(frozen=True)
class AdherenceScore:
    model_kind: str
    epsilon: float
    n_real: int
    n_synth: int
    grid: tuple[int, int]
    pca_basis_id: str

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": self.model_kind,
            "epsilon": self.epsilon,
            "n_real": self.n_real,
            "n_synth": self.n_synth,
            "grid": list(self.grid),
            "pca_basis_id": self.pca_basis_id,
        }


@dataclass(frozen=True, eq=False)
class JointProjection:
    projection: PCAProjection
    real_scores: FloatArray
    synthetic_scores: FloatArray

    @property
    def basis_id(self) -> str:
        digest = hashlib.sha256(
            np.ascontiguousarray(self.projection.components).tobytes()
        )
        return digest.hexdigest()[:12]


@dataclass(frozen=True, eq=False)
class AdherencePlot:
    """Real density, synthetic density and their absolute difference on one grid."""

    model_kind: str
    real: Histogram2D
    synthetic: Histogram2D

    @property
    def difference(self) -> FloatArray:
        return np.abs(self.real.masses - self.synthetic.masses)

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": self.model_kind,
            "x_edges": self.real.x_edges.tolist(),
            "y_edges": self.real.y_edges.tolist(),
            "real": self.real.masses.tolist(),
            "synthetic": self.synthetic.masses.tolist(),
            "difference": self.difference.tolist(),
        }


def _matrix(features: Sequence[SegmentFeatures] | FloatArray) -> FloatArray:
    if isinstance(features, np.ndarray):
        return features
    return feature_matrix(features)


def joint_pca(
    real: Sequence[SegmentFeatures] | FloatArray,
    synthetic: Sequence[SegmentFeatures] | FloatArray,
    n_components: int = 2,
) -> JointProjection:
    """
    PCA over the union of both groups, with scores kept per group.

    :raises ~polyviews.errors.MixedSegmentCountsError:
        if the groups have different segment counts
    """
    if len(real) == 0 or len(synthetic) == 0:
        raise EmptyInputError("Both groups need at least one profile.")
    if not isinstance(real, np.ndarray) and not isinstance(synthetic, np.ndarray):
        if uniform_segment_count(real) != uniform_segment_count(synthetic):
            raise MixedSegmentCountsError("Real and synthetic segment counts differ.")
    real_matrix, synthetic_matrix = _matrix(real), _matrix(synthetic)
    if real_matrix.shape[1] != synthetic_matrix.shape[1]:
        raise MixedSegmentCountsError("Real and synthetic segment counts differ.")
    projection = pca(np.vstack((real_matrix, synthetic_matrix)), n_components)
    m = real_matrix.shape[0]
    return JointProjection(projection, projection.scores[:m], projection.scores[m:])


def _check_edges(edges: FloatArray, axis: str) -> None:
    if edges.ndim != 1 or edges.shape[0] < 2 or np.any(np.diff(edges) <= 0):
        raise ConfigError(f"{axis} edges must be strictly increasing.")


def histogram2d(
    scores: FloatArray, x_edges: FloatArray, y_edges: FloatArray
) -> Histogram2D:
    """
    Normalized histogram of 2-D points.

    Points on an inner boundary go to the higher cell; points outside the
    outer edges are clamped into the end cells, so the top edge is inclusive.

    :raises ~polyviews.errors.EmptyInputError: without points
    """
    points = np.asarray(scores, dtype=float).reshape(-1, 2)
    if points.shape[0] == 0:
        raise EmptyInputError("Cannot histogram zero points.")
    x_edges = np.asarray(x_edges, dtype=float)
    y_edges = np.asarray(y_edges, dtype=float)
    _check_edges(x_edges, "x")
    _check_edges(y_edges, "y")
    ix = np.searchsorted(x_edges[1:-1], points[:, 0], side="right")
    iy = np.searchsorted(y_edges[1:-1], points[:, 1], side="right")
    counts = np.zeros((x_edges.shape[0] - 1, y_edges.shape[0] - 1))
    np.add.at(counts, (ix, iy), 1.0)
    return Histogram2D(x_edges, y_edges, counts / points.shape[0])


def epsilon(pi_o: Histogram2D, pi_s: Histogram2D) -> float:
    """
    L1 distance between two histograms on the same grid, in ``[0, 2]``.

    :raises ~polyviews.errors.BinMismatchError: if the grids differ
    """
    if not pi_o.same_bins(pi_s):
        raise BinMismatchError("Histograms are defined on different grids.")
    return float(np.abs(pi_o.masses - pi_s.masses).sum())


def grid_edges(
    *groups: FloatArray, grid: GridConfig | None = None
) -> tuple[FloatArray, FloatArray]:
    """Equal-width edges over the joint min/max of all groups, per axis."""
    grid = grid or GridConfig()
    points = np.vstack([np.asarray(g, dtype=float).reshape(-1, 2) for g in groups])
    edges = []
    for axis, bins in ((0, grid.bins_x), (1, grid.bins_y)):
        lo, hi = float(points[:, axis].min()), float(points[:, axis].max())
        if hi <= lo:
            pad = 0.5 * max(1.0, abs(lo))
            lo, hi = lo - pad, hi + pad
        edges.append(np.linspace(lo, hi, bins + 1))
    return edges[0], edges[1]


def compare(
    real: Sequence[SegmentFeatures] | FloatArray,
    synthetic: Sequence[SegmentFeatures] | FloatArray,
    model_kind: str,
    grid: GridConfig | None = None,
) -> tuple[AdherenceScore, AdherencePlot]:
    """Project both groups jointly, histogram them and compute epsilon."""
    grid = grid or GridConfig()
    joint = joint_pca(real, synthetic)
    x_edges, y_edges = grid_edges(joint.real_scores, joint.synthetic_scores, grid=grid)
    pi_o = histogram2d(joint.real_scores, x_edges, y_edges)
    pi_s = histogram2d(joint.synthetic_scores, x_edges, y_edges)
    score = AdherenceScore(
        model_kind,
        epsilon(pi_o, pi_s),
        int(joint.real_scores.shape[0]),
        int(joint.synthetic_scores.shape[0]),
        (grid.bins_x, grid.bins_y),
        joint.basis_id,
    )
    logger.debug("%s: epsilon %.4f", model_kind, score.epsilon)
    return score, AdherencePlot(model_kind, pi_o, pi_s)


def _kind_order(kind: str) -> int:
    return MODEL_KINDS.index(kind) if kind in MODEL_KINDS else len(MODEL_KINDS)


def evaluate_models(
    real: Sequence[SegmentFeatures],
    models: Sequence[GenerativeModel],
    count: int,
    seed: int,
    grid: GridConfig | None = None,
    workers: int = 1,
) -> list[tuple[AdherenceScore, AdherencePlot]]:
    """
    Sample each model, score it against ``real`` and order best first.

    Every model gets its own stream spawned from ``seed``, so results do not
    depend on ``workers``. Ties in epsilon keep the model-kind order.
    """
    if not models:
        raise EmptyInputError("No models to rank.")
    real_matrix = feature_matrix(real)
    streams = np.random.SeedSequence(seed).spawn(len(models))

    def run(
        item: tuple[GenerativeModel, np.random.SeedSequence],
    ) -> tuple[AdherenceScore, AdherencePlot]:
        model, stream = item
        model_seed = int(stream.generate_state(1, dtype=np.uint64)[0])
        synthetic = feature_matrix(model.sample(count, model_seed))
        return compare(real_matrix, synthetic, model.kind, grid)

    items = list(zip(models, streams))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, items))
    else:
        results = [run(item) for item in items]
    order = sorted(
        range(len(results)),
        key=lambda i: (results[i][0].epsilon, _kind_order(results[i][0].model_kind), i),
    )
    return [results[i] for i in order]


def rank_models(
    real: Sequence[SegmentFeatures],
    models: Sequence[GenerativeModel],
    count: int,
    seed: int,
    grid: GridConfig | None = None,
) -> list[AdherenceScore]:
    """Adherence scores of ``models``, lowest epsilon first."""
    return [score for score, _ in evaluate_models(real, models, count, seed, grid)]
