"""Segment features of fitted profiles and their statistics."""

from __future__ import annotations

import logging
import math
from collections import Counter
from collections.abc import Iterable, Sequence
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np
import numpy.typing as npt

from .errors import (
    ConfigError,
    EmptyInputError,
    MixedSegmentCountsError,
    NotConvergedError,
    ParseError,
    TooFewSegmentsError,
    ZeroVarianceError,
)
from .fileutils import PathOrSimilar, read_csv, write_csv
from .segmented import SegmentedFit

FloatArray = npt.NDArray[np.float64]

INCREASE = "+"
DECREASE = "-"

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class SegmentFeatures:
    """Inclination angles (degrees) and x-extents of the segments of one profile."""

    id: str
    angles: FloatArray
    lengths: FloatArray

    def __post_init__(self) -> None:
        if self.angles.shape != self.lengths.shape or self.angles.ndim != 1:
            raise ValueError("angles and lengths need the same number of entries.")
        if self.angles.shape[0] < 1:
            raise ValueError("A profile has at least one segment.")
        if np.any(self.lengths <= 0):
            raise ValueError(f"Segment lengths of '{self.id}' must be positive.")
        if abs(float(self.lengths.sum()) - 1.0) > 1e-9:
            raise ValueError(f"Segment lengths of '{self.id}' must sum to 1.")
        if np.any(np.abs(self.angles) >= 90.0):
            raise ValueError(f"Angles of '{self.id}' must lie in (-90, 90).")

    @property
    def n_segments(self) -> int:
        return int(self.angles.shape[0])

    @property
    def vector(self) -> FloatArray:
        """``(a_1..a_N, l_1..l_N)`` as one array."""
        return np.concatenate((self.angles, self.lengths))

    @classmethod
    def from_arrays(
        cls, id: str, angles: Sequence[float], lengths: Sequence[float]
    ) -> SegmentFeatures:
        return cls(
            id, np.asarray(angles, dtype=float), np.asarray(lengths, dtype=float)
        )


def variable_labels(n_segments: int) -> list[str]:
    """Column names ``a1..aN, l1..lN``."""
    return [f"a{i}" for i in range(1, n_segments + 1)] + [
        f"l{i}" for i in range(1, n_segments + 1)
    ]


def uniform_segment_count(features: Sequence[SegmentFeatures]) -> int:
    """
    Common segment count of a group.

    :raises ~polyviews.errors.EmptyInputError: for an empty group
    :raises ~polyviews.errors.MixedSegmentCountsError: if counts differ
    """
    if len(features) == 0:
        raise EmptyInputError("No feature vectors given.")
    counts = {f.n_segments for f in features}
    if len(counts) > 1:
        raise MixedSegmentCountsError(
            f"Feature vectors mix segment counts {sorted(counts)}."
        )
    return counts.pop()


def feature_matrix(features: Sequence[SegmentFeatures]) -> FloatArray:
    """Stack feature vectors into an ``(m, 2N)`` array."""
    uniform_segment_count(features)
    return np.vstack([f.vector for f in features])


def extract_features(fit: SegmentedFit) -> SegmentFeatures:
    """
    Angles and lengths of the segments of a converged fit.

    Lengths are the x-extents between ``0, psi_1, ..., psi_N, 1``; angles are
    ``atan(slope)`` in degrees.

    :raises ~polyviews.errors.NotConvergedError: if the fit did not converge
    """
    if not fit.converged:
        raise NotConvergedError(f"Fit of '{fit.id}' did not converge.")
    bounds = np.concatenate(([0.0], fit.breakpoints, [1.0]))
    lengths = np.diff(bounds)
    angles = np.degrees(np.arctan(fit.slopes))
    return SegmentFeatures(fit.id, angles, lengths)


def extract_all(fits: Iterable[SegmentedFit]) -> list[SegmentFeatures]:
    """Extract features of every fit, skipping unconverged ones with a warning."""
    extracted = []
    for fit in fits:
        try:
            extracted.append(extract_features(fit))
        except NotConvergedError as e:
            logger.warning("Skipping features: %s", e)
    return extracted


def gate_by_rmse(
    fits: Sequence[SegmentedFit], threshold: float
) -> tuple[list[SegmentedFit], list[SegmentedFit]]:
    """
    Split fits into those with ``rmse < threshold`` and the rest, keeping order.

    :raises ~polyviews.errors.ConfigError: unless ``0 < threshold < inf``
    """
    if not (threshold > 0 and math.isfinite(threshold)):
        raise ConfigError(f"RMSE threshold must be finite and > 0, got {threshold}.")
    passed = [f for f in fits if f.rmse < threshold]
    failed = [f for f in fits if not f.rmse < threshold]
    logger.info(
        "RMSE gate %.4g: %d passed, %d failed", threshold, len(passed), len(failed)
    )
    return passed, failed


def sign_pattern(features: SegmentFeatures) -> str:
    """
    ``+`` where the next angle is larger, ``-`` otherwise (ties included).

    :raises ~polyviews.errors.TooFewSegmentsError: for a single segment
    """
    if features.n_segments < 2:
        raise TooFewSegmentsError(
            f"'{features.id}' has one segment, a pattern needs two."
        )
    return "".join(
        INCREASE if b > a else DECREASE
        for a, b in zip(features.angles[:-1], features.angles[1:])
    )


@dataclass(frozen=True, eq=False)
class CorrelationReport:
    """Pearson coefficients between every pair of segment variables."""

    labels: tuple[str, ...]
    matrix: FloatArray
    n_profiles: int

    def rho(self, a: str, b: str) -> float:
        i, j = self.labels.index(a), self.labels.index(b)
        return float(self.matrix[i, j])

    @property
    def pairs(self) -> dict[tuple[str, str], float]:
        return {
            (a, b): float(self.matrix[i, j])
            for i, a in enumerate(self.labels)
            for j, b in enumerate(self.labels)
        }

    def to_dict(self) -> dict[str, Any]:
        return {
            "labels": list(self.labels),
            "matrix": self.matrix.tolist(),
            "n_profiles": self.n_profiles,
        }


def correlations(
    features: Sequence[SegmentFeatures], n_segments: int
) -> CorrelationReport:
    """
    Sample Pearson coefficients among ``a_1..a_N, l_1..l_N``.

    :raises ~polyviews.errors.MixedSegmentCountsError:
        if a profile has a different segment count
    :raises ~polyviews.errors.ZeroVarianceError: if a variable is constant
    :raises ~polyviews.errors.EmptyInputError: for fewer than two profiles
    """
    if len(features) < 2:
        raise EmptyInputError("Correlations need at least two profiles.")
    if any(f.n_segments != n_segments for f in features):
        raise MixedSegmentCountsError(
            f"Not every profile has {n_segments} segments."
        )
    data = feature_matrix(features)
    labels = variable_labels(n_segments)
    spread = data.std(axis=0)
    constant = [label for label, s in zip(labels, spread) if s == 0.0]
    if constant:
        raise ZeroVarianceError(f"Variables {constant} have zero variance.")
    matrix = np.clip(np.corrcoef(data, rowvar=False), -1.0, 1.0)
    matrix = 0.5 * (matrix + matrix.T)
    np.fill_diagonal(matrix, 1.0)
    return CorrelationReport(tuple(labels), matrix, len(features))


def normalized_histogram(
    values: FloatArray, edges: FloatArray
) -> FloatArray:
    """Bin masses summing to one; values outside the edges go to the end bins."""
    clipped = np.clip(values, edges[0], np.nextafter(edges[-1], edges[0]))
    counts, _ = np.histogram(clipped, bins=edges)
    return counts / counts.sum()


def angle_histogram(
    features: Sequence[SegmentFeatures], bins: int = 18
) -> tuple[FloatArray, FloatArray]:
    """
    Normalized histogram of every segment angle over ``[0, 90)``.

    :raises ~polyviews.errors.EmptyInputError: without any angle
    :return: ``(edges, masses)``
    """
    if bins < 2:
        raise ConfigError(f"An angle histogram needs >= 2 bins, got {bins}.")
    if len(features) == 0:
        raise EmptyInputError("No features to histogram.")
    angles = np.concatenate([f.angles for f in features])
    edges = np.linspace(0.0, 90.0, bins + 1)
    return edges, normalized_histogram(angles, edges)


def marginal_histograms(
    features: Sequence[SegmentFeatures], bins: int = 20
) -> dict[str, dict[str, list[float]]]:
    """Histogram of each ``a_i`` over [0, 90) and each ``l_i`` over [0, 1]."""
    n = uniform_segment_count(features)
    data = feature_matrix(features)
    result = {}
    for column, label in enumerate(variable_labels(n)):
        upper = 90.0 if label.startswith("a") else 1.0
        edges = np.linspace(0.0, upper, bins + 1)
        result[label] = {
            "edges": edges.tolist(),
            "masses": normalized_histogram(data[:, column], edges).tolist(),
        }
    return result


def consecutive_joint_densities(
    features: Sequence[SegmentFeatures], bins: int = 20
) -> list[dict[str, Any]]:
    """
    Joint histograms of ``(l_i, l_i+1)`` and ``(a_i, a_i+1)`` with their
    Pearson coefficient, for every consecutive pair of segments.
    """
    n = uniform_segment_count(features)
    data = feature_matrix(features)
    densities = []
    for prefix, offset, upper in (("l", n, 1.0), ("a", 0, 90.0)):
        edges = np.linspace(0.0, upper, bins + 1)
        for i in range(n - 1):
            first = data[:, offset + i]
            second = data[:, offset + i + 1]
            counts, _, _ = np.histogram2d(
                np.clip(first, 0.0, upper), np.clip(second, 0.0, upper), [edges, edges]
            )
            if first.std() > 0 and second.std() > 0 and data.shape[0] > 1:
                rho: float | None = float(np.corrcoef(first, second)[0, 1])
            else:
                rho = None
            densities.append(
                {
                    "x": f"{prefix}{i + 1}",
                    "y": f"{prefix}{i + 2}",
                    "edges": edges.tolist(),
                    "masses": (counts / counts.sum()).tolist(),
                    "rho": rho,
                }
            )
    return densities


def segment_count_proportions(fits: Sequence[SegmentedFit]) -> dict[int, float]:
    """Fraction of fits with each segment count."""
    if len(fits) == 0:
        return {}
    counts = Counter(f.n_segments for f in fits)
    return {n: counts[n] / len(fits) for n in sorted(counts)}


def group_by_segments(
    features: Iterable[SegmentFeatures],
) -> dict[int, list[SegmentFeatures]]:
    groups: dict[int, list[SegmentFeatures]] = {}
    for f in features:
        groups.setdefault(f.n_segments, []).append(f)
    return dict(sorted(groups.items()))


def write_features_csv(
    path: PathOrSimilar, features: Sequence[SegmentFeatures]
) -> Path:
    """Write one segment-count group as ``id,n_segments,a1..aN,l1..lN``."""
    n = uniform_segment_count(features)
    return write_csv(
        path,
        ["id", "n_segments", *variable_labels(n)],
        ([f.id, f.n_segments, *f.vector.tolist()] for f in features),
    )


def read_features_csv(path: PathOrSimilar) -> list[SegmentFeatures]:
    """Read a file written by :func:`write_features_csv`."""
    rows = read_csv(path)
    if not rows:
        return []
    features = []
    for row in rows[1:]:
        try:
            n = int(row[1])
            values = [float(v) for v in row[2 : 2 + 2 * n]]
        except (IndexError, ValueError) as e:
            raise ParseError(f"Malformed feature row {row!r} in '{path}'.") from e
        features.append(SegmentFeatures.from_arrays(row[0], values[:n], values[n:]))
    return features
