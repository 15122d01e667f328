"""Single-linkage clustering, PCA and cluster summaries of segment features."""

from __future__ import annotations

import logging
import math
import string
from collections import Counter
from collections.abc import Sequence
from dataclasses import dataclass
from typing import Any

import numpy as np
import numpy.typing as npt

from .errors import (
    ConfigError,
    DegenerateCovarianceError,
    DimensionMismatchError,
    EmptyGroupError,
    EmptyInputError,
    InvalidKError,
    MisalignmentError,
)
from .features import SegmentFeatures, uniform_segment_count

FloatArray = npt.NDArray[np.float64]
IntArray = npt.NDArray[np.int64]

UNASSIGNED = -1

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ClusterConfig:
    k: int = 3
    min_size_fraction: float = 0.01
    standardize: bool = False

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ConfigError(f"k must be >= 1, got {self.k}.")
        if not 0.0 <= self.min_size_fraction < 1.0:
            raise ConfigError(
                f"min_size_fraction must lie in [0, 1), got {self.min_size_fraction}."
            )

    def min_size_for(self, n_points: int) -> int:
        return max(1, math.ceil(self.min_size_fraction * n_points))


@dataclass(frozen=True)
class Merge:
    a: int
    b: int
    distance: float
    size: int


@dataclass(frozen=True)
class Dendrogram:
    """
    Agglomerative merge sequence. Leaves are ``0..n-1``; the cluster created
    by merge ``i`` has id ``n + i``, as in scipy linkage matrices.
    """

    merges: tuple[Merge, ...]
    n_leaves: int

    @property
    def distances(self) -> FloatArray:
        return np.asarray([m.distance for m in self.merges], dtype=float)

    def linkage_matrix(self) -> FloatArray:
        """The merges as an ``(n-1, 4)`` scipy linkage matrix."""
        return np.asarray(
            [[m.a, m.b, m.distance, m.size] for m in self.merges], dtype=float
        ).reshape(-1, 4)

    def merge_distance_ratio(self) -> float:
        """Largest over median merge distance; near 1 when no cluster stands out."""
        distances = self.distances
        median = float(np.median(distances))
        if median == 0.0:
            return math.inf
        return float(distances.max()) / median


def _minimum_spanning_tree(points: FloatArray) -> list[tuple[int, int, float]]:
    """Prim's algorithm on the complete Euclidean graph, O(n) memory."""
    n = points.shape[0]
    remaining = np.arange(1, n)
    best = np.full(n - 1, np.inf)
    parent = np.zeros(n - 1, dtype=np.int64)
    edges: list[tuple[int, int, float]] = []
    current = 0
    while remaining.shape[0]:
        diff = points[remaining] - points[current]
        dist = np.sqrt(np.einsum("ij,ij->i", diff, diff))
        closer = dist < best
        best[closer] = dist[closer]
        parent[closer] = current
        # remaining stays sorted, so argmin breaks ties towards the lower index
        pick = int(np.argmin(best))
        current = int(remaining[pick])
        edges.append((int(parent[pick]), current, float(best[pick])))
        keep = np.arange(remaining.shape[0]) != pick
        remaining, best, parent = remaining[keep], best[keep], parent[keep]
    return edges


class _UnionFind:
    def __init__(self, n: int) -> None:
        self.parent = list(range(n))

    def find(self, i: int) -> int:
        while self.parent[i] != i:
            self.parent[i] = self.parent[self.parent[i]]
            i = self.parent[i]
        return i

    def union(self, i: int, j: int) -> int:
        ri, rj = self.find(i), self.find(j)
        root = min(ri, rj)
        self.parent[max(ri, rj)] = root
        return root


def _as_points(points: Sequence[Sequence[float]] | FloatArray) -> FloatArray:
    try:
        array = np.asarray(points, dtype=float)
    except ValueError as e:
        raise DimensionMismatchError(
            "Feature vectors have different dimensions."
        ) from e
    if array.ndim == 1:
        array = array[:, None]
    if array.ndim != 2:
        raise DimensionMismatchError("Feature vectors have different dimensions.")
    return array


def single_linkage(points: Sequence[Sequence[float]] | FloatArray) -> Dendrogram:
    """
    Single-linkage agglomerative clustering under the Euclidean metric.

    Built from the minimum spanning tree, whose edges sorted by length are
    exactly the single-linkage merges. Ties merge the lower index first.

    :raises ~polyviews.errors.DimensionMismatchError: for ragged input
    :raises ~polyviews.errors.EmptyInputError: for fewer than two points
    """
    array = _as_points(points)
    n = array.shape[0]
    if n < 2:
        raise EmptyInputError("Clustering needs at least two points.")
    edges = _minimum_spanning_tree(array)
    edges.sort(key=lambda e: (e[2], min(e[0], e[1]), max(e[0], e[1])))

    forest = _UnionFind(n)
    cluster_id = list(range(n))
    size = [1] * n
    merges = []
    for step, (i, j, distance) in enumerate(edges):
        ri, rj = forest.find(i), forest.find(j)
        a, b = sorted((cluster_id[ri], cluster_id[rj]))
        merged_size = size[ri] + size[rj]
        root = forest.union(ri, rj)
        cluster_id[root] = n + step
        size[root] = merged_size
        merges.append(Merge(a, b, distance, merged_size))
    dendrogram = Dendrogram(tuple(merges), n)
    assert np.all(np.diff(dendrogram.distances) >= 0)
    return dendrogram


@dataclass(frozen=True, eq=False)
class ClusterAssignment:
    """Cluster label per point, ``UNASSIGNED`` for points in undersized clusters."""

    labels: IntArray
    k: int

    @property
    def assigned(self) -> IntArray:
        return np.flatnonzero(self.labels != UNASSIGNED)

    @property
    def cluster_labels(self) -> list[int]:
        return sorted({int(v) for v in self.labels if v != UNASSIGNED})

    def sizes(self) -> dict[int, int]:
        return {c: int(np.sum(self.labels == c)) for c in self.cluster_labels}


def cut(dendrogram: Dendrogram, k: int, min_size: int = 1) -> ClusterAssignment:
    """
    Undo the ``k-1`` last (largest) merges.

    Clusters are labelled ``0, 1, ...`` by decreasing size, ties by their
    smallest member; clusters smaller than ``min_size`` become unassigned.

    :raises ~polyviews.errors.InvalidKError: unless ``1 <= k <= n_leaves``
    """
    n = dendrogram.n_leaves
    if not 1 <= k <= n:
        raise InvalidKError(f"Cannot cut {n} leaves into {k} clusters.")
    forest = _UnionFind(2 * n)
    for step, merge in enumerate(dendrogram.merges[: n - k]):
        forest.union(merge.a, n + step)
        forest.union(merge.b, n + step)
    roots = [forest.find(i) for i in range(n)]
    members: dict[int, list[int]] = {}
    for leaf, root in enumerate(roots):
        members.setdefault(root, []).append(leaf)
    ordered = sorted(members.values(), key=lambda m: (-len(m), m[0]))

    labels = np.full(n, UNASSIGNED, dtype=np.int64)
    next_label = 0
    for group in ordered:
        if len(group) < min_size:
            continue
        labels[group] = next_label
        next_label += 1
    unassigned = int(np.sum(labels == UNASSIGNED))
    if unassigned:
        logger.info("%d of %d points left unassigned", unassigned, n)
    return ClusterAssignment(labels, k)


def cluster_names(assignment: ClusterAssignment, n_segments: int) -> dict[int, str]:
    """Name clusters ``A_N, B_N, ...`` in label (size) order."""
    return {
        label: f"{string.ascii_uppercase[index % 26]}_{n_segments}"
        for index, label in enumerate(assignment.cluster_labels)
    }


@dataclass(frozen=True, eq=False)
class PCAProjection:
    components: FloatArray
    explained_variance_ratio: FloatArray
    scores: FloatArray
    mean: FloatArray

    def transform(self, points: FloatArray) -> FloatArray:
        return (np.asarray(points, dtype=float) - self.mean) @ self.components.T

    def to_dict(self) -> dict[str, Any]:
        return {
            "components": self.components.tolist(),
            "explained_variance_ratio": self.explained_variance_ratio.tolist(),
            "mean": self.mean.tolist(),
        }


def standardize(points: FloatArray) -> FloatArray:
    """Z-score every column; constant columns are only centered."""
    spread = points.std(axis=0)
    spread[spread == 0.0] = 1.0
    return (points - points.mean(axis=0)) / spread


def pca(
    points: Sequence[Sequence[float]] | FloatArray, n_components: int
) -> PCAProjection:
    """
    Principal components from the eigendecomposition of the sample covariance.

    Each component is signed so that its largest-magnitude entry is positive.

    :raises ~polyviews.errors.DegenerateCovarianceError: if all points coincide
    """
    array = _as_points(points)
    m, d = array.shape
    if m < 2:
        raise EmptyInputError("PCA needs at least two points.")
    if not 1 <= n_components <= d:
        raise DimensionMismatchError(
            f"Cannot keep {n_components} components of {d}-dimensional data."
        )
    mean = array.mean(axis=0)
    centered = array - mean
    covariance = centered.T @ centered / (m - 1)
    total = float(np.trace(covariance))
    if total <= 0.0:
        raise DegenerateCovarianceError("All points are identical.")
    eigenvalues, eigenvectors = np.linalg.eigh(covariance)
    order = np.argsort(eigenvalues)[::-1][:n_components]
    components = eigenvectors[:, order].T
    for row in components:
        if row[np.argmax(np.abs(row))] < 0:
            row *= -1.0
    ratios = np.clip(eigenvalues[order], 0.0, None) / total
    return PCAProjection(components, ratios, centered @ components.T, mean)


@dataclass(frozen=True)
class PrototypeTable:
    frequencies: dict[str, float]
    count: int

    @property
    def modal(self) -> str | None:
        if not self.frequencies:
            return None
        return min(self.frequencies, key=lambda p: (-self.frequencies[p], p))


def pattern_frequencies(patterns: Sequence[str]) -> PrototypeTable:
    counts = Counter(patterns)
    total = len(patterns)
    return PrototypeTable({p: c / total for p, c in sorted(counts.items())}, total)


def prototype_frequencies(
    assignment: ClusterAssignment, patterns: Sequence[str]
) -> dict[int, PrototypeTable]:
    """
    Relative frequency of each sign pattern within each assigned cluster.

    :raises ~polyviews.errors.MisalignmentError:
        if there is not one pattern per labelled point
    """
    if len(patterns) != assignment.labels.shape[0]:
        raise MisalignmentError(
            f"{len(patterns)} patterns for {assignment.labels.shape[0]} labels."
        )
    return {
        label: pattern_frequencies(
            [p for p, c in zip(patterns, assignment.labels) if c == label]
        )
        for label in assignment.cluster_labels
    }


def average_curve(features: Sequence[SegmentFeatures]) -> FloatArray:
    """
    Polyline of the component-wise mean angles and lengths.

    :raises ~polyviews.errors.EmptyGroupError: for an empty group
    :return: ``(N+1, 2)`` array of vertices from ``(0, 0)`` to ``(1, 1)``
    """
    if len(features) == 0:
        raise EmptyGroupError("Cannot average an empty group.")
    uniform_segment_count(features)
    angles = np.mean([f.angles for f in features], axis=0)
    lengths = np.mean([f.lengths for f in features], axis=0)
    lengths = lengths / lengths.sum()
    x = np.concatenate(([0.0], np.cumsum(lengths)))
    y = np.concatenate(([0.0], np.cumsum(np.tan(np.radians(angles)) * lengths)))
    if y[-1] != 0.0:
        y = y / y[-1]
    x[-1] = 1.0
    return np.column_stack((x, y))
