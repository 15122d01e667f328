"""
Generative models of segment-feature sequences.

Four kinds, each using more of the structure of the training profiles:

* ``null``: angles uniform on [0, 90), lengths uniform on [0, 1);
* ``independent``: a Gaussian kernel density per angle and per length;
* ``markov1_uni``: the first segment from kernel densities, then each angle
  conditioned on the previous angle and each length on the previous length;
* ``markov1_multi``: the first segment from the joint distribution of angle
  and length, then both conditioned on the previous (angle, length) pair.

Conditional distributions are binned tables; every sample finally has its
lengths rescaled to sum to one.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field
from typing import Any, ClassVar, Literal

import numpy as np
import numpy.typing as npt
from scipy.stats import gaussian_kde, norm

from .errors import ArtifactDeserializationError, ConfigError, EmptyInputError
from .features import SegmentFeatures, feature_matrix, uniform_segment_count

FloatArray = npt.NDArray[np.float64]
IntArray = npt.NDArray[np.int64]
WithinBin = Literal["kde", "uniform"]

MODEL_KINDS = ("null", "independent", "markov1_uni", "markov1_multi")
"""Model kinds in enumeration order, simplest first."""

SAMPLE_CHUNK = 4096
_MAX_REDRAWS = 100

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ModelConfig:
    bins_univariate: int = 10
    bins_alpha: int = 8
    bins_l: int = 8
    samples_per_model: int = 100_000
    within_bin: WithinBin = "kde"

    def __post_init__(self) -> None:
        for name in ("bins_univariate", "bins_alpha", "bins_l"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}.")
        if self.samples_per_model < 1:
            raise ConfigError(
                f"samples_per_model must be >= 1, got {self.samples_per_model}."
            )
        if self.within_bin not in ("kde", "uniform"):
            raise ConfigError("within_bin must be 'kde' or 'uniform'.")


def silverman_bandwidth(samples: FloatArray) -> float:
    """
    Kernel width of :class:`scipy.stats.gaussian_kde` with Silverman's factor,
    ``std * (3n / 4) ** (-1 / 5)``, with a small floor for constant samples.
    """
    values = np.asarray(samples, dtype=float)
    std = float(np.std(values, ddof=1)) if values.shape[0] > 1 else 0.0
    if not std > 0.0:
        return 1e-6 * max(1.0, float(np.max(np.abs(values))))
    return float(gaussian_kde(values, bw_method="silverman").factor) * std


@dataclass(frozen=True, eq=False)
class GaussianKde:
    """
    One-dimensional Gaussian kernel density estimate.

    Backed by :class:`scipy.stats.gaussian_kde` with a kernel width of
    ``bandwidth``; samples without spread get a single kernel of that width.
    """

    samples: FloatArray
    bandwidth: float
    _kde: gaussian_kde | None = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if self.samples.shape[0] == 0:
            raise EmptyInputError("A kernel density needs at least one sample.")
        if not self.bandwidth > 0:
            raise ConfigError(f"Bandwidth must be > 0, got {self.bandwidth}.")
        std = float(np.std(self.samples, ddof=1)) if self.samples.shape[0] > 1 else 0.0
        kde = (
            gaussian_kde(self.samples, bw_method=self.bandwidth / std)
            if std > 0.0
            else None
        )
        object.__setattr__(self, "_kde", kde)

    @classmethod
    def fit(cls, samples: Sequence[float] | FloatArray) -> GaussianKde:
        values = np.asarray(samples, dtype=float)
        if values.shape[0] == 0:
            raise EmptyInputError("A kernel density needs at least one sample.")
        return cls(values, silverman_bandwidth(values))

    def density(self, x: float | FloatArray) -> FloatArray:
        xs = np.atleast_1d(np.asarray(x, dtype=float))
        if self._kde is not None:
            return np.asarray(self._kde(xs), dtype=float)
        kernel = norm.pdf((xs[:, None] - self.samples[None, :]) / self.bandwidth)
        return np.asarray(kernel.mean(axis=1) / self.bandwidth)

    def sample(self, rng: np.random.Generator, size: int) -> FloatArray:
        if self._kde is not None:
            return np.asarray(self._kde.resample(size, seed=rng)[0], dtype=float)
        centres = self.samples[rng.integers(0, self.samples.shape[0], size=size)]
        return centres + rng.normal(0.0, self.bandwidth, size=size)

    def to_dict(self) -> dict[str, Any]:
        return {"samples": self.samples.tolist(), "bandwidth": self.bandwidth}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> GaussianKde:
        return cls(np.asarray(data["samples"], dtype=float), float(data["bandwidth"]))


def equal_width_edges(values: FloatArray, bins: int) -> FloatArray:
    """``bins`` equal-width bins over the observed range of ``values``."""
    lo, hi = float(np.min(values)), float(np.max(values))
    if hi <= lo:
        pad = 1e-9 * max(1.0, abs(lo))
        lo, hi = lo - pad, hi + pad
    return np.linspace(lo, hi, bins + 1)


def bin_index(values: FloatArray, edges: FloatArray) -> IntArray:
    """Bin of each value; values beyond the outer edges go to the end bins."""
    index = np.searchsorted(edges[1:-1], values, side="right")
    return np.asarray(index, dtype=np.int64)


@dataclass(frozen=True, eq=False)
class BinnedTarget:
    """
    Target variable of a table: its bin edges plus the smoother that turns a
    selected bin into a value.

    With the ``kde`` smoother a training value from the bin is drawn and moved
    by Gaussian noise of width ``bandwidth``, redrawing the noise until the
    value stays inside the bin (the outer sides of the end bins are open).
    With ``uniform`` the value is uniform across the bin.
    """

    edges: FloatArray
    values: FloatArray
    bandwidth: float
    within_bin: WithinBin = "kde"
    _order: IntArray = field(init=False, repr=False)
    _starts: IntArray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        index = bin_index(self.values, self.edges)
        order = np.argsort(index, kind="stable")
        starts = np.searchsorted(index[order], np.arange(self.n_bins + 1))
        object.__setattr__(self, "_order", order)
        object.__setattr__(self, "_starts", starts)

    @property
    def n_bins(self) -> int:
        return int(self.edges.shape[0] - 1)

    @classmethod
    def fit(
        cls,
        values: FloatArray,
        bins: int,
        within_bin: WithinBin = "kde",
        edges: FloatArray | None = None,
    ) -> BinnedTarget:
        return cls(
            equal_width_edges(values, bins) if edges is None else edges,
            np.asarray(values, dtype=float),
            silverman_bandwidth(values),
            within_bin,
        )

    def index(self, values: FloatArray) -> IntArray:
        return bin_index(values, self.edges)

    def draw(self, rng: np.random.Generator, bins: IntArray) -> FloatArray:
        lower = self.edges[bins].copy()
        upper = self.edges[bins + 1].copy()
        if self.within_bin == "uniform":
            return lower + rng.random(bins.shape[0]) * (upper - lower)

        counts = self._starts[bins + 1] - self._starts[bins]
        out = np.empty(bins.shape[0])
        filled = np.flatnonzero(counts > 0)
        # empty bins can only be picked with probability zero; jitter them
        empty = np.flatnonzero(counts == 0)
        out[empty] = lower[empty] + rng.random(empty.shape[0]) * (
            upper[empty] - lower[empty]
        )
        offsets = self._starts[bins[filled]] + (
            rng.random(filled.shape[0]) * counts[filled]
        ).astype(np.int64)
        out[filled] = self.smooth(rng, self.values[self._order[offsets]], bins[filled])
        return out

    def smooth(
        self, rng: np.random.Generator, centres: FloatArray, bins: IntArray
    ) -> FloatArray:
        """Move each centre by kernel noise, keeping it inside its bin."""
        lower = self.edges[bins].copy()
        upper = self.edges[bins + 1].copy()
        lower[bins == 0] = -np.inf
        upper[bins == self.n_bins - 1] = np.inf
        out = centres.copy()
        pending = np.arange(centres.shape[0])
        for _ in range(_MAX_REDRAWS):
            if pending.shape[0] == 0:
                break
            trial = centres[pending] + rng.normal(0.0, self.bandwidth, pending.shape[0])
            inside = (trial >= lower[pending]) & (trial <= upper[pending])
            out[pending[inside]] = trial[inside]
            pending = pending[~inside]
        return out

    def to_dict(self) -> dict[str, Any]:
        return {
            "edges": self.edges.tolist(),
            "values": self.values.tolist(),
            "bandwidth": self.bandwidth,
            "within_bin": self.within_bin,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> BinnedTarget:
        return cls(
            np.asarray(data["edges"], dtype=float),
            np.asarray(data["values"], dtype=float),
            float(data["bandwidth"]),
            data.get("within_bin", "kde"),
        )


@dataclass(frozen=True, eq=False)
class ConditionalTable:
    """
    Binned conditional distribution ``P(target bin | conditioning cell)``.

    Conditioning cells are the product of the bins of one or two conditioning
    variables; rows of cells never seen in training hold the marginal of the
    target.
    """

    condition_edges: tuple[FloatArray, ...]
    target: BinnedTarget
    counts: FloatArray
    probabilities: FloatArray

    @classmethod
    def fit(
        cls,
        conditions: Sequence[FloatArray],
        target: FloatArray,
        condition_bins: Sequence[int],
        target_bins: int,
        within_bin: WithinBin = "kde",
        condition_edges: Sequence[FloatArray] | None = None,
        target_edges: FloatArray | None = None,
    ) -> ConditionalTable:
        edges = tuple(
            equal_width_edges(c, b) if condition_edges is None else condition_edges[i]
            for i, (c, b) in enumerate(zip(conditions, condition_bins))
        )
        binned = BinnedTarget.fit(target, target_bins, within_bin, target_edges)
        shape = tuple(e.shape[0] - 1 for e in edges)
        cells = np.ravel_multi_index(
            tuple(bin_index(c, e) for c, e in zip(conditions, edges)), shape
        )
        counts = np.zeros((int(np.prod(shape)), binned.n_bins))
        np.add.at(counts, (cells, binned.index(target)), 1.0)
        marginal = counts.sum(axis=0) / counts.sum()
        totals = counts.sum(axis=1, keepdims=True)
        empty = totals[:, 0] == 0
        safe = np.where(totals > 0, totals, 1.0)
        probabilities = np.where(totals > 0, counts / safe, 0.0)
        probabilities[empty] = marginal
        if np.any(empty):
            logger.debug(
                "%d of %d conditioning cells are empty, using the marginal",
                int(empty.sum()),
                empty.shape[0],
            )
        return cls(edges, binned, counts, probabilities)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(e.shape[0] - 1 for e in self.condition_edges)

    def cells(self, conditions: Sequence[FloatArray]) -> IntArray:
        return np.asarray(
            np.ravel_multi_index(
                tuple(
                    bin_index(c, e) for c, e in zip(conditions, self.condition_edges)
                ),
                self.shape,
            ),
            dtype=np.int64,
        )

    def sample(
        self, rng: np.random.Generator, conditions: Sequence[FloatArray]
    ) -> FloatArray:
        cumulative = np.cumsum(self.probabilities[self.cells(conditions)], axis=1)
        u = rng.random(cumulative.shape[0]) * cumulative[:, -1]
        bins = np.minimum(
            (u[:, None] >= cumulative).sum(axis=1), self.target.n_bins - 1
        )
        return self.target.draw(rng, np.asarray(bins, dtype=np.int64))

    def to_dict(self) -> dict[str, Any]:
        return {
            "condition_edges": [e.tolist() for e in self.condition_edges],
            "target": self.target.to_dict(),
            "counts": self.counts.tolist(),
            "probabilities": self.probabilities.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> ConditionalTable:
        return cls(
            tuple(np.asarray(e, dtype=float) for e in data["condition_edges"]),
            BinnedTarget.from_dict(data["target"]),
            np.asarray(data["counts"], dtype=float),
            np.asarray(data["probabilities"], dtype=float),
        )


def _redraw(
    rng: np.random.Generator,
    draw: Callable[[np.random.Generator, IntArray], FloatArray],
    size: int,
    valid: Callable[[FloatArray], npt.NDArray[np.bool_]],
) -> FloatArray:
    """Draw ``size`` values, redrawing the invalid ones."""
    out = draw(rng, np.arange(size))
    bad = np.flatnonzero(~valid(out))
    for _ in range(_MAX_REDRAWS):
        if bad.shape[0] == 0:
            return out
        out[bad] = draw(rng, bad)
        bad = bad[~valid(out[bad])]
    raise ArithmeticError(f"{bad.shape[0]} draws stayed outside the valid range.")


def _valid_angle(values: FloatArray) -> npt.NDArray[np.bool_]:
    return np.abs(values) < 90.0


def _valid_length(values: FloatArray) -> npt.NDArray[np.bool_]:
    return values > 0.0


def _unit_uniform(rng: np.random.Generator, index: IntArray) -> FloatArray:
    return rng.random(index.shape[0])


def _kde_column(
    rng: np.random.Generator,
    kde: GaussianKde,
    count: int,
    valid: Callable[[FloatArray], npt.NDArray[np.bool_]],
) -> FloatArray:
    return _redraw(rng, lambda r, index: kde.sample(r, index.shape[0]), count, valid)


def _table_column(
    rng: np.random.Generator,
    table: ConditionalTable,
    conditions: Sequence[FloatArray],
    valid: Callable[[FloatArray], npt.NDArray[np.bool_]],
) -> FloatArray:
    return _redraw(
        rng,
        lambda r, index: table.sample(r, [c[index] for c in conditions]),
        conditions[0].shape[0],
        valid,
    )


class GenerativeModel:
    """Base of the fitted models; subclasses implement :meth:`_draw`."""

    kind: ClassVar[str]
    n_segments: int

    def _draw(
        self, rng: np.random.Generator, count: int
    ) -> tuple[FloatArray, FloatArray]:
        raise NotImplementedError

    def sample(self, count: int, seed: int) -> list[SegmentFeatures]:
        """
        Draw ``count`` feature vectors.

        Draws come in fixed-size chunks, each with its own stream spawned from
        ``seed``, so the output does not depend on how chunks are scheduled.
        """
        if count < 1:
            raise ConfigError(f"count must be >= 1, got {count}.")
        n_chunks = math.ceil(count / SAMPLE_CHUNK)
        streams = np.random.SeedSequence(seed).spawn(n_chunks)
        angles, lengths = [], []
        for index, stream in enumerate(streams):
            size = min(SAMPLE_CHUNK, count - index * SAMPLE_CHUNK)
            a, lengths_raw = self._draw(np.random.default_rng(stream), size)
            angles.append(a)
            lengths.append(lengths_raw / lengths_raw.sum(axis=1, keepdims=True))
        all_angles = np.vstack(angles)
        all_lengths = np.vstack(lengths)
        return [
            SegmentFeatures(f"{self.kind}-{i}", all_angles[i], all_lengths[i])
            for i in range(count)
        ]

    def to_dict(self) -> dict[str, Any]:
        return {"kind": self.kind, "n_segments": self.n_segments}


@dataclass(frozen=True)
class NullModel(GenerativeModel):
    kind: ClassVar[str] = "null"
    n_segments: int

    def _draw(
        self, rng: np.random.Generator, count: int
    ) -> tuple[FloatArray, FloatArray]:
        n = self.n_segments
        angles = rng.uniform(0.0, 90.0, size=(count, n))
        lengths = np.column_stack(
            [_redraw(rng, _unit_uniform, count, _valid_length) for _ in range(n)]
        )
        return angles, lengths.reshape(count, n)


@dataclass(frozen=True, eq=False)
class IndependentModel(GenerativeModel):
    kind: ClassVar[str] = "independent"
    n_segments: int
    angle_kdes: tuple[GaussianKde, ...]
    length_kdes: tuple[GaussianKde, ...]

    def _draw(
        self, rng: np.random.Generator, count: int
    ) -> tuple[FloatArray, FloatArray]:
        angles = np.column_stack(
            [_kde_column(rng, k, count, _valid_angle) for k in self.angle_kdes]
        )
        lengths = np.column_stack(
            [_kde_column(rng, k, count, _valid_length) for k in self.length_kdes]
        )
        return angles.reshape(count, -1), lengths.reshape(count, -1)

    def to_dict(self) -> dict[str, Any]:
        return {
            **super().to_dict(),
            "angle_kdes": [k.to_dict() for k in self.angle_kdes],
            "length_kdes": [k.to_dict() for k in self.length_kdes],
        }


@dataclass(frozen=True, eq=False)
class MarkovUnivariateModel(GenerativeModel):
    kind: ClassVar[str] = "markov1_uni"
    n_segments: int
    initial_angle: GaussianKde
    initial_length: GaussianKde
    angle_tables: tuple[ConditionalTable, ...]
    length_tables: tuple[ConditionalTable, ...]

    def _draw(
        self, rng: np.random.Generator, count: int
    ) -> tuple[FloatArray, FloatArray]:
        angles = np.empty((count, self.n_segments))
        lengths = np.empty((count, self.n_segments))
        angles[:, 0] = _kde_column(rng, self.initial_angle, count, _valid_angle)
        lengths[:, 0] = _kde_column(rng, self.initial_length, count, _valid_length)
        for i in range(self.n_segments - 1):
            angles[:, i + 1] = _table_column(
                rng, self.angle_tables[i], [angles[:, i]], _valid_angle
            )
            lengths[:, i + 1] = _table_column(
                rng, self.length_tables[i], [lengths[:, i]], _valid_length
            )
        return angles, lengths

    def to_dict(self) -> dict[str, Any]:
        return {
            **super().to_dict(),
            "initial_angle": self.initial_angle.to_dict(),
            "initial_length": self.initial_length.to_dict(),
            "angle_tables": [t.to_dict() for t in self.angle_tables],
            "length_tables": [t.to_dict() for t in self.length_tables],
        }


@dataclass(frozen=True, eq=False)
class JointInitial:
    """Joint binned distribution of the first (angle, length) pair."""

    angle: BinnedTarget
    length: BinnedTarget
    probabilities: FloatArray
    pairs: FloatArray

    def sample(
        self, rng: np.random.Generator, count: int
    ) -> tuple[FloatArray, FloatArray]:
        flat = self.probabilities.ravel()
        cells = rng.choice(flat.shape[0], size=count, p=flat)
        a_bins, l_bins = np.unravel_index(cells, self.probabilities.shape)
        a_bins = np.asarray(a_bins, dtype=np.int64)
        l_bins = np.asarray(l_bins, dtype=np.int64)
        if self.angle.within_bin == "uniform":
            return self.angle.draw(rng, a_bins), self.length.draw(rng, l_bins)
        # a training pair from the chosen cell, each coordinate smoothed in its bin
        cell_of_pair = np.ravel_multi_index(
            (self.angle.index(self.pairs[:, 0]), self.length.index(self.pairs[:, 1])),
            self.probabilities.shape,
        )
        order = np.argsort(cell_of_pair, kind="stable")
        starts = np.searchsorted(cell_of_pair[order], np.arange(flat.shape[0] + 1))
        sizes = starts[cells + 1] - starts[cells]
        picks = order[starts[cells] + (rng.random(count) * sizes).astype(np.int64)]
        angles = self.angle.smooth(rng, self.pairs[picks, 0], a_bins)
        lengths = self.length.smooth(rng, self.pairs[picks, 1], l_bins)
        return angles, lengths

    def sample_valid(
        self, rng: np.random.Generator, count: int
    ) -> tuple[FloatArray, FloatArray]:
        """Like :meth:`sample`, redrawing pairs with an invalid angle or length."""
        angles, lengths = self.sample(rng, count)
        bad = np.flatnonzero(~(_valid_angle(angles) & _valid_length(lengths)))
        for _ in range(_MAX_REDRAWS):
            if bad.shape[0] == 0:
                return angles, lengths
            angles[bad], lengths[bad] = self.sample(rng, bad.shape[0])
            bad = bad[~(_valid_angle(angles[bad]) & _valid_length(lengths[bad]))]
        raise ArithmeticError(f"{bad.shape[0]} draws stayed outside the valid range.")

    def to_dict(self) -> dict[str, Any]:
        return {
            "angle": self.angle.to_dict(),
            "length": self.length.to_dict(),
            "probabilities": self.probabilities.tolist(),
            "pairs": self.pairs.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> JointInitial:
        return cls(
            BinnedTarget.from_dict(data["angle"]),
            BinnedTarget.from_dict(data["length"]),
            np.asarray(data["probabilities"], dtype=float),
            np.asarray(data["pairs"], dtype=float),
        )


@dataclass(frozen=True, eq=False)
class MarkovMultivariateModel(GenerativeModel):
    kind: ClassVar[str] = "markov1_multi"
    n_segments: int
    initial: JointInitial
    angle_tables: tuple[ConditionalTable, ...]
    length_tables: tuple[ConditionalTable, ...]

    def _draw(
        self, rng: np.random.Generator, count: int
    ) -> tuple[FloatArray, FloatArray]:
        angles = np.empty((count, self.n_segments))
        lengths = np.empty((count, self.n_segments))
        angles[:, 0], lengths[:, 0] = self.initial.sample_valid(rng, count)
        for i in range(self.n_segments - 1):
            previous = [angles[:, i], lengths[:, i]]
            angles[:, i + 1] = _table_column(
                rng, self.angle_tables[i], previous, _valid_angle
            )
            lengths[:, i + 1] = _table_column(
                rng, self.length_tables[i], previous, _valid_length
            )
        return angles, lengths

    def to_dict(self) -> dict[str, Any]:
        return {
            **super().to_dict(),
            "initial": self.initial.to_dict(),
            "angle_tables": [t.to_dict() for t in self.angle_tables],
            "length_tables": [t.to_dict() for t in self.length_tables],
        }


@dataclass(frozen=True, eq=False)
class MixtureModel(GenerativeModel):
    """
    Models fitted separately per cluster and combined, sampled with counts
    proportional to the cluster sizes.
    """

    components: tuple[GenerativeModel, ...]
    weights: FloatArray
    n_segments: int = field(init=False)

    def __post_init__(self) -> None:
        if not self.components:
            raise EmptyInputError("A mixture needs at least one component.")
        kinds = {c.kind for c in self.components}
        counts = {c.n_segments for c in self.components}
        if len(kinds) != 1 or len(counts) != 1:
            raise ConfigError("Mixture components must share kind and segment count.")
        object.__setattr__(self, "n_segments", counts.pop())

    @property
    def kind(self) -> str:  # type: ignore[override]
        return self.components[0].kind

    def allocate(self, count: int) -> IntArray:
        """Split ``count`` draws over the components by largest remainder."""
        weights = np.asarray(self.weights, dtype=float)
        share = weights / float(weights.sum()) * count
        counts = np.floor(share).astype(np.int64)
        remainder = count - int(counts.sum())
        order = np.argsort(-(share - counts), kind="stable")
        counts[order[:remainder]] += 1
        return counts

    def sample(self, count: int, seed: int) -> list[SegmentFeatures]:
        if count < 1:
            raise ConfigError(f"count must be >= 1, got {count}.")
        streams = np.random.SeedSequence(seed).spawn(len(self.components))
        out: list[SegmentFeatures] = []
        for component, stream, share in zip(
            self.components, streams, self.allocate(count)
        ):
            if share > 0:
                child_seed = int(stream.generate_state(1, dtype=np.uint64)[0])
                out.extend(component.sample(int(share), child_seed))
        # each component numbers its draws from zero
        return [
            SegmentFeatures(f"{self.kind}-{i}", f.angles, f.lengths)
            for i, f in enumerate(out)
        ]

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": "mixture",
            "n_segments": self.n_segments,
            "weights": np.asarray(self.weights, dtype=float).tolist(),
            "components": [c.to_dict() for c in self.components],
        }


def _columns(
    features: Sequence[SegmentFeatures],
) -> tuple[int, FloatArray, FloatArray]:
    if len(features) == 0:
        raise EmptyInputError("Cannot fit a model without training profiles.")
    n = uniform_segment_count(features)
    data = feature_matrix(features)
    return n, data[:, :n], data[:, n:]


def fit_null(n_segments: int) -> NullModel:
    """Parameter-free uniform model."""
    if n_segments < 1:
        raise ConfigError(f"n_segments must be >= 1, got {n_segments}.")
    return NullModel(n_segments)


def fit_independent(features: Sequence[SegmentFeatures]) -> IndependentModel:
    """
    One Gaussian kernel density per angle and per length position.

    :raises ~polyviews.errors.EmptyInputError: without training profiles
    """
    n, angles, lengths = _columns(features)
    return IndependentModel(
        n,
        tuple(GaussianKde.fit(angles[:, i]) for i in range(n)),
        tuple(GaussianKde.fit(lengths[:, i]) for i in range(n)),
    )


def fit_markov1_uni(
    features: Sequence[SegmentFeatures],
    bins: int = 10,
    within_bin: WithinBin = "kde",
    edges_from: MarkovUnivariateModel | None = None,
) -> MarkovUnivariateModel:
    """
    First segment from kernel densities, then ``P(a_i+1 | a_i)`` and
    ``P(l_i+1 | l_i)`` tables with ``bins`` bins per variable.

    ``edges_from`` reuses the bin edges of another model.

    :raises ~polyviews.errors.EmptyInputError: without training profiles
    """
    if bins < 1:
        raise ConfigError(f"bins must be >= 1, got {bins}.")
    n, angles, lengths = _columns(features)
    angle_tables, length_tables = [], []
    for i in range(n - 1):
        for column, tables, source in (
            (angles, angle_tables, edges_from.angle_tables if edges_from else None),
            (lengths, length_tables, edges_from.length_tables if edges_from else None),
        ):
            reference = source[i] if source else None
            tables.append(
                ConditionalTable.fit(
                    [column[:, i]],
                    column[:, i + 1],
                    [bins],
                    bins,
                    within_bin,
                    reference.condition_edges if reference else None,
                    reference.target.edges if reference else None,
                )
            )
    return MarkovUnivariateModel(
        n,
        GaussianKde.fit(angles[:, 0]),
        GaussianKde.fit(lengths[:, 0]),
        tuple(angle_tables),
        tuple(length_tables),
    )


def fit_markov1_multi(
    features: Sequence[SegmentFeatures],
    bins_alpha: int = 8,
    bins_l: int = 8,
    within_bin: WithinBin = "kde",
    edges_from: MarkovMultivariateModel | None = None,
) -> MarkovMultivariateModel:
    """
    Joint first segment ``P(a_1, l_1)``, then ``P(a_i+1 | a_i, l_i)`` and
    ``P(l_i+1 | a_i, l_i)`` tables conditioned on the joint cell.

    :raises ~polyviews.errors.EmptyInputError: without training profiles
    """
    if bins_alpha < 1 or bins_l < 1:
        raise ConfigError("bins_alpha and bins_l must be >= 1.")
    n, angles, lengths = _columns(features)

    ref_initial = edges_from.initial if edges_from else None
    first_angle = BinnedTarget.fit(
        angles[:, 0],
        bins_alpha,
        within_bin,
        ref_initial.angle.edges if ref_initial else None,
    )
    first_length = BinnedTarget.fit(
        lengths[:, 0],
        bins_l,
        within_bin,
        ref_initial.length.edges if ref_initial else None,
    )
    joint = np.zeros((first_angle.n_bins, first_length.n_bins))
    np.add.at(
        joint, (first_angle.index(angles[:, 0]), first_length.index(lengths[:, 0])), 1.0
    )
    initial = JointInitial(
        first_angle,
        first_length,
        joint / joint.sum(),
        np.column_stack((angles[:, 0], lengths[:, 0])),
    )

    angle_tables, length_tables = [], []
    for i in range(n - 1):
        ref_a = edges_from.angle_tables[i] if edges_from else None
        ref_l = edges_from.length_tables[i] if edges_from else None
        conditions = [angles[:, i], lengths[:, i]]
        angle_tables.append(
            ConditionalTable.fit(
                conditions,
                angles[:, i + 1],
                [bins_alpha, bins_l],
                bins_alpha,
                within_bin,
                ref_a.condition_edges if ref_a else None,
                ref_a.target.edges if ref_a else None,
            )
        )
        length_tables.append(
            ConditionalTable.fit(
                conditions,
                lengths[:, i + 1],
                [bins_alpha, bins_l],
                bins_l,
                within_bin,
                ref_l.condition_edges if ref_l else None,
                ref_l.target.edges if ref_l else None,
            )
        )
    return MarkovMultivariateModel(
        n, initial, tuple(angle_tables), tuple(length_tables)
    )


def fit_model(
    kind: str, features: Sequence[SegmentFeatures], config: ModelConfig | None = None
) -> GenerativeModel:
    """Fit a model of the given kind with the bin counts of ``config``."""
    config = config or ModelConfig()
    if kind == "null":
        return fit_null(uniform_segment_count(features))
    if kind == "independent":
        return fit_independent(features)
    if kind == "markov1_uni":
        return fit_markov1_uni(features, config.bins_univariate, config.within_bin)
    if kind == "markov1_multi":
        return fit_markov1_multi(
            features, config.bins_alpha, config.bins_l, config.within_bin
        )
    raise ConfigError(f"Unknown model kind '{kind}'.")


def fit_per_cluster(
    kind: str,
    clusters: Sequence[Sequence[SegmentFeatures]],
    config: ModelConfig | None = None,
) -> GenerativeModel:
    """
    Fit one model per cluster and combine them with weights proportional to
    the cluster sizes. A single cluster gives a plain model.
    """
    groups = [c for c in clusters if len(c) > 0]
    if not groups:
        raise EmptyInputError("No non-empty cluster to fit.")
    if len(groups) == 1:
        return fit_model(kind, groups[0], config)
    return MixtureModel(
        tuple(fit_model(kind, g, config) for g in groups),
        np.asarray([len(g) for g in groups], dtype=float),
    )


def sample(model: GenerativeModel, count: int, seed: int) -> list[SegmentFeatures]:
    """Draw ``count`` feature vectors from ``model``, deterministically in ``seed``."""
    return model.sample(count, seed)


def model_from_dict(data: dict[str, Any]) -> GenerativeModel:
    """Rebuild a model written with ``to_dict``."""
    try:
        kind = data["kind"]
        n = int(data["n_segments"])
        if kind == "mixture":
            return MixtureModel(
                tuple(model_from_dict(c) for c in data["components"]),
                np.asarray(data["weights"], dtype=float),
            )
        if kind == "null":
            return NullModel(n)
        if kind == "independent":
            return IndependentModel(
                n,
                tuple(GaussianKde.from_dict(k) for k in data["angle_kdes"]),
                tuple(GaussianKde.from_dict(k) for k in data["length_kdes"]),
            )
        if kind == "markov1_uni":
            return MarkovUnivariateModel(
                n,
                GaussianKde.from_dict(data["initial_angle"]),
                GaussianKde.from_dict(data["initial_length"]),
                tuple(ConditionalTable.from_dict(t) for t in data["angle_tables"]),
                tuple(ConditionalTable.from_dict(t) for t in data["length_tables"]),
            )
        if kind == "markov1_multi":
            return MarkovMultivariateModel(
                n,
                JointInitial.from_dict(data["initial"]),
                tuple(ConditionalTable.from_dict(t) for t in data["angle_tables"]),
                tuple(ConditionalTable.from_dict(t) for t in data["length_tables"]),
            )
    except (KeyError, TypeError, ValueError) as e:
        raise ArtifactDeserializationError(f"Malformed model description: {e}") from e
    raise ArtifactDeserializationError(f"Unknown model kind '{kind}'.")
