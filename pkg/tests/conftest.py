from __future__ import annotations

from collections.abc import Callable, Sequence
from pathlib import Path

import numpy as np
import pytest

from polyviews.features import SegmentFeatures
from polyviews.ingest import NormalizedProfile, ViewProfile

SAMPLE_CORPUS = Path(__file__).resolve().parent.parent / "samples" / "sample_corpus.csv"


def polyline(
    breakpoints: Sequence[float], slopes: Sequence[float], n: int = 100
) -> tuple[np.ndarray, np.ndarray]:
    """Continuous piecewise-linear curve through (0, 0) sampled at n points."""
    x = np.linspace(0.0, 1.0, n)
    slopes = np.asarray(slopes, dtype=float)
    y = slopes[0] * x
    for psi, change in zip(breakpoints, np.diff(slopes)):
        y = y + change * np.maximum(x - psi, 0.0)
    return x, y


@pytest.fixture
def make_polyline() -> Callable[..., NormalizedProfile]:
    def make(
        breakpoints: Sequence[float],
        slopes: Sequence[float],
        n: int = 100,
        noise: float = 0.0,
        seed: int = 0,
        id: str = "p",
    ) -> NormalizedProfile:
        x, y = polyline(breakpoints, slopes, n)
        if noise:
            y = y + np.random.default_rng(seed).normal(0.0, noise, size=n)
        return NormalizedProfile.from_points(id, x, y)

    return make


@pytest.fixture
def sample_corpus_path() -> Path:
    return SAMPLE_CORPUS


def _step_profile(
    rng: np.random.Generator, id: str, n_segments: int, months: int = 36
) -> ViewProfile:
    cuts = np.sort(rng.choice(np.arange(6, months - 6, 6), n_segments - 1, replace=False))
    rates = rng.permutation(np.array([800, 300, 90, 20, 4])[:n_segments])
    counts = [int(rng.integers(1, 50))]
    for segment, (start, stop) in enumerate(
        zip(np.concatenate(([1], cuts)), np.concatenate((cuts, [months])))
    ):
        counts.extend([int(rates[segment])] * int(stop - start))
    return ViewProfile(id, tuple(counts))


@pytest.fixture
def step_corpus() -> Callable[[int, int], list[ViewProfile]]:
    """Profiles with piecewise-constant monthly views, two or three rates each."""

    def make(count: int, seed: int = 0) -> list[ViewProfile]:
        rng = np.random.default_rng(seed)
        return [
            _step_profile(rng, f"step-{i}", 2 + i % 2) for i in range(count)
        ]

    return make


@pytest.fixture
def random_features() -> Callable[..., list[SegmentFeatures]]:
    def make(count: int, n_segments: int, seed: int = 0) -> list[SegmentFeatures]:
        rng = np.random.default_rng(seed)
        out = []
        for i in range(count):
            lengths = rng.dirichlet(np.full(n_segments, 4.0))
            angles = rng.uniform(5.0, 85.0, n_segments)
            out.append(SegmentFeatures(f"f{i}", angles, lengths))
        return out

    return make
