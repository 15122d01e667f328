import numpy as np
import pytest

from polyviews.adherence import (
    GridConfig,
    Histogram2D,
    compare,
    epsilon,
    evaluate_models,
    grid_edges,
    histogram2d,
    joint_pca,
    rank_models,
)
from polyviews.errors import (
    BinMismatchError,
    ConfigError,
    EmptyInputError,
    MixedSegmentCountsError,
)
from polyviews.features import SegmentFeatures
from polyviews.models import MODEL_KINDS, fit_model


def _declining_features(count, n_segments=3, seed=0):
    """Steep first segments that flatten step by step."""
    rng = np.random.default_rng(seed)
    out = []
    for i in range(count):
        angles = [float(np.clip(rng.normal(60.0, 8.0), 20.0, 85.0))]
        for _ in range(n_segments - 1):
            angles.append(float(np.clip(angles[-1] + rng.normal(-12.0, 3.0), 2.0, 85.0)))
        lengths = rng.dirichlet(np.full(n_segments, 15.0))
        out.append(SegmentFeatures.from_arrays(f"r{i}", angles, lengths))
    return out



def _chain_features(count, n_segments=4, seed=0):
    """
    Features from a fixed first-order chain on the pair (angle, length).

    Each segment is steep or flat and, except the last, short or long. The
    next angle is steep with probability 0.05, plus 0.45 if the current
    angle is steep, plus 0.45 if the current segment is long. The next
    length is long with probability 0.9 after a steep angle and 0.1 after a
    flat one. The last length is what remains of the unit interval.
    """
    rng = np.random.default_rng(seed)
    steep = np.zeros((count, n_segments), dtype=bool)
    long = np.zeros((count, n_segments - 1), dtype=bool)
    steep[:, 0] = rng.random(count) < 0.5
    long[:, 0] = rng.random(count) < 0.5
    for i in range(n_segments - 1):
        p_steep = 0.05 + 0.45 * steep[:, i] + 0.45 * long[:, i]
        steep[:, i + 1] = rng.random(count) < p_steep
        if i + 1 < n_segments - 1:
            long[:, i + 1] = rng.random(count) < np.where(steep[:, i], 0.9, 0.1)
    angles = np.where(
        steep,
        rng.normal(65.0, 3.0, steep.shape),
        rng.normal(20.0, 3.0, steep.shape),
    )
    head = np.where(
        long, rng.uniform(0.23, 0.27, long.shape), rng.uniform(0.06, 0.10, long.shape)
    )
    lengths = np.column_stack((head, 1.0 - head.sum(axis=1)))
    return [
        SegmentFeatures.from_arrays(f"m{i}", angles[i], lengths[i]) for i in range(count)
    ]


def _ordered(scores):
    by_kind = {s.model_kind: s.epsilon for s in scores}
    return (
        by_kind["markov1_multi"]
        <= by_kind["markov1_uni"]
        <= by_kind["independent"]
        <= by_kind["null"]
    )


def _histogram(masses, edges=(0.0, 1.0, 2.0, 3.0, 4.0)):
    edges = np.asarray(edges)
    return Histogram2D(edges, edges, np.asarray(masses, dtype=float))


def test_histogram_boundaries():
    x_edges = np.array([0.0, 1.0, 2.0])
    y_edges = np.array([0.0, 1.0, 2.0])
    hist = histogram2d(np.array([[1.0, 1.0]]), x_edges, y_edges)
    assert hist.masses[1, 1] == 1.0
    hist = histogram2d(np.array([[2.0, 2.0], [-5.0, 0.5], [0.5, 9.0], [0.0, 0.0]]), x_edges, y_edges)
    np.testing.assert_allclose(hist.masses, [[0.5, 0.25], [0.0, 0.25]])
    assert hist.masses.sum() == pytest.approx(1.0)


def test_histogram_cell_centres():
    edges = np.array([0.0, 1.0, 2.0])
    points = np.array([[0.5, 0.5], [0.5, 1.5], [1.5, 0.5], [1.5, 1.5]])
    np.testing.assert_allclose(histogram2d(points, edges, edges).masses, 0.25)


def test_histogram_errors():
    edges = np.array([0.0, 1.0])
    with pytest.raises(EmptyInputError):
        histogram2d(np.empty((0, 2)), edges, edges)
    with pytest.raises(ConfigError):
        histogram2d(np.zeros((1, 2)), np.array([1.0, 0.0]), edges)


def test_epsilon_examples():
    edges = (0.0, 1.0, 2.0)
    assert epsilon(_histogram([[1, 0], [0, 0]], edges), _histogram([[0, 0], [0, 1]], edges)) == 2.0
    assert epsilon(
        _histogram([[0.5, 0.5], [0, 0]], edges), _histogram([[0.5, 0], [0.5, 0]], edges)
    ) == pytest.approx(1.0)


def test_epsilon_metric_properties():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        a, b, c = (_histogram(rng.dirichlet(np.ones(16)).reshape(4, 4)) for _ in range(3))
        ab = epsilon(a, b)
        assert ab == epsilon(b, a)
        assert 0.0 <= ab <= 2.0 + 1e-12
        assert epsilon(a, a) == 0.0
        assert ab <= epsilon(a, c) + epsilon(c, b) + 1e-12


def test_epsilon_bin_mismatch():
    coarse = _histogram(np.full((2, 2), 0.25), (0.0, 1.0, 2.0))
    fine = _histogram(np.full((4, 4), 1 / 16))
    shifted = _histogram(np.full((2, 2), 0.25), (0.0, 1.0, 2.5))
    with pytest.raises(BinMismatchError):
        epsilon(coarse, fine)
    with pytest.raises(BinMismatchError):
        epsilon(coarse, shifted)


def test_grid_edges_cover_both_groups():
    x_edges, y_edges = grid_edges(
        np.array([[0.0, 1.0]]), np.array([[3.0, -1.0], [1.0, 2.0]]), grid=GridConfig(3, 6)
    )
    np.testing.assert_allclose(x_edges, [0.0, 1.0, 2.0, 3.0])
    assert y_edges[0] == -1.0 and y_edges[-1] == 2.0 and y_edges.shape == (7,)
    with pytest.raises(ConfigError):
        GridConfig(0, 20)


def test_joint_pca_is_centered_on_union():
    real = _declining_features(100, seed=1)
    synthetic = _declining_features(300, seed=2)
    joint = joint_pca(real, synthetic)
    union = np.vstack((joint.real_scores, joint.synthetic_scores))
    np.testing.assert_allclose(union.mean(axis=0), 0.0, atol=1e-9)
    assert joint.real_scores.shape == (100, 2)
    assert joint.synthetic_scores.shape == (300, 2)
    assert len(joint.basis_id) == 12


def test_joint_pca_of_identical_groups():
    real = _declining_features(50)
    joint = joint_pca(real, real)
    np.testing.assert_allclose(joint.real_scores, joint.synthetic_scores)
    score, plot = compare(real, real, "independent")
    assert score.epsilon == 0.0
    assert np.all(plot.difference == 0.0)


def test_joint_pca_errors():
    with pytest.raises(MixedSegmentCountsError):
        joint_pca(_declining_features(10, 2), _declining_features(10, 3))
    with pytest.raises(EmptyInputError):
        joint_pca([], _declining_features(10))


def test_compare_reports_grid_and_sizes():
    score, plot = compare(
        _declining_features(80), _declining_features(120, seed=3), "null", GridConfig(10, 12)
    )
    assert score.n_real == 80 and score.n_synth == 120
    assert score.grid == (10, 12)
    assert plot.real.masses.shape == (10, 12)
    assert 0.0 <= score.epsilon <= 2.0
    assert score.to_dict()["kind"] == "null"


def test_markov_models_beat_unstructured_ones():
    real = _declining_features(2000)
    models = [fit_model(kind, real) for kind in MODEL_KINDS]
    scores = rank_models(real, models, count=4000, seed=7, grid=GridConfig(10, 10))
    by_kind = {s.model_kind: s.epsilon for s in scores}
    assert [s.epsilon for s in scores] == sorted(by_kind.values())
    assert scores[-1].model_kind == "null"
    for markov in ("markov1_uni", "markov1_multi"):
        assert by_kind[markov] < by_kind["independent"]


def test_ranking_does_not_depend_on_workers():
    real = _declining_features(300)
    models = [fit_model(kind, real) for kind in MODEL_KINDS]
    serial = evaluate_models(real, models, 1000, seed=1, workers=1)
    threaded = evaluate_models(real, models, 1000, seed=1, workers=4)
    assert [s.to_dict() for s, _ in serial] == [s.to_dict() for s, _ in threaded]
    with pytest.raises(EmptyInputError):
        evaluate_models(real, [], 10, seed=1)


def test_models_ordered_on_a_known_chain():
    real = _chain_features(4000, seed=21)
    models = [fit_model(kind, real) for kind in MODEL_KINDS]
    scores = rank_models(real, models, count=20_000, seed=3, grid=GridConfig(10, 10))
    assert _ordered(scores)


@pytest.mark.slow
def test_model_ordering_over_repetitions():
    for rep in range(10):
        real = _chain_features(5000, seed=rep)
        models = [fit_model(kind, real) for kind in MODEL_KINDS]
        assert _ordered(rank_models(real, models, 100_000, seed=rep)), rep
