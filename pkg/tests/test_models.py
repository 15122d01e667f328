import json

import numpy as np
import pytest
from scipy import integrate, stats

from polyviews.errors import ArtifactDeserializationError, ConfigError, EmptyInputError
from polyviews.features import SegmentFeatures, feature_matrix
from polyviews.models import (
    MODEL_KINDS,
    SAMPLE_CHUNK,
    ConditionalTable,
    GaussianKde,
    MixtureModel,
    ModelConfig,
    bin_index,
    equal_width_edges,
    fit_independent,
    fit_markov1_multi,
    fit_markov1_uni,
    fit_model,
    fit_null,
    fit_per_cluster,
    model_from_dict,
    sample,
    silverman_bandwidth,
)


def _chain_features(count, n_segments=3, seed=0):
    """Angles following a sticky random walk, lengths from a Dirichlet."""
    rng = np.random.default_rng(seed)
    out = []
    for i in range(count):
        angles = [rng.uniform(15.0, 75.0)]
        for _ in range(n_segments - 1):
            angles.append(float(np.clip(angles[-1] + rng.normal(0.0, 6.0), 10.0, 80.0)))
        lengths = rng.dirichlet(np.full(n_segments, 20.0))
        out.append(SegmentFeatures.from_arrays(f"c{i}", angles, lengths))
    return out


def _cross_features(count, seed=0):
    """The second length depends on the first angle, not on the first length."""
    rng = np.random.default_rng(seed)
    out = []
    for i in range(count):
        angles = rng.uniform(10.0, 80.0, size=3)
        l1 = rng.uniform(0.1, 0.3)
        l2 = 0.1 + 0.5 * angles[0] / 90.0
        out.append(SegmentFeatures.from_arrays(f"x{i}", angles, [l1, l2, 1.0 - l1 - l2]))
    return out


def _assert_valid(samples, n_segments):
    for f in samples:
        assert f.n_segments == n_segments
        assert np.all(np.abs(f.angles) < 90.0)
        assert np.all(f.lengths > 0.0)
        assert f.lengths.sum() == pytest.approx(1.0, abs=1e-9)


def test_kde_density_integrates_to_one():
    kde = GaussianKde.fit([0.0, 1.0, 5.0, 5.5])
    grid = np.linspace(-60.0, 70.0, 20001)
    assert integrate.trapezoid(kde.density(grid), grid) == pytest.approx(1.0, abs=1e-6)


def test_kde_single_sample():
    kde = GaussianKde(np.array([0.0]), 1.0)
    assert kde.density(0.0)[0] == pytest.approx(1.0 / np.sqrt(2.0 * np.pi))
    constant = GaussianKde.fit([3.0, 3.0, 3.0])
    assert constant.bandwidth > 0
    draws = constant.sample(np.random.default_rng(0), 100)
    np.testing.assert_allclose(draws, 3.0, atol=1e-3)


def test_kde_errors():
    with pytest.raises(EmptyInputError):
        GaussianKde.fit([])
    with pytest.raises(ConfigError):
        GaussianKde(np.array([1.0]), 0.0)


def test_silverman_bandwidth():
    values = np.random.default_rng(0).normal(0.0, 2.0, size=1000)
    width = silverman_bandwidth(values)
    assert width == pytest.approx((3 * 1000 / 4) ** -0.2 * np.std(values, ddof=1))
    assert width == pytest.approx(2.0 * (3 * 1000 / 4) ** -0.2, rel=0.1)


def test_kde_matches_scipy():
    values = np.random.default_rng(1).gamma(2.0, 3.0, size=300)
    kde = GaussianKde.fit(values)
    grid = np.linspace(-5.0, 40.0, 50)
    reference = stats.gaussian_kde(values, bw_method="silverman")
    np.testing.assert_allclose(kde.density(grid), reference(grid), rtol=1e-9)
    restored = GaussianKde.from_dict(kde.to_dict())
    np.testing.assert_allclose(restored.density(grid), kde.density(grid))
    draws = kde.sample(np.random.default_rng(2), 20_000)
    assert draws.mean() == pytest.approx(values.mean(), abs=0.2)


def test_binning():
    edges = np.array([0.0, 1.0, 2.0, 3.0])
    values = np.array([-1.0, 0.0, 1.0, 2.5, 3.0, 4.0])
    assert bin_index(values, edges).tolist() == [0, 0, 1, 2, 2, 2]
    np.testing.assert_allclose(equal_width_edges(np.array([2.0, 4.0]), 2), [2.0, 3.0, 4.0])
    flat = equal_width_edges(np.array([5.0, 5.0]), 3)
    assert flat[0] < 5.0 < flat[-1]


def test_conditional_table_empty_rows_use_marginal():
    conditions = np.array([0.0, 0.0, 3.0, 3.0])
    target = np.array([0.0, 1.0, 1.0, 1.0])
    table = ConditionalTable.fit([conditions], target, [3], 2)
    assert table.shape == (3,)
    np.testing.assert_allclose(table.probabilities[0], [0.5, 0.5])
    np.testing.assert_allclose(table.probabilities[1], [0.25, 0.75])
    np.testing.assert_allclose(table.probabilities[2], [0.0, 1.0])
    np.testing.assert_allclose(table.probabilities.sum(axis=1), 1.0)


def test_markov_uni_identity_chain_is_diagonal():
    rng = np.random.default_rng(1)
    features = []
    for i in range(500):
        a = rng.uniform(5.0, 85.0)
        features.append(SegmentFeatures.from_arrays(f"d{i}", [a, a, a], [0.2, 0.3, 0.5]))
    model = fit_markov1_uni(features, bins=10)
    for table in model.angle_tables:
        seen = table.counts.sum(axis=1) > 0
        np.testing.assert_allclose(np.diag(table.probabilities)[seen], 1.0)


@pytest.mark.parametrize("kind", MODEL_KINDS)
def test_samples_are_valid(kind):
    model = fit_model(kind, _chain_features(300), ModelConfig())
    samples = sample(model, 2000, seed=3)
    assert len(samples) == 2000
    _assert_valid(samples, 3)


def test_null_model_ranges():
    angles = feature_matrix(fit_null(4).sample(5000, seed=0))[:, :4]
    assert angles.min() >= 0.0 and angles.max() < 90.0
    with pytest.raises(ConfigError):
        fit_null(0)


@pytest.mark.parametrize("kind", MODEL_KINDS)
def test_sampling_is_deterministic(kind):
    model = fit_model(kind, _chain_features(200), ModelConfig())
    first = feature_matrix(model.sample(SAMPLE_CHUNK + 100, seed=42))
    again = feature_matrix(model.sample(SAMPLE_CHUNK + 100, seed=42))
    other = feature_matrix(model.sample(SAMPLE_CHUNK + 100, seed=43))
    np.testing.assert_array_equal(first, again)
    assert not np.array_equal(first, other)
    # chunks are independent streams, so a shorter draw is a prefix
    prefix = feature_matrix(model.sample(SAMPLE_CHUNK, seed=42))
    np.testing.assert_array_equal(first[:SAMPLE_CHUNK], prefix)


def test_single_bin_multivariate_matches_independent():
    features = _chain_features(1500, seed=2)
    independent = feature_matrix(fit_independent(features).sample(10_000, seed=1))
    multi = feature_matrix(
        fit_markov1_multi(features, bins_alpha=1, bins_l=1).sample(10_000, seed=2)
    )
    for column in range(3):
        result = stats.ks_2samp(independent[:, column], multi[:, column])
        assert result.pvalue > 1e-3


def test_multivariate_captures_cross_dependence():
    features = _cross_features(2000)
    uni = feature_matrix(fit_markov1_uni(features).sample(5000, seed=1))
    multi = feature_matrix(fit_markov1_multi(features).sample(5000, seed=1))
    rho_multi = stats.pearsonr(multi[:, 0], multi[:, 4]).statistic
    rho_uni = stats.pearsonr(uni[:, 0], uni[:, 4]).statistic
    assert rho_multi > 0.5
    assert abs(rho_uni) < 0.1


def _max_row_distance(fitted, refitted, min_count):
    worst = 0.0
    for table, again in zip(fitted, refitted):
        rows = again.counts.sum(axis=1) >= min_count
        distance = 0.5 * np.abs(table.probabilities - again.probabilities).sum(axis=1)
        if np.any(rows):
            worst = max(worst, float(distance[rows].max()))
    return worst


@pytest.mark.slow
def test_markov_uni_self_consistency():
    model = fit_markov1_uni(_chain_features(3000), bins=10)
    refit = fit_markov1_uni(model.sample(100_000, seed=5), bins=10, edges_from=model)
    assert _max_row_distance(model.angle_tables, refit.angle_tables, 1000) <= 0.05
    assert _max_row_distance(model.length_tables, refit.length_tables, 1000) <= 0.05


@pytest.mark.slow
def test_markov_multi_self_consistency():
    model = fit_markov1_multi(_chain_features(3000), bins_alpha=8, bins_l=8)
    refit = fit_markov1_multi(model.sample(100_000, seed=6), edges_from=model)
    assert _max_row_distance(model.angle_tables, refit.angle_tables, 1000) <= 0.05
    assert _max_row_distance(model.length_tables, refit.length_tables, 1000) <= 0.05


def test_uniform_within_bin_stays_in_bin():
    features = _chain_features(400)
    model = fit_markov1_uni(features, bins=5, within_bin="uniform")
    table = model.angle_tables[0]
    draws = table.sample(np.random.default_rng(0), [np.full(1000, 40.0)])
    assert draws.min() >= table.target.edges[0]
    assert draws.max() <= table.target.edges[-1]


def test_mixture_allocation():
    component = fit_null(2)
    mixture = MixtureModel((component, component, component), np.array([1.0, 1.0, 1.0]))
    assert mixture.allocate(10).tolist() == [4, 3, 3]
    weighted = MixtureModel((component, component), np.array([3.0, 1.0]))
    assert weighted.allocate(8).tolist() == [6, 2]
    assert weighted.kind == "null"
    assert len(weighted.sample(9, seed=0)) == 9
    ids = [f.id for f in weighted.sample(9, seed=0)]
    assert ids == [f"null-{i}" for i in range(9)]
    with pytest.raises(ConfigError):
        MixtureModel((fit_null(2), fit_null(3)), np.array([1.0, 1.0]))


def test_fit_per_cluster():
    clusters = [_chain_features(50, seed=1), [], _chain_features(30, seed=2)]
    mixture = fit_per_cluster("independent", clusters)
    assert isinstance(mixture, MixtureModel)
    np.testing.assert_allclose(mixture.weights, [50.0, 30.0])
    drawn = mixture.sample(101, seed=4)
    assert len({f.id for f in drawn}) == 101
    single = fit_per_cluster("markov1_uni", clusters[:1])
    assert single.kind == "markov1_uni" and not isinstance(single, MixtureModel)
    with pytest.raises(EmptyInputError):
        fit_per_cluster("null", [[]])


@pytest.mark.parametrize("kind", MODEL_KINDS)
def test_model_description_rebuilds_same_sampler(kind):
    model = fit_per_cluster(kind, [_chain_features(80, seed=1), _chain_features(40, seed=2)])
    rebuilt = model_from_dict(json.loads(json.dumps(model.to_dict())))
    np.testing.assert_array_equal(
        feature_matrix(model.sample(500, seed=9)), feature_matrix(rebuilt.sample(500, seed=9))
    )


def test_model_errors():
    with pytest.raises(ConfigError):
        fit_model("markov2", _chain_features(10))
    with pytest.raises(EmptyInputError):
        fit_independent([])
    with pytest.raises(ConfigError):
        fit_null(2).sample(0, seed=0)
    with pytest.raises(ArtifactDeserializationError):
        model_from_dict({"kind": "independent", "n_segments": 2})
    with pytest.raises(ArtifactDeserializationError):
        model_from_dict({"kind": "nope", "n_segments": 2})
    with pytest.raises(ConfigError):
        ModelConfig(bins_l=0)
