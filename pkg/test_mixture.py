import numpy as np
import pytest
from numpy.polynomial.legendre import leggauss
from scipy import stats

from services.errors import ModelError, SamplingError
from services.mixture_service import (
    GaussianComponent, TruncatedGaussianMixture, pdf, raw_moments, sample, tensor_gauss_legendre,
)
from services.monomials import monomial_matrix, multi_indices


def _single(mean, var, lower, upper):
    return TruncatedGaussianMixture([
        GaussianComponent(1.0, np.array([mean]), np.array([[var]]), np.array([lower]), np.array([upper]))
    ])


def test_pdf_outside_every_box_is_zero(synthetic_model):
    assert pdf(synthetic_model, np.array([0.5, 0.5])) == 0.0


def test_pdf_positive_at_origin(synthetic_model):
    assert pdf(synthetic_model, np.zeros(2)) > 0.0


def test_pdf_one_dimensional_closed_form():
    model = _single(0.0, 1.0, -1.0, 1.0)
    expected = stats.norm.pdf(0.0) / (stats.norm.cdf(1.0) - stats.norm.cdf(-1.0))
    assert pdf(model, np.array([0.0])) == pytest.approx(expected, rel=1e-6)
    assert expected == pytest.approx(0.584, abs=1e-3)


def test_pdf_batch_matches_single_points(synthetic_model):
    points = np.array([[0.0, 0.0], [0.1, -0.1], [0.5, 0.5]])
    batch = pdf(synthetic_model, points)
    assert batch.shape == (3,)
    assert batch == pytest.approx([pdf(synthetic_model, p) for p in points])


def test_pdf_integrates_to_one(synthetic_model):
    # pdf is smooth between box edges, so integrate cell by cell
    edges = np.unique(np.concatenate([[c.lower, c.upper] for c in synthetic_model.components]).ravel())
    total = 0.0
    for lo_x, hi_x in zip(edges[:-1], edges[1:]):
        for lo_y, hi_y in zip(edges[:-1], edges[1:]):
            points, weights = tensor_gauss_legendre(np.array([lo_x, lo_y]), np.array([hi_x, hi_y]), 40)
            total += weights @ pdf(synthetic_model, points)
    assert total == pytest.approx(1.0, abs=1e-6)


def test_pdf_dimension_mismatch(synthetic_model):
    with pytest.raises(ModelError):
        pdf(synthetic_model, np.zeros(3))


@pytest.mark.parametrize("cov", [
    [[1.0, 2.0], [2.0, 1.0]],
    [[1.0, 0.0], [0.5, 1.0]],
])
def test_invalid_covariance_rejected(cov):
    with pytest.raises(ModelError):
        TruncatedGaussianMixture([
            GaussianComponent(1.0, np.zeros(2), np.array(cov), -np.ones(2), np.ones(2))
        ])


def test_weights_must_sum_to_one():
    component = GaussianComponent(0.4, np.zeros(1), np.eye(1), -np.ones(1), np.ones(1))
    with pytest.raises(ModelError):
        TruncatedGaussianMixture([component, component])


def test_box_must_be_ordered():
    with pytest.raises(ModelError):
        _single(0.0, 1.0, 1.0, -1.0)


def test_from_dict_rejects_missing_fields():
    with pytest.raises(ModelError):
        TruncatedGaussianMixture.from_dict({'components': [{'weight': 1.0, 'mean': [0.0]}]})


def test_sampling_is_deterministic(synthetic_model):
    first = sample(synthetic_model, 500, seed=11)
    second = sample(synthetic_model, 500, seed=11)
    assert np.array_equal(first, second)
    assert not np.array_equal(first, sample(synthetic_model, 500, seed=12))


def test_samples_stay_in_support(synthetic_model):
    points = sample(synthetic_model, 20_000, seed=3)
    assert points.shape == (20_000, 2)
    assert synthetic_model.contains(points).all()


def test_sample_mean_is_zero_by_symmetry(synthetic_model):
    n = 200_000
    points = sample(synthetic_model, n, seed=5)
    se = points.std(axis=0) / np.sqrt(n)
    assert np.all(np.abs(points.mean(axis=0)) <= 4 * se)


def test_sample_size_must_be_positive(synthetic_model):
    with pytest.raises(SamplingError):
        sample(synthetic_model, 0, seed=0)


def test_degenerate_box_stops_sampling():
    model = _single(0.0, 1.0, 8.0, 9.0)
    with pytest.raises(SamplingError):
        sample(model, 10, seed=0)


def test_moment_normalisation_and_symmetry(synthetic_model):
    table = raw_moments(synthetic_model, 2)
    assert table[(0, 0)] == pytest.approx(1.0, abs=1e-12)
    assert abs(table[(1, 0)]) < 1e-10
    assert abs(table[(0, 1)]) < 1e-10


def test_moments_match_monte_carlo(synthetic_model):
    n = 200_000
    points = sample(synthetic_model, n, seed=7)
    indices = multi_indices(2, 4)
    table = raw_moments(synthetic_model, 4)
    values = monomial_matrix(points, indices)
    estimate = values.mean(axis=0)
    se = values.std(axis=0) / np.sqrt(n)
    for i, gamma in enumerate(indices[1:], start=1):
        assert abs(table[gamma] - estimate[i]) <= 4 * se[i] + 1e-12, gamma


def test_standardised_moments():
    model = _single(2.0, 0.25, 0.0, 4.0)
    table = raw_moments(model, 2, shift=np.array([2.0]), scale=np.array([0.5]))
    # the box spans +/- 4 sigma, so t is nearly standard normal
    assert abs(table[(1,)]) < 1e-12
    assert table[(2,)] == pytest.approx(1.0, abs=5e-3)


def test_mean_and_std_of_untruncated_normal():
    model = _single(1.5, 4.0, -1e6, 1e6)
    assert model.mean() == pytest.approx([1.5], abs=1e-9)
    assert model.std() == pytest.approx([2.0], rel=1e-9)


def test_tensor_rule_is_exact_for_low_degree():
    points, weights = tensor_gauss_legendre(np.array([0.0, -1.0]), np.array([2.0, 3.0]), 4)
    # integral of x^2 y over [0, 2] x [-1, 3]
    assert weights @ (points[:, 0] ** 2 * points[:, 1]) == pytest.approx(8 / 3 * 4, rel=1e-13)
    nodes, _ = leggauss(4)
    assert len(points) == len(nodes) ** 2


def test_bounding_box(synthetic_model):
    box = synthetic_model.bounding_box()
    assert box.tolist() == [[-0.4, 0.4], [-0.4, 0.4]]
