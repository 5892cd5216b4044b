import numpy as np
import pytest

from services.basis_service import (
    eval_basis, eval_basis_gradient, legendre_basis, mixture_basis, orthonormal_basis_from_moments,
)
from services.errors import BasisError, ModelError
from services.mixture_service import (
    GaussianComponent, MomentTable, TruncatedGaussianMixture, raw_moments, sample, tensor_gauss_legendre,
)
from services.monomials import multi_indices


def _gram_from_moments(basis, table):
    size = basis.size
    monomials = np.empty((size, size))
    for i, gi in enumerate(basis.indices):
        for j, gj in enumerate(basis.indices):
            monomials[i, j] = table[tuple(a + b for a, b in zip(gi, gj))]
    return basis.coeffs @ monomials @ basis.coeffs.T


def test_legendre_order_one_on_reference_box():
    basis = legendre_basis(1, 1, [[-1.0, 1.0]])
    assert basis.coeffs == pytest.approx(np.array([[1.0, 0.0], [0.0, np.sqrt(3.0)]]))
    assert eval_basis(basis, np.array([1.0])) == pytest.approx([1.0, np.sqrt(3.0)])


def test_legendre_counts_multi_indices():
    assert legendre_basis(2, 2, [[-1.0, 1.0], [-1.0, 1.0]]).size == 6


def test_legendre_affine_map():
    basis = legendre_basis(1, 1, [[0.0, 2.0]])
    x = np.linspace(0.0, 2.0, 7)[:, None]
    assert eval_basis(basis, x)[:, 1] == pytest.approx(np.sqrt(3.0) * (x[:, 0] - 1.0))


def test_legendre_is_orthonormal_for_uniform_measure():
    box = np.array([[100.0, 300.0], [0.3, 0.6], [-1.0, 2.0]])
    basis = legendre_basis(3, 3, box)
    points, weights = tensor_gauss_legendre(box[:, 0], box[:, 1], 6)
    weights = weights / np.prod(box[:, 1] - box[:, 0])
    values = eval_basis(basis, points)
    gram = values.T @ (values * weights[:, None])
    assert gram == pytest.approx(np.eye(basis.size), abs=1e-10)


def test_legendre_rejects_empty_box():
    with pytest.raises(BasisError):
        legendre_basis(1, 2, [[1.0, 1.0]])


def test_order_zero_moment_basis_is_constant(synthetic_model):
    table = raw_moments(synthetic_model, 0)
    basis = orthonormal_basis_from_moments(table, 2, 0)
    assert basis.coeffs == pytest.approx(np.array([[1.0]]))


def test_effectively_untruncated_normal_gives_hermite():
    model = TruncatedGaussianMixture([
        GaussianComponent(1.0, np.zeros(1), np.eye(1), np.array([-1e6]), np.array([1e6]))
    ])
    basis = orthonormal_basis_from_moments(raw_moments(model, 4), 1, 2)
    expected = np.array([
        [1.0, 0.0, 0.0],
        [0.0, 1.0, 0.0],
        [-1.0 / np.sqrt(2.0), 0.0, 1.0 / np.sqrt(2.0)],
    ])
    assert basis.coeffs == pytest.approx(expected, abs=1e-8)


def test_mixture_basis_gram_is_identity(synthetic_model, basis_xi):
    table = raw_moments(synthetic_model, 2 * basis_xi.max_order, shift=basis_xi.shift, scale=basis_xi.scale)
    assert _gram_from_moments(basis_xi, table) == pytest.approx(np.eye(basis_xi.size), abs=1e-8)


def test_mixture_basis_gram_monte_carlo(synthetic_model):
    basis = mixture_basis(synthetic_model, 2)
    n = 200_000
    values = eval_basis(basis, sample(synthetic_model, n, seed=21))
    products = values[:, :, None] * values[:, None, :]
    estimate = products.mean(axis=0)
    se = products.std(axis=0) / np.sqrt(n)
    assert np.all(np.abs(estimate - np.eye(basis.size)) <= 4 * se + 1e-12)


def test_leading_coefficients_positive(basis_xi):
    assert np.all(np.diag(basis_xi.coeffs) > 0)


def test_singular_gram_names_the_order():
    # moments of a point mass at t = 1
    indices = multi_indices(1, 2)
    table = MomentTable(indices=indices, values=np.ones(len(indices)), shift=np.zeros(1), scale=np.ones(1))
    with pytest.raises(BasisError) as excinfo:
        orthonormal_basis_from_moments(table, 1, 1)
    assert excinfo.value.details['order'] == 1
    assert 'order 1' in excinfo.value.message


def test_moments_must_reach_twice_the_order(synthetic_model):
    with pytest.raises(BasisError):
        orthonormal_basis_from_moments(raw_moments(synthetic_model, 3), 2, 2)


def test_first_entry_is_one(basis_xi, basis_x):
    rng = np.random.default_rng(0)
    points = rng.uniform(-0.4, 0.4, size=(50, 2))
    assert eval_basis(basis_xi, points)[:, 0] == pytest.approx(np.ones(50))
    assert eval_basis(basis_x, points)[:, 0] == pytest.approx(np.ones(50))


def test_eval_matches_direct_monomial_sum(basis_xi):
    rng = np.random.default_rng(1)
    points = rng.uniform(-0.4, 0.4, size=(100, 2))
    t = (points - basis_xi.shift) / basis_xi.scale
    direct = np.zeros((100, basis_xi.size))
    for i in range(basis_xi.size):
        for j, (a, b) in enumerate(basis_xi.indices):
            direct[:, i] += basis_xi.coeffs[i, j] * t[:, 0] ** a * t[:, 1] ** b
    assert eval_basis(basis_xi, points) == pytest.approx(direct, rel=1e-12, abs=1e-11)


def test_single_point_returns_vector(basis_x):
    values = eval_basis(basis_x, np.array([0.2, -0.3]))
    assert values.shape == (basis_x.size,)


def test_gradient_matches_finite_differences(basis_xi):
    point = np.array([0.05, -0.12])
    step = 1e-6
    grad = eval_basis_gradient(basis_xi, point)
    for j in range(2):
        offset = np.zeros(2)
        offset[j] = step
        fd = (eval_basis(basis_xi, point + offset) - eval_basis(basis_xi, point - offset)) / (2 * step)
        assert grad[:, j] == pytest.approx(fd, rel=1e-5, abs=1e-5)


def test_dimension_mismatch(basis_x):
    with pytest.raises(ModelError):
        eval_basis(basis_x, np.zeros(3))
