"""
Joint polynomial-chaos surrogates y(x, xi) = sum c[a, b] Phi_a(x) Psi_b(xi).

Coefficients live in a dense (n_x, n_xi) matrix whose entries with
|a| + |b| > p are held at zero. The xi basis is orthonormal with Psi_0 = 1, so
the mean over xi is the first column and the variance is the squared norm of
the remaining columns.
"""

import logging
from dataclasses import dataclass, replace
from typing import Any, Dict, Optional

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy import linalg

from monitoring import monitor_performance, run_logger
from services.basis_service import PolyBasis, eval_basis, eval_basis_gradient
from services.errors import FitError, ModelError
from services.mixture_service import TruncatedGaussianMixture, sample
from services.quadrature_service import QuadratureRule

logger = logging.getLogger(__name__)

MAX_CONDITION = 1e8


def coefficient_mask(basis_x: PolyBasis, basis_xi: PolyBasis, p: int) -> np.ndarray:
    return basis_x.orders()[:, None] + basis_xi.orders()[None, :] <= p


@dataclass(frozen=True, eq=False)
class PCESurrogate:
    basis_x: PolyBasis
    basis_xi: PolyBasis
    total_order: int
    coeffs: np.ndarray
    fit_residual: float = 0.0

    @property
    def mask(self) -> np.ndarray:
        return coefficient_mask(self.basis_x, self.basis_xi, self.total_order)

    def to_dict(self) -> Dict[str, Any]:
        rows, cols = np.nonzero(self.mask)
        return {
            'basis_x': self.basis_x.to_dict(),
            'basis_xi': self.basis_xi.to_dict(),
            'total_order': self.total_order,
            'terms': [
                {'alpha': list(self.basis_x.indices[a]), 'beta': list(self.basis_xi.indices[b]),
                 'value': float(self.coeffs[a, b])}
                for a, b in zip(rows, cols)
            ],
            'fit_residual': self.fit_residual,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "PCESurrogate":
        basis_x = PolyBasis.from_dict(data['basis_x'])
        basis_xi = PolyBasis.from_dict(data['basis_xi'])
        row = {g: i for i, g in enumerate(basis_x.indices)}
        col = {g: i for i, g in enumerate(basis_xi.indices)}
        coeffs = np.zeros((basis_x.size, basis_xi.size))
        for term in data['terms']:
            coeffs[row[tuple(term['alpha'])], col[tuple(term['beta'])]] = term['value']
        return cls(basis_x, basis_xi, int(data['total_order']), coeffs, float(data['fit_residual']))


class XPolynomial:
    """g(x) = sum_a coeffs[a] Phi_a(x); used for the mean over xi."""

    def __init__(self, basis_x: PolyBasis, coeffs: np.ndarray):
        self.basis_x = basis_x
        self.coeffs = np.asarray(coeffs, dtype=float)

    def __call__(self, x) -> np.ndarray:
        return eval_basis(self.basis_x, x) @ self.coeffs

    def gradient(self, x) -> np.ndarray:
        return np.einsum('...aj,a->...j', eval_basis_gradient(self.basis_x, x), self.coeffs)


class XVariance:
    """v(x) = sum_{b != 0} (sum_a C[a, b] Phi_a(x)) ** 2, degree <= 2p in x."""

    def __init__(self, basis_x: PolyBasis, coeffs: np.ndarray):
        self.basis_x = basis_x
        self.coeffs = np.asarray(coeffs, dtype=float)

    def __call__(self, x) -> np.ndarray:
        g = eval_basis(self.basis_x, x) @ self.coeffs
        return np.sum(g ** 2, axis=-1)

    def gradient(self, x) -> np.ndarray:
        g = eval_basis(self.basis_x, x) @ self.coeffs
        dg = np.einsum('...aj,ab->...bj', eval_basis_gradient(self.basis_x, x), self.coeffs)
        return 2 * np.einsum('...b,...bj->...j', g, dg)


class JointPolynomial:
    """The surrogate as one polynomial in z = (x, xi), for global minimisation."""

    def __init__(self, surrogate: PCESurrogate):
        self.surrogate = surrogate
        self.split = surrogate.basis_x.dim
        self.dim = self.split + surrogate.basis_xi.dim

    def __call__(self, z) -> np.ndarray:
        z = np.atleast_2d(z)
        return evaluate(self.surrogate, z[:, :self.split], z[:, self.split:])

    def gradient(self, z) -> np.ndarray:
        z = np.atleast_2d(z)
        s = self.surrogate
        phi = eval_basis(s.basis_x, z[:, :self.split])
        psi = eval_basis(s.basis_xi, z[:, self.split:])
        dphi = eval_basis_gradient(s.basis_x, z[:, :self.split])
        dpsi = eval_basis_gradient(s.basis_xi, z[:, self.split:])
        grad_x = np.einsum('naj,ab,nb->nj', dphi, s.coeffs, psi)
        grad_xi = np.einsum('na,ab,nbj->nj', phi, s.coeffs, dpsi)
        return np.hstack([grad_x, grad_xi])


def evaluate(surrogate: PCESurrogate, x, xi) -> np.ndarray:
    """Surrogate value at paired points; scalar for one (x, xi) pair."""
    x_arr, xi_arr = np.asarray(x, dtype=float), np.asarray(xi, dtype=float)
    if x_arr.shape[-1] != surrogate.basis_x.dim or xi_arr.shape[-1] != surrogate.basis_xi.dim:
        raise ModelError("point dimensions do not match the surrogate",
                         {'x_dim': surrogate.basis_x.dim, 'xi_dim': surrogate.basis_xi.dim})
    phi = np.atleast_2d(eval_basis(surrogate.basis_x, x_arr))
    psi = np.atleast_2d(eval_basis(surrogate.basis_xi, xi_arr))
    rows = max(len(phi), len(psi))
    phi, psi = np.broadcast_to(phi, (rows, phi.shape[1])), np.broadcast_to(psi, (rows, psi.shape[1]))
    values = np.einsum('na,ab,nb->n', phi, surrogate.coeffs, psi)
    return float(values[0]) if x_arr.ndim == 1 and xi_arr.ndim == 1 else values


def mean_over_xi(surrogate: PCESurrogate) -> XPolynomial:
    return XPolynomial(surrogate.basis_x, surrogate.coeffs[:, 0])


def variance_over_xi(surrogate: PCESurrogate) -> XVariance:
    return XVariance(surrogate.basis_x, surrogate.coeffs[:, 1:])


def xi_response(surrogate: PCESurrogate, xi_points: np.ndarray) -> np.ndarray:
    """B[l, a] = sum_b C[a, b] Psi_b(xi_l); y(x, xi_l) = B[l] . Phi(x)."""
    return eval_basis(surrogate.basis_xi, np.atleast_2d(xi_points)) @ surrogate.coeffs.T


@monitor_performance("surrogate.fit")
def fit_pce(samples, basis_x: PolyBasis, basis_xi: PolyBasis, p: int,
            weights: Optional[np.ndarray] = None) -> PCESurrogate:
    """Weighted least-squares fit; samples is (x, xi, values) with batched arrays."""
    x, xi, values = (np.asarray(a, dtype=float) for a in samples)
    x, xi = np.atleast_2d(x), np.atleast_2d(xi)
    if not np.all(np.isfinite(values)):
        raise FitError("training values contain undefined metrics",
                       {'undefined': int(np.count_nonzero(~np.isfinite(values)))})
    mask = coefficient_mask(basis_x, basis_xi, p)
    rows, cols = np.nonzero(mask)
    if len(values) < len(rows):
        raise FitError("fewer samples than coefficients; add samples or lower p",
                       {'samples': len(values), 'coefficients': len(rows), 'p': p})

    phi = eval_basis(basis_x, x)
    psi = eval_basis(basis_xi, xi)
    design = phi[:, rows] * psi[:, cols]
    root_w = np.ones(len(values)) if weights is None else np.sqrt(np.asarray(weights, dtype=float))

    solution, _, rank, singular = linalg.lstsq(design * root_w[:, None], values * root_w)
    condition = singular[0] / singular[-1] if singular[-1] > 0 else np.inf
    if rank < len(rows) or condition > MAX_CONDITION:
        raise FitError("surrogate design matrix is rank deficient; add samples or lower p",
                       {'rank': int(rank), 'coefficients': len(rows), 'condition': float(condition)})

    coeffs = np.zeros(mask.shape)
    coeffs[rows, cols] = solution
    rms = float(np.sqrt(np.mean((design @ solution - values) ** 2)))
    logger.debug("fit %d coefficients from %d samples, rms %.3e", len(rows), len(values), rms)
    return PCESurrogate(basis_x, basis_xi, p, coeffs, rms)


def sample_plan(basis_x: PolyBasis, box, rule: QuadratureRule, p: int,
                budget: Optional[int] = None, basis_xi: Optional[PolyBasis] = None):
    """Gauss-Legendre x points crossed with the xi rule.

    Returns (x, xi, weights). With a budget the rows are picked by rounds of
    column-pivoted QR on the design matrix and the weights become ones.
    """
    box = np.asarray(box, dtype=float)
    nodes, node_w = leggauss(p + 1)
    axes = [box[j, 0] + (box[j, 1] - box[j, 0]) * (nodes + 1) / 2 for j in range(len(box))]
    grids = np.meshgrid(*axes, indexing='ij')
    x_points = np.column_stack([g.ravel() for g in grids])
    x_weights = np.ones(1)
    for _ in range(len(box)):
        x_weights = np.multiply.outer(x_weights, node_w / 2).ravel()

    x = np.repeat(x_points, rule.size, axis=0)
    xi = np.tile(rule.points, (len(x_points), 1))
    weights = np.repeat(x_weights, rule.size) * np.tile(rule.weights, len(x_points))
    if budget is None or budget >= len(weights):
        return x, xi, weights
    if basis_xi is None:
        raise FitError("budgeted plans need the xi basis to rank rows")

    mask = coefficient_mask(basis_x, basis_xi, p)
    rows, cols = np.nonzero(mask)
    if budget < len(rows):
        raise FitError("simulation budget below the number of coefficients",
                       {'budget': budget, 'coefficients': len(rows)})
    design = eval_basis(basis_x, x)[:, rows] * eval_basis(basis_xi, xi)[:, cols]
    design *= np.sqrt(weights)[:, None]
    chosen = _pivoted_rows(design, budget)
    return x[chosen], xi[chosen], np.ones(len(chosen))


def _pivoted_rows(design, budget):
    remaining = np.arange(len(design))
    chosen = []
    while len(chosen) < budget and len(remaining):
        _, _, pivots = linalg.qr(design[remaining].T, mode='economic', pivoting=True)
        take = pivots[:min(design.shape[1], budget - len(chosen))]
        chosen.extend(remaining[take].tolist())
        remaining = np.delete(remaining, take)
    return np.sort(np.array(chosen))


def holdout_points(x_box, xi_model: TruncatedGaussianMixture, n: int = 1000, seed: int = 0):
    """Uniform design points paired with draws from the variation model."""
    rng = np.random.default_rng(seed)
    x_box = np.asarray(x_box, dtype=float)
    x = x_box[:, 0] + (x_box[:, 1] - x_box[:, 0]) * rng.random((n, len(x_box)))
    return x, sample(xi_model, n, seed + 1)


def validate_surrogate(surrogate: PCESurrogate, truth, x, xi) -> Dict[str, float]:
    """Held-out max and RMS error; truth is a batched truth(x, xi) or its values."""
    expected = truth(x, xi) if callable(truth) else truth
    error = evaluate(surrogate, x, xi) - np.asarray(expected, dtype=float)
    report = {'max_error': float(np.nanmax(np.abs(error))),
              'rms_error': float(np.sqrt(np.nanmean(error ** 2))), 'n': len(error)}
    run_logger.log_event('surrogate_validated', report)
    return report


def shift_surrogate(surrogate: PCESurrogate, constant: float) -> PCESurrogate:
    coeffs = surrogate.coeffs.copy()
    coeffs[0, 0] += constant
    return replace(surrogate, coeffs=coeffs)


def scale_surrogate(surrogate: PCESurrogate, factor: float) -> PCESurrogate:
    return replace(surrogate, coeffs=surrogate.coeffs * factor)


def negate_surrogate(surrogate: PCESurrogate) -> PCESurrogate:
    return scale_surrogate(surrogate, -1.0)


def add_surrogates(first: PCESurrogate, second: PCESurrogate) -> PCESurrogate:
    if first.coeffs.shape != second.coeffs.shape or first.total_order != second.total_order:
        raise ModelError("surrogates must share bases and order to be added")
    return replace(first, coeffs=first.coeffs + second.coeffs,
                   fit_residual=first.fit_residual + second.fit_residual)
