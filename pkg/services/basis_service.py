"""
Orthonormal polynomial bases over monomials.

Each basis function is stored as a row of monomial coefficients in the
standardised coordinate t = (z - shift) / scale, so evaluation is one monomial
matrix product regardless of how the basis was built.
"""

import logging
from dataclasses import dataclass
from typing import Any, Dict

import numpy as np
from numpy.polynomial import legendre
from scipy import linalg

from services.errors import BasisError, ModelError
from services.mixture_service import MomentTable, TruncatedGaussianMixture, raw_moments
from services.monomials import index_orders, monomial_gradient, monomial_matrix, multi_indices

logger = logging.getLogger(__name__)

GRAM_MIN_EIGENVALUE = 1e-10


@dataclass(frozen=True, eq=False)
class PolyBasis:
    dim: int
    max_order: int
    indices: tuple
    coeffs: np.ndarray
    shift: np.ndarray
    scale: np.ndarray

    @property
    def size(self) -> int:
        return len(self.indices)

    def orders(self) -> np.ndarray:
        return index_orders(self.indices)

    def count_up_to(self, order: int) -> int:
        """Number of leading basis functions of total order <= order."""
        return int(np.count_nonzero(self.orders() <= order))

    def to_dict(self) -> Dict[str, Any]:
        return {
            'dim': self.dim,
            'max_order': self.max_order,
            'coeffs': self.coeffs.tolist(),
            'shift': self.shift.tolist(),
            'scale': self.scale.tolist(),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "PolyBasis":
        dim, max_order = int(data['dim']), int(data['max_order'])
        return cls(
            dim=dim,
            max_order=max_order,
            indices=multi_indices(dim, max_order),
            coeffs=np.asarray(data['coeffs'], dtype=float),
            shift=np.asarray(data['shift'], dtype=float),
            scale=np.asarray(data['scale'], dtype=float),
        )


def legendre_basis(dim: int, max_order: int, box) -> PolyBasis:
    """Tensor normalised Legendre basis, orthonormal for the uniform measure on box."""
    box = np.asarray(box, dtype=float).reshape(dim, 2)
    if max_order < 0:
        raise BasisError("max_order must be nonnegative", {'max_order': max_order})
    if np.any(box[:, 0] >= box[:, 1]):
        raise BasisError("design box needs a < b on every axis", {'box': box.tolist()})

    # one_d[n] holds the monomial coefficients of sqrt(2n+1) P_n(t)
    one_d = []
    for n in range(max_order + 1):
        unit = np.zeros(n + 1)
        unit[n] = 1.0
        one_d.append(np.sqrt(2 * n + 1) * legendre.leg2poly(unit))

    indices = multi_indices(dim, max_order)
    position = {g: i for i, g in enumerate(indices)}
    coeffs = np.zeros((len(indices), len(indices)))
    for row, alpha in enumerate(indices):
        for gamma in np.ndindex(*[a + 1 for a in alpha]):
            value = np.prod([one_d[a][g] for a, g in zip(alpha, gamma)])
            if value != 0.0:
                coeffs[row, position[tuple(gamma)]] = value

    return PolyBasis(
        dim=dim,
        max_order=max_order,
        indices=indices,
        coeffs=coeffs,
        shift=box.mean(axis=1),
        scale=(box[:, 1] - box[:, 0]) / 2,
    )


def orthonormal_basis_from_moments(moments: MomentTable, dim: int, max_order: int) -> PolyBasis:
    """Whitened monomial basis from the Cholesky factor of the monomial Gram matrix."""
    if moments.dim != dim:
        raise ModelError("moment table dimension does not match", {'expected': dim, 'got': moments.dim})
    if moments.total_order < 2 * max_order:
        raise BasisError("moments must reach twice the basis order",
                         {'needed': 2 * max_order, 'available': moments.total_order})

    indices = multi_indices(dim, max_order)
    size = len(indices)
    gram = np.empty((size, size))
    for i, gi in enumerate(indices):
        for j in range(i, size):
            value = moments[tuple(a + b for a, b in zip(gi, indices[j]))]
            gram[i, j] = gram[j, i] = value

    diag = np.sqrt(np.diag(gram))
    normalised = gram / np.outer(diag, diag)
    _check_conditioning(normalised, index_orders(indices))

    factor = np.linalg.cholesky(normalised) * diag[:, None]
    coeffs = linalg.solve_triangular(factor, np.eye(size), lower=True)
    return PolyBasis(dim=dim, max_order=max_order, indices=indices, coeffs=coeffs,
                     shift=np.array(moments.shift, dtype=float), scale=np.array(moments.scale, dtype=float))


def _check_conditioning(normalised, orders):
    for order in range(orders.max(initial=0) + 1):
        block = normalised[np.ix_(orders <= order, orders <= order)]
        smallest = float(np.linalg.eigvalsh(block).min())
        if smallest <= GRAM_MIN_EIGENVALUE:
            raise BasisError(f"monomial Gram matrix is ill-conditioned at order {order}",
                             {'order': order, 'min_eigenvalue': smallest})


def mixture_basis(model: TruncatedGaussianMixture, max_order: int) -> PolyBasis:
    """Orthonormal basis for a mixture in coordinates standardised by its mean and std."""
    shift, scale = model.mean(), model.std()
    table = raw_moments(model, 2 * max_order, shift=shift, scale=scale)
    basis = orthonormal_basis_from_moments(table, model.dim, max_order)
    logger.debug("mixture basis dim=%d order=%d size=%d", model.dim, max_order, basis.size)
    return basis


def _standardise(basis: PolyBasis, point) -> np.ndarray:
    point = np.asarray(point, dtype=float)
    if point.shape[-1] != basis.dim:
        raise ModelError("point dimension does not match the basis",
                         {'expected': basis.dim, 'got': int(point.shape[-1])})
    return (np.atleast_2d(point) - basis.shift) / basis.scale


def eval_basis(basis: PolyBasis, point) -> np.ndarray:
    """Basis values; a vector for one point, (N, size) for a batch."""
    values = monomial_matrix(_standardise(basis, point), basis.indices) @ basis.coeffs.T
    return values[0] if np.ndim(point) == 1 else values


def eval_basis_gradient(basis: PolyBasis, point) -> np.ndarray:
    """Gradients in raw coordinates; (size, dim) for one point, (N, size, dim) for a batch."""
    raw = monomial_gradient(_standardise(basis, point), basis.indices)
    grad = np.einsum('im,nmj->nij', basis.coeffs, raw) / basis.scale
    return grad[0] if np.ndim(point) == 1 else grad
