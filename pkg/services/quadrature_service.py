"""
Optimization-based quadrature for truncated Gaussian mixtures.

Candidates drawn from the measure are weighted by nonnegative least squares,
pruned to a basic solution, then points and weights are refined jointly by
Gauss-Newton until every basis function of order <= 2q integrates exactly.
"""

import json
import logging
from dataclasses import dataclass
from typing import Any, Dict, Optional

import numpy as np
from scipy import optimize

from monitoring import monitor_performance, run_logger
from services import history_service
from services.basis_service import PolyBasis, eval_basis, eval_basis_gradient
from services.errors import QuadratureError
from services.mixture_service import TruncatedGaussianMixture, raw_moments, sample
from services.monomials import count_indices

logger = logging.getLogger(__name__)

RESIDUAL_TOL = 1e-12
CANDIDATES_PER_TARGET = 500
OUTER_ITERATIONS = 20
GAUSS_NEWTON_STEPS = 25
PRUNE_RTOL = 1e-12
ORTHONORMAL_ATOL = 1e-8


@dataclass(frozen=True, eq=False)
class QuadratureRule:
    points: np.ndarray
    weights: np.ndarray
    exactness_order: int
    residual: float

    @property
    def size(self) -> int:
        return len(self.weights)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'points': self.points.tolist(),
            'weights': self.weights.tolist(),
            'exactness_order': self.exactness_order,
            'residual': self.residual,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "QuadratureRule":
        return cls(
            points=np.asarray(data['points'], dtype=float),
            weights=np.asarray(data['weights'], dtype=float),
            exactness_order=int(data['exactness_order']),
            residual=float(data['residual']),
        )


def target_moments(basis: PolyBasis, order: int) -> np.ndarray:
    """E[Psi_beta] for |beta| <= order, which is delta_{beta 0} for an orthonormal basis."""
    target = np.zeros(basis.count_up_to(order))
    target[0] = 1.0
    return target


def rule_residual(rule: QuadratureRule, basis: PolyBasis, target_moments: np.ndarray) -> float:
    """Sum of squared integration errors over the first len(target_moments) basis functions."""
    size = len(target_moments)
    values = eval_basis(basis, rule.points)[:, :size]
    error = np.asarray(target_moments) - values.T @ rule.weights
    return float(error @ error)


@monitor_performance("quadrature.optimize")
def optimize_quadrature(basis: PolyBasis, model: TruncatedGaussianMixture, q: int,
                        n_candidates: Optional[int] = None, seed: int = 0) -> QuadratureRule:
    order = 2 * q
    if basis.max_order < order:
        raise QuadratureError("basis order must reach 2q", {'basis_order': basis.max_order, 'needed': order})
    size = basis.count_up_to(order)
    _assert_orthonormal_means(basis, model, order, size)

    target = target_moments(basis, order)
    n_candidates = n_candidates or CANDIDATES_PER_TARGET * size
    candidates = sample(model, n_candidates, seed)

    weights, _ = optimize.nnls(eval_basis(basis, candidates)[:, :size].T, target)
    keep = _kept(weights)
    points, weights = candidates[keep], weights[keep]
    residual = _residual(basis, points, weights, target)
    logger.debug("nnls kept %d of %d candidates, residual %.3e", len(weights), n_candidates, residual)

    outer = 0
    while residual > RESIDUAL_TOL and outer < OUTER_ITERATIONS:
        outer += 1
        points, weights = _gauss_newton(basis, model, points, weights, target)
        # reproject the weights on the refined points and drop the zeros
        weights, _ = optimize.nnls(eval_basis(basis, points)[:, :size].T, target)
        keep = _kept(weights)
        points, weights = points[keep], weights[keep]
        residual = _residual(basis, points, weights, target)
        logger.debug("refinement round %d: M=%d residual %.3e", outer, len(weights), residual)

    rule = QuadratureRule(points=points, weights=weights, exactness_order=order, residual=0.0)
    rule = QuadratureRule(points=points, weights=weights, exactness_order=order,
                          residual=rule_residual(rule, basis, target))
    if rule.residual > RESIDUAL_TOL:
        raise QuadratureError("quadrature residual above tolerance",
                              {'residual': rule.residual, 'points': rule.size, 'rounds': outer})

    run_logger.log_event('quadrature_built', {
        'order': order, 'points': rule.size, 'residual': rule.residual,
        'candidates': n_candidates, 'rounds': outer,
    })
    return rule


def _assert_orthonormal_means(basis, model, order, size):
    table = raw_moments(model, order, shift=basis.shift, scale=basis.scale)
    means = basis.coeffs[:size, :size] @ table.values[:size]
    expected = np.zeros(size)
    expected[0] = 1.0
    if np.abs(means - expected).max() > ORTHONORMAL_ATOL:
        raise QuadratureError("basis is not orthonormal for this measure",
                              {'max_deviation': float(np.abs(means - expected).max())})


def _kept(weights):
    return weights > PRUNE_RTOL * weights.max()


def _residual(basis, points, weights, target):
    error = target - eval_basis(basis, points)[:, :len(target)].T @ weights
    return float(error @ error)


def _gauss_newton(basis, model, points, weights, target):
    size = len(target)
    count, dim = points.shape
    residual = _residual(basis, points, weights, target)
    for _ in range(GAUSS_NEWTON_STEPS):
        values = eval_basis(basis, points)[:, :size]
        grads = eval_basis_gradient(basis, points)[:, :size, :]
        error = values.T @ weights - target

        jac_w = values.T
        jac_x = (grads * weights[:, None, None]).transpose(1, 0, 2).reshape(size, count * dim)
        step = np.linalg.lstsq(np.hstack([jac_w, jac_x]), -error, rcond=None)[0]

        length = 1.0
        while length > 1e-6:
            trial_w = np.maximum(weights + length * step[:count], 0.0)
            trial_x = project_to_support(model, points + length * step[count:].reshape(count, dim))
            trial = _residual(basis, trial_x, trial_w, target)
            if trial < residual:
                break
            length /= 2
        else:
            break
        points, weights, residual = trial_x, trial_w, trial
        if residual <= RESIDUAL_TOL ** 2:
            break
    return points, weights


def project_to_support(model: TruncatedGaussianMixture, points: np.ndarray) -> np.ndarray:
    """Clip each point into the nearest component box."""
    best = None
    best_distance = None
    for c in model.components:
        clipped = np.clip(points, c.lower, c.upper)
        distance = np.sum((clipped - points) ** 2, axis=1)
        if best is None:
            best, best_distance = clipped, distance
        else:
            closer = distance < best_distance
            best[closer] = clipped[closer]
            best_distance = np.minimum(best_distance, distance)
    return best


def cached_quadrature(basis: PolyBasis, model: TruncatedGaussianMixture, q: int,
                      n_candidates: Optional[int] = None, seed: int = 0,
                      use_cache: bool = True) -> QuadratureRule:
    """optimize_quadrature with the result kept in the quadrature cache."""
    key = json.dumps({
        'model': model.to_dict(), 'q': q, 'basis_order': basis.max_order,
        'candidates': n_candidates or CANDIDATES_PER_TARGET * count_indices(model.dim, 2 * q),
        'seed': seed,
    }, sort_keys=True)
    if use_cache:
        cached = history_service.get_entry('quadrature', key)
        if cached is not None:
            return QuadratureRule.from_dict(cached)
    rule = optimize_quadrature(basis, model, q, n_candidates, seed)
    if use_cache:
        history_service.save_entry('quadrature', key, rule.to_dict())
    return rule
