"""
Truncated Gaussian mixture uncertainty models.

The density is a weighted sum of box-truncated correlated normals, each
renormalised by the Gaussian mass of its box. Box masses and raw moments are
integrated with tensor Gauss-Legendre rules whose node count is doubled until
two successive estimates agree.
"""

import logging
from dataclasses import dataclass
from functools import cached_property
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy import stats

from monitoring import monitor_performance
from services.errors import ModelError, SamplingError
from services.monomials import monomial_matrix, multi_indices

logger = logging.getLogger(__name__)

# Boxes are clipped to mean +/- SIGMA_CLIP standard deviations before integration
SIGMA_CLIP = 10.0
NODES_START = 16
NODES_MAX_1D = 512
NODE_BUDGET = 2 ** 21
MOMENT_RTOL = 1e-12
CHUNK = 1 << 15

REJECTION_CAP = 1_000_000
MIN_ACCEPTANCE = 1e-4


@dataclass(frozen=True, eq=False)
class GaussianComponent:
    weight: float
    mean: np.ndarray
    cov: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    @property
    def sigma(self) -> np.ndarray:
        return np.sqrt(np.diag(self.cov))

    def integration_box(self):
        lo = np.maximum(self.lower, self.mean - SIGMA_CLIP * self.sigma)
        hi = np.minimum(self.upper, self.mean + SIGMA_CLIP * self.sigma)
        return lo, hi

    def contains(self, points: np.ndarray) -> np.ndarray:
        return np.all((points >= self.lower) & (points <= self.upper), axis=-1)


@dataclass(frozen=True, eq=False)
class MomentTable:
    """E[t ** gamma] for t = (xi - shift) / scale and every listed gamma."""
    indices: tuple
    values: np.ndarray
    shift: np.ndarray
    scale: np.ndarray

    @property
    def dim(self) -> int:
        return len(self.shift)

    @property
    def total_order(self) -> int:
        return max(sum(g) for g in self.indices)

    def __getitem__(self, gamma) -> float:
        return float(self.values[self._position[tuple(gamma)]])

    @cached_property
    def _position(self) -> Dict[tuple, int]:
        return {g: i for i, g in enumerate(self.indices)}


class TruncatedGaussianMixture:
    """mu(xi) = sum_k w_k TN(mean_k, cov_k, lower_k, upper_k)."""

    def __init__(self, components: Sequence[GaussianComponent]):
        if not components:
            raise ModelError("mixture needs at least one component")
        self.components = tuple(_frozen_component(c) for c in components)
        self.dim = len(self.components[0].mean)
        self._validate()
        self._normals = tuple(stats.multivariate_normal(mean=c.mean, cov=c.cov) for c in self.components)
        self._factors = tuple(np.linalg.cholesky(c.cov) for c in self.components)
        self.masses = tuple(
            _refined_integral(c, normal, ((0,) * self.dim,), np.zeros(self.dim), np.ones(self.dim))[0]
            for c, normal in zip(self.components, self._normals)
        )

    def _validate(self):
        weights = np.array([c.weight for c in self.components])
        if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-12:
            raise ModelError("component weights must be nonnegative and sum to 1",
                             {'weights': weights.tolist()})
        for k, c in enumerate(self.components):
            shapes = (c.mean.shape, c.lower.shape, c.upper.shape)
            if any(s != (self.dim,) for s in shapes) or c.cov.shape != (self.dim, self.dim):
                raise ModelError("component dimensions disagree", {'component': k, 'dim': self.dim})
            if not np.allclose(c.cov, c.cov.T, rtol=0, atol=1e-12 * np.abs(c.cov).max()):
                raise ModelError("covariance must be symmetric", {'component': k})
            eigenvalues = np.linalg.eigvalsh(c.cov)
            if eigenvalues.min() <= 0:
                raise ModelError("covariance must be positive definite",
                                 {'component': k, 'min_eigenvalue': float(eigenvalues.min())})
            if np.any(c.lower >= c.upper):
                raise ModelError("truncation box needs lower < upper", {'component': k})
            lo, hi = c.integration_box()
            if np.any(lo >= hi):
                raise ModelError("truncation box carries no Gaussian mass", {'component': k})

    @property
    def weights(self) -> np.ndarray:
        return np.array([c.weight for c in self.components])

    def bounding_box(self) -> np.ndarray:
        """Per-coordinate [a, b] enclosing every component box."""
        lower = np.min([c.lower for c in self.components], axis=0)
        upper = np.max([c.upper for c in self.components], axis=0)
        return np.column_stack([lower, upper])

    def contains(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(points)
        return np.any([c.contains(points) for c in self.components], axis=0)

    def pdf(self, point: np.ndarray) -> np.ndarray:
        return pdf(self, point)

    def sample(self, n: int, seed: int) -> np.ndarray:
        return sample(self, n, seed)

    def mean(self) -> np.ndarray:
        table = raw_moments(self, 1)
        return np.array([table[g] for g in table.indices[1:]])

    def std(self) -> np.ndarray:
        table = raw_moments(self, 2)
        mean = self.mean()
        second = np.array([table[tuple(2 * np.eye(self.dim, dtype=int)[j])] for j in range(self.dim)])
        return np.sqrt(np.maximum(second - mean ** 2, 0.0))

    def to_dict(self) -> Dict[str, Any]:
        return {
            'components': [
                {
                    'weight': c.weight,
                    'mean': c.mean.tolist(),
                    'cov': c.cov.tolist(),
                    'lower': c.lower.tolist(),
                    'upper': c.upper.tolist(),
                }
                for c in self.components
            ]
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "TruncatedGaussianMixture":
        try:
            components = [
                GaussianComponent(
                    weight=float(c['weight']),
                    mean=np.asarray(c['mean'], dtype=float),
                    cov=np.asarray(c['cov'], dtype=float),
                    lower=np.asarray(c['lower'], dtype=float),
                    upper=np.asarray(c['upper'], dtype=float),
                )
                for c in data['components']
            ]
        except (KeyError, TypeError, ValueError) as e:
            raise ModelError(f"malformed mixture description: {e}")
        return cls(components)


def mirrored_mixture(mean, cov, lower_1, upper_1) -> TruncatedGaussianMixture:
    """Equal-weight pair TN(mean, cov, lower_1, upper_1) + TN(-mean, cov, -upper_1, -lower_1)."""
    mean = np.asarray(mean, dtype=float)
    cov = np.asarray(cov, dtype=float)
    lower_1 = np.asarray(lower_1, dtype=float)
    upper_1 = np.asarray(upper_1, dtype=float)
    return TruncatedGaussianMixture([
        GaussianComponent(0.5, mean, cov, lower_1, upper_1),
        GaussianComponent(0.5, -mean, cov, -upper_1, -lower_1),
    ])


def pdf(model: TruncatedGaussianMixture, point: np.ndarray) -> np.ndarray:
    """Mixture density; scalar for one point, vector for a (N, d) array."""
    point = np.asarray(point, dtype=float)
    single = point.ndim == 1
    points = np.atleast_2d(point)
    if points.shape[1] != model.dim:
        raise ModelError("point dimension does not match the model",
                         {'expected': model.dim, 'got': int(points.shape[1])})
    density = np.zeros(points.shape[0])
    for c, normal, mass in zip(model.components, model._normals, model.masses):
        inside = c.contains(points)
        if inside.any():
            density[inside] += c.weight * np.atleast_1d(normal.pdf(points[inside])) / mass
    return float(density[0]) if single else density


def sample(model: TruncatedGaussianMixture, n: int, seed: int) -> np.ndarray:
    """i.i.d. draws: pick a component by weight, rejection-sample inside its box."""
    if n < 1:
        raise SamplingError("sample size must be at least 1", {'n': n})
    rng = np.random.default_rng(seed)
    labels = rng.choice(len(model.components), size=n, p=model.weights)
    out = np.empty((n, model.dim))
    for k, (c, factor) in enumerate(zip(model.components, model._factors)):
        slots = np.flatnonzero(labels == k)
        if slots.size:
            out[slots] = _rejection_sample(c, factor, slots.size, rng, k)
    return out


def _rejection_sample(component, factor, need, rng, k):
    accepted_points: List[np.ndarray] = []
    accepted = drawn = 0
    while accepted < need:
        rate = max(accepted / drawn, MIN_ACCEPTANCE) if drawn else 0.5
        batch = int(min(max(1.2 * (need - accepted) / rate + 16, 64), REJECTION_CAP))
        draws = component.mean + rng.standard_normal((batch, len(component.mean))) @ factor.T
        inside = draws[component.contains(draws)]
        accepted_points.append(inside)
        accepted += len(inside)
        drawn += batch
        rejections = drawn - accepted
        if rejections > REJECTION_CAP and accepted / drawn < MIN_ACCEPTANCE:
            raise SamplingError("acceptance rate too low, truncation box is degenerate",
                                {'component': k, 'acceptance': accepted / drawn, 'drawn': drawn})
    return np.concatenate(accepted_points)[:need]


@monitor_performance("mixture.raw_moments")
def raw_moments(model: TruncatedGaussianMixture, total_order: int,
                shift: Optional[np.ndarray] = None, scale: Optional[np.ndarray] = None) -> MomentTable:
    """E[t ** gamma] for all |gamma| <= total_order with t = (xi - shift) / scale.

    The default shift 0 and scale 1 give the raw moments E[xi ** gamma].
    """
    if total_order < 0:
        raise ModelError("total order must be nonnegative", {'total_order': total_order})
    shift = np.zeros(model.dim) if shift is None else np.asarray(shift, dtype=float)
    scale = np.ones(model.dim) if scale is None else np.asarray(scale, dtype=float)
    indices = multi_indices(model.dim, total_order)
    values = np.zeros(len(indices))
    for c, normal in zip(model.components, model._normals):
        _, moments = _refined_integral(c, normal, indices, shift, scale)
        values += c.weight * moments
    return MomentTable(indices=indices, values=values, shift=shift, scale=scale)


def _refined_integral(component, normal, indices, shift, scale):
    """Box mass and normalised moments, refined until successive node counts agree."""
    dim = len(component.mean)
    nodes = NODES_START
    mass, moments = _integrate(component, normal, indices, shift, scale, nodes)
    while True:
        following = min(2 * nodes, NODES_MAX_1D)
        if following ** dim > NODE_BUDGET:
            following = min(int(np.floor(NODE_BUDGET ** (1.0 / dim))), NODES_MAX_1D)
        if following <= nodes:
            logger.warning("moment refinement stopped by node budget at %d nodes per axis", nodes)
            return mass, moments
        next_mass, next_moments = _integrate(component, normal, indices, shift, scale, following)
        tolerance = MOMENT_RTOL * max(1.0, np.abs(next_moments).max())
        if (abs(next_mass - mass) <= MOMENT_RTOL * next_mass
                and np.abs(next_moments - moments).max() <= tolerance):
            return next_mass, next_moments
        nodes, mass, moments = following, next_mass, next_moments


def _integrate(component, normal, indices, shift, scale, nodes):
    lo, hi = component.integration_box()
    points, weights = tensor_gauss_legendre(lo, hi, nodes)
    density = np.atleast_1d(normal.pdf(points)) * weights
    mass = density.sum()
    moments = np.zeros(len(indices))
    for start in range(0, len(points), CHUNK):
        block = slice(start, start + CHUNK)
        t = (points[block] - shift) / scale
        moments += density[block] @ monomial_matrix(t, indices)
    return mass, moments / mass


def tensor_gauss_legendre(lower: np.ndarray, upper: np.ndarray, nodes: int):
    """Tensor Gauss-Legendre points and weights on the box [lower, upper]."""
    x, w = leggauss(nodes)
    half = (np.asarray(upper) - np.asarray(lower)) / 2
    mid = (np.asarray(upper) + np.asarray(lower)) / 2
    axes = [mid[j] + half[j] * x for j in range(len(half))]
    axis_weights = [half[j] * w for j in range(len(half))]
    grids = np.meshgrid(*axes, indexing='ij')
    points = np.column_stack([g.ravel() for g in grids])
    weights = axis_weights[0]
    for aw in axis_weights[1:]:
        weights = np.multiply.outer(weights, aw)
    return points, np.ravel(weights)


def _frozen_component(c: GaussianComponent) -> GaussianComponent:
    arrays = {}
    for name in ('mean', 'cov', 'lower', 'upper'):
        value = np.array(getattr(c, name), dtype=float)
        value.setflags(write=False)
        arrays[name] = value
    return GaussianComponent(weight=float(c.weight), **arrays)
