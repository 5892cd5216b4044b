"""
Benchmark problems: the synthetic polynomial problem and the two photonic
filters, each with its variation model and batched truth metrics.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional

import numpy as np

from services.errors import ConfigError, SpectrumError
from services.mixture_service import TruncatedGaussianMixture, mirrored_mixture
from services.optimizer_service import ChanceConstraint, ChanceProblem
from services.photonics_service import mzi_metrics, mzi_spectrum, ring_metrics, ring_spectrum
from services.surrogate_service import PCESurrogate

logger = logging.getLogger(__name__)


@dataclass
class ConstraintSpec:
    metric: str
    bound: float
    sense: str = 'upper'


@dataclass
class BenchmarkProblem:
    name: str
    design_box: np.ndarray
    xi_model: TruncatedGaussianMixture
    objective_metric: str
    constraints: List[ConstraintSpec]
    # batched metrics(x, xi) -> {metric: values}; one call per row is one simulation
    metrics: Callable[[np.ndarray, np.ndarray], Dict[str, np.ndarray]]
    initial_design: np.ndarray
    simulation_budget: Optional[int] = None
    spectrum: Optional[Callable] = None
    simulations: int = field(default=0)

    @property
    def dim(self) -> int:
        return len(self.design_box)

    def evaluate(self, x, xi) -> Dict[str, np.ndarray]:
        """Truth metrics at paired rows, counted as simulator calls."""
        x, xi = np.atleast_2d(x), np.atleast_2d(xi)
        self.simulations += len(x)
        return self.metrics(x, xi)

    def truth(self, metric: str) -> Callable:
        return lambda x, xi: self.metrics(np.atleast_2d(x), np.atleast_2d(xi))[metric]


def build_chance_problem(bench: BenchmarkProblem, surrogates: Dict[str, PCESurrogate],
                         risks) -> ChanceProblem:
    """Chance problem over fitted surrogates with one risk level per constraint."""
    risks = np.broadcast_to(np.asarray(risks, dtype=float), (len(bench.constraints),))
    constraints = [
        ChanceConstraint(surrogates[limit.metric], limit.bound, float(risk), limit.sense, limit.metric, limit.metric)
        for limit, risk in zip(bench.constraints, risks)
    ]
    return ChanceProblem(surrogates[bench.objective_metric], constraints, bench.design_box, bench.xi_model,
                         bench.name, bench.metrics, bench.objective_metric)


# Synthetic problem

def synthetic_mixture() -> TruncatedGaussianMixture:
    return mirrored_mixture(
        mean=[0.1, -0.1],
        cov=1e-2 * np.array([[1.0, -0.75], [-0.75, 1.0]]),
        lower_1=[-0.2, -0.4],
        upper_1=[0.4, 0.2],
    )


def synthetic_metrics(x, xi) -> Dict[str, np.ndarray]:
    s = np.atleast_2d(x) + np.atleast_2d(xi)
    return {
        'f': 3 * s[:, 0] - s[:, 1],
        'y1': s[:, 0] ** 2 + s[:, 1],
        'y2': s[:, 0] ** 2 - s[:, 1],
    }


def synthetic_problem() -> BenchmarkProblem:
    return BenchmarkProblem(
        name='synthetic',
        design_box=np.array([[-1.0, 1.0], [-1.0, 1.0]]),
        xi_model=synthetic_mixture(),
        objective_metric='f',
        constraints=[ConstraintSpec('y1', 1.0), ConstraintSpec('y2', 1.0)],
        metrics=synthetic_metrics,
        initial_design=np.zeros(2),
    )


# Photonic problems

def _correlation_3():
    return np.array([[1.0, 0.4, 0.1], [0.4, 1.0, 0.4], [0.1, 0.4, 1.0]])


def _correlation_4():
    return np.array([
        [1.0, 0.4, 0.1, 0.4],
        [0.4, 1.0, 0.4, 0.1],
        [0.1, 0.4, 1.0, 0.4],
        [0.4, 0.1, 0.4, 1.0],
    ])


def mzi_mixture() -> TruncatedGaussianMixture:
    return mirrored_mixture(mean=[3.0] * 3, cov=9.0 * _correlation_3(), lower_1=[-6.0] * 3, upper_1=[12.0] * 3)


def microring_mixture() -> TruncatedGaussianMixture:
    return mirrored_mixture(mean=[0.03] * 4, cov=0.03 ** 2 * _correlation_4(),
                            lower_1=[-0.06] * 4, upper_1=[0.12] * 4)


def _spectral_metrics(spectrum_fn, metrics_fn, names):
    def metrics(x, xi):
        out = {name: np.empty(len(x)) for name in names}
        for row, (design, variation) in enumerate(zip(x, xi)):
            try:
                values = metrics_fn(spectrum_fn(design, variation))
            except SpectrumError as e:
                logger.warning("spectral metric undefined at x=%s xi=%s: %s", design, variation, e.message)
                values = {name: np.nan for name in names}
            for name in names:
                out[name][row] = values[name]
        return out
    return metrics


def mzi_problem() -> BenchmarkProblem:
    return BenchmarkProblem(
        name='mzi',
        design_box=np.array([[100.0, 300.0]] * 3),
        xi_model=mzi_mixture(),
        objective_metric='BW',
        constraints=[ConstraintSpec('XT', -6.6), ConstraintSpec('alpha', 1.6)],
        metrics=_spectral_metrics(mzi_spectrum, mzi_metrics, ('BW', 'XT', 'alpha')),
        initial_design=np.array([150.0, 150.0, 150.0]),
        simulation_budget=35,
        spectrum=mzi_spectrum,
    )


def microring_problem() -> BenchmarkProblem:
    return BenchmarkProblem(
        name='microring',
        design_box=np.array([[0.3, 0.6]] * 4),
        xi_model=microring_mixture(),
        objective_metric='BW',
        constraints=[ConstraintSpec('RE', 20.0, 'lower'), ConstraintSpec('sigma_pass', 0.65)],
        metrics=_spectral_metrics(ring_spectrum, ring_metrics, ('BW', 'RE', 'sigma_pass')),
        initial_design=np.array([0.45] * 4),
        simulation_budget=65,
        spectrum=ring_spectrum,
    )


BENCHMARKS = {
    'synthetic': synthetic_problem,
    'mzi': mzi_problem,
    'microring': microring_problem,
}


def get_benchmark(name: str) -> BenchmarkProblem:
    try:
        return BENCHMARKS[name]()
    except KeyError:
        raise ConfigError(f"unknown benchmark '{name}'", {'known': sorted(BENCHMARKS)})
