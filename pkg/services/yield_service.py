"""Monte-Carlo yield of a design and per-constraint gaps to the required success rate."""

from dataclasses import dataclass, field
from typing import Any, Dict, List

import numpy as np

from monitoring import monitor_performance, run_logger
from services.errors import ModelError
from services.mixture_service import sample
from services.optimizer_service import ChanceProblem
from services.surrogate_service import evaluate

MIN_SAMPLES = 1000


@dataclass
class ConstraintYield:
    name: str
    success_rate: float
    gap: float


@dataclass
class YieldReport:
    yield_: float
    per_constraint: List[ConstraintYield]
    n_samples: int
    seed: int
    evaluated_on: str
    objective_samples: np.ndarray = field(default=None, repr=False)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'yield': self.yield_,
            'per_constraint': [vars(c) for c in self.per_constraint],
            'n_samples': self.n_samples,
            'seed': self.seed,
            'evaluated_on': self.evaluated_on,
        }


def gap(success_rate: float, risk: float) -> float:
    return (success_rate - (1.0 - risk)) / (1.0 - risk)


@monitor_performance("yield.estimate")
def estimate_yield(problem: ChanceProblem, x, n: int, seed: int, on: str = 'surrogate') -> YieldReport:
    if n < MIN_SAMPLES:
        raise ModelError("yield estimation needs at least 1000 samples", {'n': n})
    if on not in ('surrogate', 'truth'):
        raise ModelError("yield evaluator must be surrogate or truth", {'on': on})
    if on == 'truth' and problem.truth is None:
        raise ModelError("problem has no truth evaluator")

    x = np.asarray(x, dtype=float)
    if x.shape != (problem.dim,):
        raise ModelError("design does not match the design box", {'expected': problem.dim, 'got': list(x.shape)})

    xi = sample(problem.xi_model, n, seed)
    x_rows = np.broadcast_to(x, (n, problem.dim))
    truth = problem.truth(x_rows, xi) if on == 'truth' else None

    passes = []
    rates = []
    for c in problem.constraints:
        values = truth[c.metric] if truth is not None else evaluate(c.surrogate, x_rows, xi)
        ok = values <= c.bound if c.sense == 'upper' else values >= c.bound
        passes.append(ok)
        rate = float(np.mean(ok))
        rates.append(ConstraintYield(c.name, rate, gap(rate, c.risk)))
    total = float(np.mean(np.all(passes, axis=0))) if passes else 1.0

    if truth is not None and problem.objective_metric:
        objective = truth[problem.objective_metric]
    else:
        objective = evaluate(problem.objective, x_rows, xi)

    report = YieldReport(total, rates, n, seed, on, objective_samples=np.asarray(objective))
    run_logger.log_event('yield_estimated', report.to_dict())
    return report
