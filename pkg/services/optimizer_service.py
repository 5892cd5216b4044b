"""
Deterministic reformulations of chance-constrained design problems and
their solvers.

Both reformulations expose the same interface to the multi-start
augmented-Lagrangian solver and to the grid oracle: the mean objective, a
vector of scaled constraints g(x) <= 0 with gradients, and batched
evaluation for grids.
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np
from scipy import optimize
from scipy.stats import qmc

from monitoring import monitor_performance, run_logger
from services.basis_service import eval_basis, eval_basis_gradient
from services.errors import InfeasibleProblemError, ModelError, ScalingError
from services.kinship_service import KinshipPoly, eval_kinship, eval_kinship_derivative
from services.mixture_service import TruncatedGaussianMixture
from services.quadrature_service import QuadratureRule
from services.surrogate_service import (
    JointPolynomial, PCESurrogate, mean_over_xi, negate_surrogate, scale_surrogate, shift_surrogate,
    variance_over_xi, xi_response,
)

logger = logging.getLogger(__name__)

FEASIBILITY_TOL = 1e-6
ZERO_MINIMUM = 1e-12
MINIMUM_PERTURBATION = 1e-9
CLAMP_TOL = 1e-6

GRID_PER_AXIS = 32
SEED_BUDGET = 2 ** 20
POLISH_SEEDS = 16
CHUNK = 1 << 15

PENALTY_START = 10.0
PENALTY_GROWTH = 10.0
VIOLATION_DECREASE = 0.25
OUTER_ITERATIONS = 40
DEFAULT_STARTS = 64
TIE_RTOL = 1e-9


@dataclass
class ChanceConstraint:
    surrogate: PCESurrogate
    bound: float
    risk: float
    sense: str = 'upper'
    name: str = ''
    metric: Optional[str] = None


@dataclass
class ChanceProblem:
    objective: PCESurrogate
    constraints: List[ChanceConstraint]
    design_box: np.ndarray
    xi_model: TruncatedGaussianMixture
    name: str = ''
    # batched truth(x, xi) -> {metric: values}, used for truth-evaluated yield
    truth: Optional[Callable] = None
    objective_metric: Optional[str] = None

    def __post_init__(self):
        self.design_box = np.asarray(self.design_box, dtype=float)
        for c in self.constraints:
            if not 0.0 < c.risk < 1.0:
                raise ModelError("risk levels must lie in (0, 1)", {'constraint': c.name, 'risk': c.risk})
            if c.sense not in ('upper', 'lower'):
                raise ModelError("constraint sense must be upper or lower",
                                 {'constraint': c.name, 'sense': c.sense})

    @property
    def dim(self) -> int:
        return len(self.design_box)

    def upper_constraints(self) -> List[ChanceConstraint]:
        """Lower-sense constraints rewritten as -y <= -u."""
        out = []
        for c in self.constraints:
            if c.sense == 'lower':
                out.append(ChanceConstraint(negate_surrogate(c.surrogate), -c.bound, c.risk, 'upper', c.name, c.metric))
            else:
                out.append(c)
        return out

    def with_risks(self, risks: Sequence[float]) -> "ChanceProblem":
        constraints = [ChanceConstraint(c.surrogate, c.bound, r, c.sense, c.name, c.metric)
                       for c, r in zip(self.constraints, risks)]
        return ChanceProblem(self.objective, constraints, self.design_box, self.xi_model,
                             self.name, self.truth, self.objective_metric)


@dataclass
class ConstraintReport:
    name: str
    risk_level: float
    risk_bound: float
    active: bool


@dataclass
class OptimizationResult:
    x_star: np.ndarray
    objective_value: float
    per_constraint: List[ConstraintReport]
    method: str
    solver_log: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'method': self.method,
            'x_star': self.x_star.tolist(),
            'objective_value': self.objective_value,
            'per_constraint': [vars(c) for c in self.per_constraint],
            'solver_log': self.solver_log,
        }


@dataclass
class ScaledMetric:
    surrogate: PCESurrogate
    minimum: float
    argmin: np.ndarray


# Global minimisation

def _box_points(boxes, unit):
    return boxes[:, 0] + (boxes[:, 1] - boxes[:, 0]) * unit


@monitor_performance("optimizer.global_min")
def global_min_poly(poly, boxes, seed: int = 0):
    """Minimum of a batched polynomial over a box: grid or Sobol seeds, then L-BFGS-B polish.

    poly must be callable on (N, D) arrays and expose gradient(points).
    Returns (value, argmin).
    """
    boxes = np.asarray(boxes, dtype=float)
    dim = len(boxes)
    if GRID_PER_AXIS ** dim <= SEED_BUDGET:
        axes = np.linspace(0.0, 1.0, GRID_PER_AXIS)
        grids = np.meshgrid(*([axes] * dim), indexing='ij')
        unit = np.column_stack([g.ravel() for g in grids])
    else:
        unit = qmc.Sobol(dim, scramble=True, seed=seed).random_base2(int(np.log2(SEED_BUDGET)))
    seeds = _box_points(boxes, unit)
    values = np.concatenate([np.atleast_1d(poly(seeds[i:i + CHUNK])) for i in range(0, len(seeds), CHUNK)])
    best = np.argsort(values, kind='stable')[:POLISH_SEEDS]

    best_value, best_point = float(values[best[0]]), seeds[best[0]]
    bounds = [tuple(b) for b in boxes]
    for index in best:
        result = optimize.minimize(
            lambda z: float(np.atleast_1d(poly(z[None, :]))[0]), seeds[index],
            jac=lambda z: np.atleast_2d(poly.gradient(z[None, :]))[0],
            method='L-BFGS-B', bounds=bounds,
        )
        point = np.clip(result.x, boxes[:, 0], boxes[:, 1])
        value = float(np.atleast_1d(poly(point[None, :]))[0])
        if value < best_value:
            best_value, best_point = value, point
    return best_value, best_point


def scale_metric(upsilon: PCESurrogate, design_box, xi_box) -> ScaledMetric:
    """Rescale upsilon = y - u so that its minimum over X x Xi is exactly -1."""
    boxes = np.vstack([np.asarray(design_box, dtype=float), np.asarray(xi_box, dtype=float)])
    minimum, argmin = global_min_poly(JointPolynomial(upsilon), boxes)
    if abs(minimum) < ZERO_MINIMUM:
        minimum -= MINIMUM_PERTURBATION
    elif minimum >= ZERO_MINIMUM:
        raise InfeasibleProblemError("constraint metric is positive everywhere, no design can meet it",
                                     {'minimum': minimum, 'argmin': argmin.tolist()})
    return ScaledMetric(scale_surrogate(upsilon, -1.0 / minimum), minimum, argmin)


def scale_constraints(problem: ChanceProblem) -> List[ScaledMetric]:
    xi_box = problem.xi_model.bounding_box()
    scaled = []
    for c in problem.upper_constraints():
        metric = scale_metric(shift_surrogate(c.surrogate, -c.bound), problem.design_box, xi_box)
        run_logger.log_solver('scaling', {'constraint': c.name, 'minimum': metric.minimum,
                                          'argmin': metric.argmin})
        scaled.append(metric)
    return scaled


# Risk integral

class RiskIntegral:
    """V(x) = sum_l w_l kappa(upsilon(x, xi_l)) with upsilon already scaled."""

    def __init__(self, kinship: KinshipPoly, upsilon_scaled: PCESurrogate, rule: QuadratureRule):
        self.kinship = kinship
        self.basis_x = upsilon_scaled.basis_x
        self.weights = rule.weights
        self.response = xi_response(upsilon_scaled, rule.points)

    def _scaled_values(self, phi):
        values = phi @ self.response.T
        if values.min() < -1.0 - CLAMP_TOL:
            raise ScalingError("scaled metric fell below -1 on the quadrature points",
                               {'min_value': float(values.min())})
        return np.maximum(values, -1.0)

    def value(self, x) -> float:
        values = self._scaled_values(eval_basis(self.basis_x, x))
        return float(self.weights @ eval_kinship(self.kinship, values))

    def gradient(self, x) -> np.ndarray:
        values = self._scaled_values(eval_basis(self.basis_x, x))
        slopes = self.weights * eval_kinship_derivative(self.kinship, values)
        return (slopes @ self.response) @ eval_basis_gradient(self.basis_x, x)

    def batch(self, x) -> np.ndarray:
        values = self._scaled_values(eval_basis(self.basis_x, x))
        return eval_kinship(self.kinship, values) @ self.weights


def risk_integral(k: KinshipPoly, upsilon_scaled: PCESurrogate, rule: QuadratureRule, x) -> float:
    return RiskIntegral(k, upsilon_scaled, rule).value(x)


# Reformulations

class Reformulation:
    method = ''

    def __init__(self, problem: ChanceProblem):
        self.problem = problem
        self.mean_objective = mean_over_xi(problem.objective)
        self.upper = problem.upper_constraints()

    def objective(self, x) -> float:
        return float(self.mean_objective(x))

    def objective_gradient(self, x) -> np.ndarray:
        return self.mean_objective.gradient(x)

    def objective_batch(self, x) -> np.ndarray:
        return self.mean_objective(x)

    def constraints(self, x) -> np.ndarray:
        raise NotImplementedError

    def constraints_jacobian(self, x) -> np.ndarray:
        raise NotImplementedError

    def constraints_batch(self, x) -> np.ndarray:
        raise NotImplementedError

    def risk_bounds(self, x) -> np.ndarray:
        raise NotImplementedError


class PoboReformulation(Reformulation):
    """sum_l w_l kappa(upsilon_i(x, xi_l)) <= eps_i, scaled by 1 / eps_i."""
    method = 'pobo'

    def __init__(self, problem: ChanceProblem, kinship: KinshipPoly, rule: QuadratureRule,
                 scaled: Optional[List[ScaledMetric]] = None):
        super().__init__(problem)
        self.kinship = kinship
        self.scaled = scaled if scaled is not None else scale_constraints(problem)
        self.integrals = [RiskIntegral(kinship, m.surrogate, rule) for m in self.scaled]
        self.risks = np.array([c.risk for c in self.upper])

    def risk_bounds(self, x) -> np.ndarray:
        return np.array([v.value(x) for v in self.integrals])

    def constraints(self, x) -> np.ndarray:
        return (self.risk_bounds(x) - self.risks) / self.risks

    def constraints_jacobian(self, x) -> np.ndarray:
        return np.array([v.gradient(x) for v in self.integrals]) / self.risks[:, None]

    def constraints_batch(self, x) -> np.ndarray:
        bounds = np.column_stack([v.batch(x) for v in self.integrals]) if self.integrals else np.zeros((len(x), 0))
        return (bounds - self.risks) / self.risks


def moment_gamma(risk: float) -> float:
    return float(np.sqrt((1.0 - risk) / risk))


class MomentReformulation(Reformulation):
    """mean_i(x) + gamma_i sqrt(var_i(x)) <= u_i, scaled by 1 / max(1, |u_i|)."""
    method = 'moment'

    def __init__(self, problem: ChanceProblem):
        super().__init__(problem)
        self.means = [mean_over_xi(c.surrogate) for c in self.upper]
        self.variances = [variance_over_xi(c.surrogate) for c in self.upper]
        self.bounds = np.array([c.bound for c in self.upper])
        self.gammas = np.array([moment_gamma(c.risk) for c in self.upper])
        self.scales = np.maximum(1.0, np.abs(self.bounds))

    def _moments(self, x):
        means = np.array([m(x) for m in self.means])
        variances = np.maximum(np.array([v(x) for v in self.variances]), 0.0)
        return means, variances

    def constraints(self, x) -> np.ndarray:
        means, variances = self._moments(x)
        return (means + self.gammas * np.sqrt(variances) - self.bounds) / self.scales

    def constraints_jacobian(self, x) -> np.ndarray:
        _, variances = self._moments(x)
        rows = []
        for i, (m, v) in enumerate(zip(self.means, self.variances)):
            grad = m.gradient(x)
            if variances[i] > 0:
                grad = grad + self.gammas[i] * v.gradient(x) / (2 * np.sqrt(variances[i]))
            rows.append(grad / self.scales[i])
        return np.array(rows)

    def constraints_batch(self, x) -> np.ndarray:
        columns = []
        for i, (m, v) in enumerate(zip(self.means, self.variances)):
            lhs = m(x) + self.gammas[i] * np.sqrt(np.maximum(v(x), 0.0))
            columns.append((lhs - self.bounds[i]) / self.scales[i])
        return np.column_stack(columns) if columns else np.zeros((len(np.atleast_2d(x)), 0))

    def risk_bounds(self, x) -> np.ndarray:
        """Cantelli bound var / (var + (u - mean)^2), 1 once the mean reaches u."""
        means, variances = self._moments(x)
        slack = self.bounds - means
        out = np.ones(len(slack))
        below = slack > 0
        out[below] = variances[below] / (variances[below] + slack[below] ** 2)
        return out


# Multi-start augmented Lagrangian

class _Normalised:
    """Reformulation in unit-box coordinates with a scaled, negated objective."""

    def __init__(self, reformulation: Reformulation, objective_scale: float):
        box = reformulation.problem.design_box
        self.r = reformulation
        self.lower, self.width = box[:, 0], box[:, 1] - box[:, 0]
        self.objective_scale = objective_scale

    def to_x(self, u):
        return self.lower + self.width * u

    def f(self, u):
        return -self.r.objective(self.to_x(u)) / self.objective_scale

    def f_grad(self, u):
        return -self.r.objective_gradient(self.to_x(u)) * self.width / self.objective_scale

    def g(self, u):
        return self.r.constraints(self.to_x(u))

    def g_jac(self, u):
        return self.r.constraints_jacobian(self.to_x(u)) * self.width


def _violation(g) -> float:
    return float(max(0.0, np.max(g))) if len(g) else 0.0


def _augmented_lagrangian(problem: _Normalised, u0, n_constraints):
    """PHR augmented Lagrangian with L-BFGS-B inner solves on the unit box."""
    bounds = [(0.0, 1.0)] * len(u0)
    multipliers = np.zeros(n_constraints)
    penalty = PENALTY_START
    u = np.asarray(u0, dtype=float)
    previous = _violation(problem.g(u))

    for outer in range(1, OUTER_ITERATIONS + 1):
        def merit(v, lam=multipliers, r=penalty):
            shifted = np.maximum(0.0, lam + r * problem.g(v))
            return problem.f(v) + (shifted @ shifted - lam @ lam) / (2 * r)

        def merit_grad(v, lam=multipliers, r=penalty):
            shifted = np.maximum(0.0, lam + r * problem.g(v))
            grad = problem.f_grad(v)
            return grad + shifted @ problem.g_jac(v) if n_constraints else grad

        result = optimize.minimize(merit, u, jac=merit_grad, method='L-BFGS-B', bounds=bounds)
        moved = float(np.max(np.abs(np.clip(result.x, 0.0, 1.0) - u)))
        u = np.clip(result.x, 0.0, 1.0)
        g = problem.g(u)
        multipliers = np.maximum(0.0, multipliers + penalty * g)
        violation = _violation(g)
        complementarity = float(np.max(np.abs(multipliers * np.minimum(g, 0.0)))) if n_constraints else 0.0
        if violation <= FEASIBILITY_TOL * 1e-2 and (complementarity <= 1e-8 or moved <= 1e-9):
            break
        if violation > VIOLATION_DECREASE * previous:
            penalty *= PENALTY_GROWTH
        previous = violation
    return u, outer


def _phase_one(problem: _Normalised, u0):
    bounds = [(0.0, 1.0)] * len(u0)

    def infeasibility(v):
        excess = np.maximum(0.0, problem.g(v))
        return float(excess @ excess)

    def infeasibility_grad(v):
        excess = np.maximum(0.0, problem.g(v))
        return 2 * excess @ problem.g_jac(v)

    result = optimize.minimize(infeasibility, u0, jac=infeasibility_grad, method='L-BFGS-B', bounds=bounds)
    return np.clip(result.x, 0.0, 1.0)


def _pick_best(points, values) -> int:
    """Index of the highest objective, ties broken by smallest norm then lexicographic x."""
    points, values = np.atleast_2d(points), np.asarray(values, dtype=float)
    top = values.max()
    tied = np.flatnonzero(values >= top - TIE_RTOL * max(1.0, abs(top)))
    keys = [points[tied, j] for j in range(points.shape[1] - 1, -1, -1)]
    order = np.lexsort(keys + [np.linalg.norm(points[tied], axis=1)])
    return int(tied[order[0]])


@monitor_performance("optimizer.multistart")
def solve_reformulation(reformulation: Reformulation, n_starts: int = DEFAULT_STARTS,
                        seed: int = 0) -> OptimizationResult:
    problem = reformulation.problem
    starts = qmc.Sobol(problem.dim, scramble=True, seed=seed).random(n_starts)
    box = problem.design_box
    probe = [abs(reformulation.objective(box[:, 0] + (box[:, 1] - box[:, 0]) * s)) for s in starts]
    normalised = _Normalised(reformulation, max(1.0, max(probe)))
    n_constraints = len(reformulation.upper)

    candidates = []
    for index, start in enumerate(starts):
        u, outer = _augmented_lagrangian(normalised, start, n_constraints)
        if _violation(normalised.g(u)) <= FEASIBILITY_TOL:
            x = normalised.to_x(u)
            candidates.append((x, reformulation.objective(x), index))
        logger.debug("start %d: outer=%d violation=%.2e", index, outer, _violation(normalised.g(u)))

    phase_one = False
    if not candidates:
        phase_one = True
        for index, start in enumerate(starts):
            u = _phase_one(normalised, start)
            if _violation(normalised.g(u)) <= FEASIBILITY_TOL:
                u, _ = _augmented_lagrangian(normalised, u, n_constraints)
                if _violation(normalised.g(u)) > FEASIBILITY_TOL:
                    u = _phase_one(normalised, u)
                if _violation(normalised.g(u)) <= FEASIBILITY_TOL:
                    x = normalised.to_x(u)
                    candidates.append((x, reformulation.objective(x), index))

    if not candidates:
        smallest = min(_violation(normalised.g(_phase_one(normalised, s))) for s in starts[:4])
        run_logger.log_solver(reformulation.method, {'status': 'infeasible', 'min_violation': smallest},
                              level=logging.WARNING)
        raise InfeasibleProblemError("no feasible design found",
                                     {'method': reformulation.method, 'starts': n_starts,
                                      'min_violation': smallest})

    chosen = _pick_best([c[0] for c in candidates], [c[1] for c in candidates])
    x_star, value, best_start = candidates[chosen]
    x_star = np.clip(x_star, box[:, 0], box[:, 1])
    bounds = reformulation.risk_bounds(x_star)
    g = reformulation.constraints(x_star)
    reports = [ConstraintReport(c.name, c.risk, float(b), bool(gi >= -1e-4))
               for c, b, gi in zip(reformulation.upper, bounds, g)]
    log = {
        'starts': n_starts,
        'feasible_starts': len(candidates),
        'best_start': int(best_start),
        'phase_one': phase_one,
        'best_values': sorted((float(c[1]) for c in candidates), reverse=True)[:5],
    }
    run_logger.log_solver(reformulation.method, {'objective': value, 'x_star': x_star, **log})
    return OptimizationResult(x_star, float(value), reports, reformulation.method, log)


def solve_pobo(problem: ChanceProblem, k: KinshipPoly, rule: QuadratureRule,
               n_starts: int = DEFAULT_STARTS, seed: int = 0,
               scaled: Optional[List[ScaledMetric]] = None) -> OptimizationResult:
    return solve_reformulation(PoboReformulation(problem, k, rule, scaled), n_starts, seed)


def solve_moment(problem: ChanceProblem, n_starts: int = DEFAULT_STARTS, seed: int = 0) -> OptimizationResult:
    return solve_reformulation(MomentReformulation(problem), n_starts, seed)


# Grid oracle

@dataclass
class OracleResult:
    x_best: Optional[np.ndarray]
    objective: Optional[float]
    feasible_points: int
    total_points: int

    @property
    def empty(self) -> bool:
        return self.x_best is None


def design_grid(design_box, resolution: int) -> np.ndarray:
    box = np.asarray(design_box, dtype=float)
    axes = [np.linspace(lo, hi, resolution) for lo, hi in box]
    grids = np.meshgrid(*axes, indexing='ij')
    return np.column_stack([g.ravel() for g in grids])


def feasibility_mask(reformulation: Reformulation, points: np.ndarray) -> np.ndarray:
    mask = np.empty(len(points), dtype=bool)
    for start in range(0, len(points), CHUNK):
        block = points[start:start + CHUNK]
        g = reformulation.constraints_batch(block)
        mask[start:start + CHUNK] = np.all(g <= FEASIBILITY_TOL, axis=1)
    return mask


@monitor_performance("optimizer.grid_oracle")
def grid_oracle(reformulation: Reformulation, resolution: int) -> OracleResult:
    points = design_grid(reformulation.problem.design_box, resolution)
    feasible = feasibility_mask(reformulation, points)
    if not feasible.any():
        run_logger.log_solver('grid_oracle', {'method': reformulation.method, 'feasible_points': 0})
        return OracleResult(None, None, 0, len(points))

    candidates = points[feasible]
    values = np.concatenate([reformulation.objective_batch(candidates[i:i + CHUNK])
                             for i in range(0, len(candidates), CHUNK)])
    best = _pick_best(candidates, values)
    return OracleResult(candidates[best], float(values[best]), int(feasible.sum()), len(points))
