"""
Experiment orchestration.

A pipeline builds the bases, the quadrature rule and the surrogates for one
benchmark; experiments then solve both reformulations per risk level,
validate the designs by Monte Carlo and write the report files.
"""

import csv
import json
import logging
import os
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

import numpy as np

from config.experiment import ExperimentConfig
from monitoring import jsonable, monitor_performance, run_logger
from services.basis_service import PolyBasis, eval_basis, legendre_basis, mixture_basis
from services.benchmark_service import BenchmarkProblem, build_chance_problem, get_benchmark
from services.errors import InfeasibleProblemError, ModelError
from services.kinship_service import KinshipPoly, load_or_solve
from services.mixture_service import sample
from services.optimizer_service import (
    ChanceProblem, MomentReformulation, PoboReformulation, ScaledMetric, design_grid, feasibility_mask,
    grid_oracle, scale_constraints, solve_moment, solve_pobo,
)
from services.photonics_service import Spectrum, write_spectrum_csv
from services.quadrature_service import QuadratureRule, cached_quadrature
from services.surrogate_service import (
    PCESurrogate, fit_pce, holdout_points, sample_plan, validate_surrogate, xi_response,
)
from services.yield_service import estimate_yield

logger = logging.getLogger(__name__)

TABLE_COLUMNS = ['method', 'epsilon', 'simulations', 'objective', 'delta_1', 'delta_2', 'yield']
METHODS = ('pobo', 'moment')


@dataclass
class Pipeline:
    config: ExperimentConfig
    bench: BenchmarkProblem
    basis_x: PolyBasis
    basis_xi: PolyBasis
    rule: QuadratureRule
    surrogates: Dict[str, PCESurrogate]
    simulations: int
    validation: Dict[str, Dict[str, float]] = field(default_factory=dict)
    _kinship: Optional[KinshipPoly] = None
    _scaled: Optional[List[ScaledMetric]] = None

    @property
    def kinship(self) -> KinshipPoly:
        if self._kinship is None:
            self._kinship = load_or_solve(self.config.rho, self.config.use_cache)
        return self._kinship

    def problem(self, epsilon: float) -> ChanceProblem:
        return build_chance_problem(self.bench, self.surrogates, epsilon)

    def scaled(self) -> List[ScaledMetric]:
        # metric scaling does not depend on the risk level
        if self._scaled is None:
            self._scaled = scale_constraints(self.problem(0.5))
        return self._scaled

    def reformulation(self, method: str, epsilon: float):
        if method == 'pobo':
            return PoboReformulation(self.problem(epsilon), self.kinship, self.rule, self.scaled())
        if method == 'moment':
            return MomentReformulation(self.problem(epsilon))
        raise ModelError(f"unknown method '{method}'", {'known': list(METHODS)})

    def solve(self, method: str, epsilon: float):
        seed, starts = self.config.seeds.solver, self.config.n_starts
        if method == 'pobo':
            return solve_pobo(self.problem(epsilon), self.kinship, self.rule, starts, seed, self.scaled())
        return solve_moment(self.problem(epsilon), starts, seed)


def build_quadrature(config: ExperimentConfig, bench: Optional[BenchmarkProblem] = None):
    bench = bench or _benchmark(config)
    basis_xi = mixture_basis(bench.xi_model, config.xi_order)
    rule = cached_quadrature(basis_xi, bench.xi_model, config.q, config.n_candidates,
                             config.seeds.quadrature, config.use_cache)
    return basis_xi, rule


def _benchmark(config: ExperimentConfig) -> BenchmarkProblem:
    bench = get_benchmark(config.problem)
    if config.xi_model is not None:
        bench.xi_model = config.xi_model.build()
    return bench


@monitor_performance("experiment.pipeline")
def prepare_pipeline(config: ExperimentConfig) -> Pipeline:
    """Algorithm steps up to the surrogates: bases, quadrature, budgeted fit."""
    bench = _benchmark(config)
    basis_x = legendre_basis(bench.dim, config.p, bench.design_box)
    basis_xi, rule = build_quadrature(config, bench)

    budget = config.simulation_budget or bench.simulation_budget
    x, xi, weights = sample_plan(basis_x, bench.design_box, rule, config.p, budget, basis_xi)
    values = bench.evaluate(x, xi)
    simulations = bench.simulations
    names = [bench.objective_metric] + [c.metric for c in bench.constraints]
    surrogates = {name: fit_pce((x, xi, values[name]), basis_x, basis_xi, config.p, weights) for name in names}

    hold_x, hold_xi = holdout_points(bench.design_box, bench.xi_model, config.n_validation, config.seeds.fit)
    truth = bench.metrics(hold_x, hold_xi)
    validation = {name: validate_surrogate(surrogates[name], truth[name], hold_x, hold_xi) for name in names}

    run_logger.log_event('pipeline_ready', {
        'problem': config.problem, 'simulations': simulations, 'quadrature_points': rule.size,
        'fit_residuals': {name: s.fit_residual for name, s in surrogates.items()},
    })
    return Pipeline(config, bench, basis_x, basis_xi, rule, surrogates, simulations, validation)


def _method_row(pipeline: Pipeline, method: str, epsilon: float) -> Dict[str, Any]:
    config = pipeline.config
    row = {'method': method, 'epsilon': epsilon, 'simulations': pipeline.simulations}
    try:
        result = pipeline.solve(method, epsilon)
    except InfeasibleProblemError as e:
        run_logger.log_error(e, f'{method} at epsilon={epsilon}')
        return {**row, 'status': 'infeasible', 'objective': None, 'delta_1': None, 'delta_2': None,
                'yield': None}

    problem = pipeline.problem(epsilon)
    on_surrogate = estimate_yield(problem, result.x_star, config.n_mc, config.seeds.validation, 'surrogate')
    on_truth = estimate_yield(problem, result.x_star, config.n_mc_truth, config.seeds.validation, 'truth')
    gaps = [c.gap for c in on_surrogate.per_constraint] + [None, None]
    row.update({
        'status': 'feasible',
        'objective': result.objective_value,
        'delta_1': gaps[0],
        'delta_2': gaps[1],
        'yield': on_surrogate.yield_,
        'result': result.to_dict(),
        'yield_surrogate': on_surrogate.to_dict(),
        'yield_truth': on_truth.to_dict(),
        'truth_objective': on_truth.objective_samples,
    })
    if config.oracle_resolution:
        oracle = grid_oracle(pipeline.reformulation(method, epsilon), config.oracle_resolution)
        row['oracle'] = {
            'resolution': config.oracle_resolution,
            'objective': oracle.objective,
            'x_best': None if oracle.empty else oracle.x_best.tolist(),
            'feasible_points': oracle.feasible_points,
        }
    return row


@monitor_performance("experiment.run")
def run_experiment(config: ExperimentConfig) -> Dict[str, Any]:
    """Full benchmark: table rows per (method, epsilon), optional sweeps and spectra."""
    pipeline = prepare_pipeline(config)
    os.makedirs(config.output_dir, exist_ok=True)

    rows = [_method_row(pipeline, method, eps) for eps in config.epsilons for method in METHODS]
    write_table(os.path.join(config.output_dir, 'table.csv'), rows)

    report: Dict[str, Any] = {
        'problem': config.problem,
        'config': config.model_dump(),
        'simulations': pipeline.simulations,
        'quadrature': {'points': pipeline.rule.size, 'residual': pipeline.rule.residual,
                       'exactness_order': pipeline.rule.exactness_order},
        'kinship': {'rho': pipeline.kinship.order, 'integral_value': pipeline.kinship.integral_value,
                    'zeta': pipeline.kinship.zeta.tolist()},
        'scaling': [{'constraint': c.metric, 'minimum': m.minimum}
                    for c, m in zip(pipeline.bench.constraints, pipeline.scaled())],
        'validation': pipeline.validation,
        'rows': [{k: v for k, v in row.items() if k != 'truth_objective'} for row in rows],
    }

    if config.tradeoff_grid:
        tradeoff = sweep_tradeoff(pipeline, config.tradeoff_grid)
        write_rows(os.path.join(config.output_dir, 'tradeoff.csv'), ['epsilon', 'objective', 'yield'], tradeoff)
        report['tradeoff'] = tradeoff

    if pipeline.bench.dim == 2:
        epsilon = max(config.epsilons)
        grid = feasible_set_grid(pipeline, epsilon, config.feasible_grid_resolution)
        write_rows(os.path.join(config.output_dir, 'feasible_grid.csv'),
                   ['x1', 'x2', 'exact', 'moment', 'pobo'], grid)
        report['feasible_grid'] = {
            'epsilon': epsilon,
            'counts': {m: int(sum(r[m] for r in grid)) for m in ('exact', 'moment', 'pobo')},
        }

    largest = [r for r in rows if r['epsilon'] == max(config.epsilons)]
    write_objective_samples(os.path.join(config.output_dir, 'objective_samples.csv'), largest)
    if pipeline.bench.spectrum is not None:
        export_spectra(pipeline, largest)

    with open(os.path.join(config.output_dir, 'report.json'), 'w', encoding='utf-8') as f:
        json.dump(report, f, indent=2, sort_keys=True, default=jsonable)
    run_logger.log_event('experiment_finished', {'problem': config.problem, 'output_dir': config.output_dir})
    return report


def sweep_tradeoff(pipeline: Pipeline, epsilon_grid) -> List[Dict[str, Any]]:
    """Objective and surrogate MC yield of the PoBO design per risk level."""
    config = pipeline.config
    rows = []
    for epsilon in epsilon_grid:
        if not 0.0 < epsilon < 1.0:
            raise ModelError("risk levels must lie in (0, 1)", {'epsilon': epsilon})
        try:
            result = pipeline.solve('pobo', epsilon)
        except InfeasibleProblemError:
            rows.append({'epsilon': epsilon, 'objective': None, 'yield': None})
            continue
        report = estimate_yield(pipeline.problem(epsilon), result.x_star, config.n_mc, config.seeds.validation)
        rows.append({'epsilon': epsilon, 'objective': result.objective_value, 'yield': report.yield_})
    return rows


def exact_feasibility(problem: ChanceProblem, points: np.ndarray, n_samples: int, seed: int) -> np.ndarray:
    """Every per-constraint MC success rate >= 1 - eps, on common xi samples."""
    xi = sample(problem.xi_model, n_samples, seed)
    mask = np.ones(len(points), dtype=bool)
    for c in problem.constraints:
        response = xi_response(c.surrogate, xi)
        for start in range(0, len(points), 256):
            block = slice(start, start + 256)
            values = eval_basis(c.surrogate.basis_x, points[block]) @ response.T
            ok = values <= c.bound if c.sense == 'upper' else values >= c.bound
            mask[block] &= ok.mean(axis=1) >= 1.0 - c.risk
    return mask


def feasible_set_grid(pipeline: Pipeline, epsilon: float, resolution: int,
                      methods=('exact', 'moment', 'pobo')) -> List[Dict[str, Any]]:
    """Membership of every design-grid point under each criterion (two design variables only)."""
    if pipeline.bench.dim != 2:
        raise ModelError("feasible-set grids need exactly two design variables", {'dim': pipeline.bench.dim})
    points = design_grid(pipeline.bench.design_box, resolution)
    columns = {}
    for method in methods:
        if method == 'exact':
            columns[method] = exact_feasibility(pipeline.problem(epsilon), points,
                                                pipeline.config.feasible_grid_samples,
                                                pipeline.config.seeds.validation)
        else:
            columns[method] = feasibility_mask(pipeline.reformulation(method, epsilon), points)
    return [
        {'x1': float(p[0]), 'x2': float(p[1]), **{m: bool(columns[m][i]) for m in methods}}
        for i, p in enumerate(points)
    ]


def export_spectra(pipeline: Pipeline, rows: List[Dict[str, Any]]):
    bench, config = pipeline.bench, pipeline.config
    ensemble = sample(bench.xi_model, config.spectrum_ensemble, config.seeds.validation)
    designs = {'initial': bench.initial_design}
    for row in rows:
        if row['status'] == 'feasible':
            designs[row['method']] = np.asarray(row['result']['x_star'])
    for label, design in designs.items():
        nominal = bench.spectrum(design, np.zeros(bench.xi_model.dim))
        spectra = [bench.spectrum(design, xi) for xi in ensemble]
        mean = Spectrum(nominal.frequency_grid, np.mean([s.drop for s in spectra], axis=0),
                        np.mean([s.through for s in spectra], axis=0))
        write_spectrum_csv(os.path.join(config.output_dir, f'spectrum_{label}.csv'), nominal, mean)


def write_objective_samples(path, rows):
    out = []
    for row in rows:
        if row['status'] == 'feasible':
            out.extend({'method': row['method'], 'sample': i, 'objective': float(v)}
                       for i, v in enumerate(row['truth_objective']))
    write_rows(path, ['method', 'sample', 'objective'], out)


def _format(value) -> str:
    if value is None:
        return 'N/A'
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value)).lower()
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format(float(value), '.17g')
    return str(value)


def write_rows(path, columns, rows):
    with open(path, 'w', newline='', encoding='utf-8') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_format(row.get(c)) for c in columns])


def write_table(path, rows):
    write_rows(path, TABLE_COLUMNS, rows)
