import csv
import json
import os

import numpy as np
import pytest

from config.experiment import ExperimentConfig, MixtureConfig, default_config, load_config
from services.benchmark_service import get_benchmark, microring_problem, mzi_problem, synthetic_mixture
from services.errors import ConfigError, ModelError
from services.experiment_service import (
    TABLE_COLUMNS, Pipeline, _format, build_quadrature, feasible_set_grid, prepare_pipeline, run_experiment,
    sweep_tradeoff, write_table,
)


def _read_csv(path):
    with open(path, newline='', encoding='utf-8') as f:
        return list(csv.reader(f))


def _small_config(out, **overrides):
    values = dict(problem='synthetic', epsilons=[0.1], rho=10, n_mc=2000, n_mc_truth=2000, n_starts=4,
                  feasible_grid_resolution=11, feasible_grid_samples=2000, use_cache=False, output_dir=str(out))
    values.update(overrides)
    return ExperimentConfig(**values)


@pytest.fixture(scope='module')
def small_pipeline(tmp_path_factory):
    return prepare_pipeline(_small_config(tmp_path_factory.mktemp('pipeline')))


# Configuration

def test_bundled_configs_load():
    synthetic = default_config('synthetic')
    assert synthetic.epsilons == [0.01, 0.05, 0.1]
    assert synthetic.rho == 10
    assert synthetic.xi_order == 4
    assert default_config('mzi').simulation_budget == 35
    assert default_config('microring').simulation_budget == 65
    assert default_config('mzi').rho == default_config('microring').rho == 10


def test_quadrature_order_defaults_to_surrogate_order():
    config = ExperimentConfig(problem='synthetic', p=3)
    assert config.q == 3
    assert config.xi_order == 6


def test_overrides(tmp_path):
    config = default_config('synthetic').with_overrides(seed=10, out=str(tmp_path))
    assert config.seeds.sampling == 10
    assert config.seeds.solver == 13
    assert config.output_dir == str(tmp_path)
    assert default_config('synthetic').with_overrides().seeds.solver == 3


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / 'absent.json')


def test_malformed_config_file(tmp_path):
    path = tmp_path / 'broken.json'
    path.write_text('{"problem": ', encoding='utf-8')
    with pytest.raises(ConfigError):
        load_config(path)


@pytest.mark.parametrize("data", [
    {'problem': 'waveguide'},
    {'problem': 'synthetic', 'epsilons': [0.0]},
    {'problem': 'synthetic', 'rho': 17},
    {'problem': 'synthetic', 'n_mc': 10},
])
def test_invalid_config_values(tmp_path, data):
    path = tmp_path / 'config.json'
    path.write_text(json.dumps(data), encoding='utf-8')
    with pytest.raises(ConfigError) as excinfo:
        load_config(path)
    assert excinfo.value.details['errors']


def test_custom_variation_model():
    model = MixtureConfig.model_validate(synthetic_mixture().to_dict()).build()
    assert model.dim == 2
    assert model.bounding_box() == pytest.approx(np.array([[-0.4, 0.4], [-0.4, 0.4]]))


def test_unknown_benchmark():
    with pytest.raises(ConfigError):
        get_benchmark('waveguide')


# Benchmarks

def test_synthetic_truth_metrics():
    bench = get_benchmark('synthetic')
    values = bench.evaluate(np.array([[0.5, 0.2], [0.0, 0.0]]), np.array([[0.1, -0.1], [0.0, 0.0]]))
    assert values['f'] == pytest.approx([1.7, 0.0])
    assert values['y1'] == pytest.approx([0.46, 0.0])
    assert values['y2'] == pytest.approx([0.26, 0.0])
    assert bench.simulations == 2


@pytest.mark.parametrize("factory, dim, metrics, bounds", [
    (mzi_problem, 3, {'BW', 'XT', 'alpha'}, [-6.6, 1.6]),
    (microring_problem, 4, {'BW', 'RE', 'sigma_pass'}, [20.0, 0.65]),
])
def test_photonic_benchmarks(factory, dim, metrics, bounds):
    bench = factory()
    assert [c.bound for c in bench.constraints] == bounds
    assert bench.dim == dim == bench.xi_model.dim
    assert [c.sense for c in bench.constraints] == (['upper', 'upper'] if dim == 3 else ['lower', 'upper'])
    values = bench.evaluate(bench.initial_design, np.zeros(dim))
    assert set(values) == metrics
    assert all(np.isfinite(v[0]) for v in values.values())
    assert bench.simulations == 1


# Output formatting

def test_cell_formatting():
    assert _format(None) == 'N/A'
    assert _format(True) == 'true'
    assert _format(np.bool_(False)) == 'false'
    assert _format(35) == '35'
    assert _format(0.1) == '0.10000000000000001'
    assert _format(np.float64(2.5)) == '2.5'
    assert _format('pobo') == 'pobo'


def test_table_columns(tmp_path):
    path = tmp_path / 'table.csv'
    write_table(path, [{'method': 'moment', 'epsilon': 0.01, 'simulations': 9, 'objective': None}])
    rows = _read_csv(path)
    assert rows[0] == TABLE_COLUMNS
    assert rows[1] == ['moment', '0.01', '9', 'N/A', 'N/A', 'N/A', 'N/A']


# Pipeline

def test_pipeline_recovers_synthetic_metrics(small_pipeline):
    assert set(small_pipeline.surrogates) == {'f', 'y1', 'y2'}
    for report in small_pipeline.validation.values():
        assert report['max_error'] <= 1e-8
    assert small_pipeline.simulations == 9 * small_pipeline.rule.size


def test_quadrature_follows_config(tmp_path):
    basis_xi, rule = build_quadrature(_small_config(tmp_path))
    assert basis_xi.max_order == 4
    assert rule.exactness_order == 4
    assert rule.residual <= 1e-12


def test_scaling_is_shared_across_risk_levels(small_pipeline):
    first = small_pipeline.reformulation('pobo', 0.05)
    second = small_pipeline.reformulation('pobo', 0.1)
    assert first.scaled is second.scaled


def test_unknown_method(small_pipeline):
    with pytest.raises(ModelError):
        small_pipeline.reformulation('gradient', 0.1)


def test_tradeoff_rejects_bad_risk(small_pipeline):
    with pytest.raises(ModelError):
        sweep_tradeoff(small_pipeline, [0.05, 1.5])


def test_feasible_sets_are_contained_in_exact_set(small_pipeline):
    grid = feasible_set_grid(small_pipeline, 0.1, 11)
    assert len(grid) == 121
    exact = np.array([r['exact'] for r in grid])
    moment = np.array([r['moment'] for r in grid])
    pobo = np.array([r['pobo'] for r in grid])
    assert moment.any() and pobo.any()
    assert np.sum(moment & ~exact) <= 2
    assert np.sum(pobo & ~exact) <= 6
    assert pobo.sum() >= moment.sum()


def test_feasible_grid_needs_two_design_variables(small_pipeline):
    pipeline = Pipeline(small_pipeline.config, mzi_problem(), None, None, None, {}, 0)
    with pytest.raises(ModelError):
        feasible_set_grid(pipeline, 0.1, 5)


def test_small_experiment_writes_outputs(tmp_path):
    report = run_experiment(_small_config(tmp_path))
    for name in ('table.csv', 'report.json', 'feasible_grid.csv', 'objective_samples.csv'):
        assert os.path.exists(tmp_path / name)
    assert not os.path.exists(tmp_path / 'tradeoff.csv')

    rows = _read_csv(tmp_path / 'table.csv')
    assert rows[0] == TABLE_COLUMNS
    assert [r[0] for r in rows[1:]] == ['pobo', 'moment']
    assert {'problem', 'config', 'simulations', 'quadrature', 'kinship', 'scaling', 'validation',
            'rows', 'feasible_grid'} <= set(report)
    assert report['kinship']['rho'] == 10
    with open(tmp_path / 'report.json', encoding='utf-8') as f:
        assert json.load(f)['problem'] == 'synthetic'


@pytest.mark.slow
def test_synthetic_benchmark_table(tmp_path):
    config = default_config('synthetic').with_overrides(out=str(tmp_path / 'first'))
    config = config.model_copy(update={'tradeoff_grid': [0.02, 0.05, 0.1]})
    report = run_experiment(config)

    rows = {(r['method'], r['epsilon']): r for r in report['rows']}
    assert len(rows) == 6
    assert rows[('moment', 0.01)]['status'] == 'infeasible'
    assert rows[('pobo', 0.01)]['status'] == 'feasible'
    assert rows[('pobo', 0.01)]['yield'] >= 0.99 - 0.005
    for eps in (0.05, 0.1):
        assert rows[('pobo', eps)]['objective'] >= rows[('moment', eps)]['objective'] - 1e-6
    for eps in (0.01, 0.05, 0.1):
        for c in rows[('pobo', eps)]['yield_truth']['per_constraint']:
            assert c['success_rate'] >= 1 - eps - 0.005

    table = _read_csv(tmp_path / 'first' / 'table.csv')
    moment_row = [r for r in table if r[:2] == ['moment', '0.01']][0]
    assert moment_row[3:] == ['N/A'] * 4

    objectives = [r['objective'] for r in report['tradeoff']]
    assert all(a <= b + 1e-3 for a, b in zip(objectives, objectives[1:]))

    run_experiment(config.with_overrides(out=str(tmp_path / 'second')))
    with open(tmp_path / 'first' / 'table.csv', 'rb') as a, open(tmp_path / 'second' / 'table.csv', 'rb') as b:
        assert a.read() == b.read()


@pytest.mark.slow
@pytest.mark.parametrize("problem, budget", [('mzi', 35), ('microring', 65)])
def test_photonic_surrogates_respect_simulation_budget(tmp_path, problem, budget):
    config = default_config(problem).with_overrides(out=str(tmp_path))
    pipeline = prepare_pipeline(config.model_copy(update={'n_validation': 200}))
    assert pipeline.simulations == budget
    assert set(pipeline.surrogates) == {'BW'} | {c.metric for c in pipeline.bench.constraints}


@pytest.mark.slow
def test_feasible_sets_at_full_resolution(tmp_path):
    config = default_config('synthetic').with_overrides(out=str(tmp_path))
    pipeline = prepare_pipeline(config)
    grid = feasible_set_grid(pipeline, 0.1, config.feasible_grid_resolution)
    assert len(grid) == 51 * 51
    allowance = 0.01 * len(grid)
    exact = np.array([r['exact'] for r in grid])
    moment = np.array([r['moment'] for r in grid])
    pobo = np.array([r['pobo'] for r in grid])
    assert np.sum(moment & ~exact) <= allowance
    assert np.sum(pobo & ~exact) <= allowance
    assert pobo.sum() >= moment.sum() > 0


def _gaps(row):
    return [row['delta_1'], row['delta_2']]


@pytest.mark.slow
@pytest.mark.parametrize("problem", ['mzi', 'microring'])
def test_photonic_benchmark_table(tmp_path, problem):
    config = default_config(problem).with_overrides(out=str(tmp_path))
    report = run_experiment(config)
    assert report['simulations'] <= config.simulation_budget

    rows = {(r['method'], r['epsilon']): r for r in report['rows']}
    tighter_gap = []
    for eps in config.epsilons:
        pobo, moment = rows[('pobo', eps)], rows[('moment', eps)]
        assert pobo['status'] == 'feasible'
        assert pobo['yield'] >= 1 - eps - 0.01
        for row in (pobo, moment):
            if row['status'] == 'feasible' and row['oracle']['objective'] is not None:
                assert row['objective'] >= row['oracle']['objective'] - 1e-3
        if moment['status'] == 'feasible':
            assert pobo['objective'] >= moment['objective'] - 1e-6
            tighter_gap.append(any(p < m for p, m in zip(_gaps(pobo), _gaps(moment))))
    assert any(tighter_gap)
