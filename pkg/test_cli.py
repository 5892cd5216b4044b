import csv
import json

import pytest

import pobo
from pobo import build_parser, main


def _write_config(path, out, **extra):
    data = {'problem': 'synthetic', 'epsilons': [0.1], 'rho': 3, 'n_mc': 2000, 'n_mc_truth': 2000,
            'n_starts': 4, 'feasible_grid_resolution': 11, 'feasible_grid_samples': 1000,
            'use_cache': False, 'output_dir': str(out)}
    data.update(extra)
    path.write_text(json.dumps(data), encoding='utf-8')
    return path


def test_kinship_command(tmp_path, capsys):
    assert main(['--out', str(tmp_path), 'kinship', '--rho', '1', '3']) == 0
    with open(tmp_path / 'kinship.csv', newline='', encoding='utf-8') as f:
        rows = list(csv.reader(f))
    assert rows[0] == ['z', 'rho_1', 'rho_3']
    assert len(rows) == 202
    assert float(rows[1][1]) == pytest.approx(0.0, abs=1e-8)
    assert float(rows[101][2]) == pytest.approx(1.0, abs=1e-8)
    output = capsys.readouterr().out
    assert '✅ rho= 1' in output
    assert '✅ rho= 3' in output


def test_kinship_command_solves_each_order_once(tmp_path, monkeypatch):
    calls = []
    original = pobo.load_or_solve

    def counting(rho, *args, **kwargs):
        calls.append(rho)
        return original(rho, *args, **kwargs)

    monkeypatch.setattr(pobo, 'load_or_solve', counting)
    assert main(['--out', str(tmp_path), 'kinship', '--rho', '2', '4']) == 0
    assert sorted(calls) == [2, 4]


def test_quadrature_command(tmp_path):
    config = _write_config(tmp_path / 'config.json', tmp_path / 'out')
    assert main(['--config', str(config), 'quadrature']) == 0
    with open(tmp_path / 'out' / 'quadrature.json', encoding='utf-8') as f:
        rule = json.load(f)
    assert rule['exactness_order'] == 4
    assert sum(rule['weights']) == pytest.approx(1.0, abs=1e-8)


def test_feasible_grid_command(tmp_path, capsys):
    config = _write_config(tmp_path / 'config.json', tmp_path / 'out')
    assert main(['--config', str(config), 'feasible-grid', '--method', 'moment', '--resolution', '5']) == 0
    with open(tmp_path / 'out' / 'feasible_grid.csv', newline='', encoding='utf-8') as f:
        rows = list(csv.reader(f))
    assert rows[0] == ['x1', 'x2', 'moment']
    assert len(rows) == 26
    assert 'moment=' in capsys.readouterr().out


def test_seed_override_changes_output_directory(tmp_path):
    config = _write_config(tmp_path / 'config.json', tmp_path / 'ignored')
    assert main(['--config', str(config), '--seed', '7', '--out', str(tmp_path / 'run7'), 'quadrature']) == 0
    assert (tmp_path / 'run7' / 'quadrature.json').exists()
    assert not (tmp_path / 'ignored').exists()


def test_domain_errors_exit_with_status_one(tmp_path, capsys):
    assert main(['--config', str(tmp_path / 'absent.json'), 'quadrature']) == 1
    assert '❌ ConfigError' in capsys.readouterr().out


def test_bench_rejects_a_config_for_another_problem(tmp_path, capsys):
    config = _write_config(tmp_path / 'config.json', tmp_path / 'out')
    assert main(['--config', str(config), 'bench', 'mzi']) == 1
    assert '❌ ConfigError' in capsys.readouterr().out
    assert not (tmp_path / 'out' / 'table.csv').exists()


def test_validate_rejects_wrong_design_dimension(tmp_path, capsys):
    config = _write_config(tmp_path / 'config.json', tmp_path / 'out')
    assert main(['--config', str(config), 'validate', '--x', '0.1', '0.2', '0.3']) == 1
    assert '❌' in capsys.readouterr().out


def test_parser_rejects_unknown_benchmark():
    with pytest.raises(SystemExit):
        build_parser().parse_args(['bench', 'waveguide'])


def test_parser_requires_a_command():
    with pytest.raises(SystemExit):
        build_parser().parse_args([])
