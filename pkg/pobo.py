"""
Command-line entry point for the PoBO toolkit.

    python pobo.py kinship --rho 1 5 10
    python pobo.py bench synthetic --seed 7 --out out/run7
"""

import argparse
import json
import os
import sys

import numpy as np

from config.experiment import default_config, load_config
from monitoring import jsonable, run_logger
from services.errors import ConfigError, PoboError
from services.experiment_service import (
    build_quadrature, feasible_set_grid, prepare_pipeline, run_experiment, sweep_tradeoff, write_rows,
)
from services.kinship_service import eval_kinship, kinship_table, load_or_solve, verify_kinship
from services.yield_service import estimate_yield


def _config(args, problem=None):
    config = load_config(args.config) if args.config else default_config(problem or args.problem)
    config = config.with_overrides(seed=args.seed, out=args.out)
    os.makedirs(config.output_dir, exist_ok=True)
    return config


def _dump(path, data):
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(data, f, indent=2, sort_keys=True, default=jsonable)


# kinship
def kinship(args):
    out = args.out or '.'
    os.makedirs(out, exist_ok=True)
    rows = kinship_table(args.rho)
    z = np.linspace(-1.0, 1.0, 201)
    solved = {r: load_or_solve(r) for r in args.rho}
    curves = [{'z': float(v), **{f'rho_{r}': float(eval_kinship(k, v)) for r, k in solved.items()}} for v in z]
    write_rows(os.path.join(out, 'kinship.csv'), ['z'] + [f'rho_{r}' for r in args.rho], curves)

    print("🧮 Optimal polynomial kinship")
    for row in rows:
        status = "✅" if verify_kinship(solved[row['rho']])['passed'] else "❌"
        print(f"{status} rho={row['rho']:2d}  integral={row['integral_value']:.10f}  "
              f"1/(rho+1)={row['trivial_bound']:.10f}")


# quadrature
def quadrature(args):
    config = _config(args)
    _, rule = build_quadrature(config)
    _dump(os.path.join(config.output_dir, 'quadrature.json'), rule.to_dict())
    print(f"📐 {rule.size} points, exactness order {rule.exactness_order}, residual {rule.residual:.3e}")


# fit
def fit(args):
    config = _config(args)
    pipeline = prepare_pipeline(config)
    _dump(os.path.join(config.output_dir, 'surrogates.json'),
          {name: s.to_dict() for name, s in pipeline.surrogates.items()})
    print(f"📈 {len(pipeline.surrogates)} surrogates from {pipeline.simulations} simulations")
    for name, report in pipeline.validation.items():
        print(f"   {name}: held-out max error {report['max_error']:.3e}, rms {report['rms_error']:.3e}")


# optimize
def optimize(args):
    config = _config(args)
    pipeline = prepare_pipeline(config)
    results = []
    for epsilon in config.epsilons:
        for method in ('pobo', 'moment'):
            try:
                result = pipeline.solve(method, epsilon)
            except PoboError as e:
                print(f"❌ {method} eps={epsilon}: {e.message}")
                results.append({'method': method, 'epsilon': epsilon, 'status': 'infeasible'})
                continue
            print(f"✅ {method} eps={epsilon}: objective {result.objective_value:.6g} at {np.round(result.x_star, 6)}")
            results.append({'epsilon': epsilon, 'status': 'feasible', **result.to_dict()})
    _dump(os.path.join(config.output_dir, 'optimize.json'), results)


# validate
def validate(args):
    config = _config(args)
    pipeline = prepare_pipeline(config)
    x = np.asarray(args.x, dtype=float) if args.x else pipeline.bench.initial_design
    for epsilon in config.epsilons:
        problem = pipeline.problem(epsilon)
        report = estimate_yield(problem, x, config.n_mc, config.seeds.validation, args.on)
        gaps = ", ".join(f"{c.name}: Y={c.success_rate:.4f} gap={c.gap:+.4f}" for c in report.per_constraint)
        print(f"🎯 eps={epsilon} yield={report.yield_:.4f} ({gaps})")


# sweep
def sweep(args):
    config = _config(args)
    pipeline = prepare_pipeline(config)
    grid = config.tradeoff_grid or config.epsilons
    rows = sweep_tradeoff(pipeline, grid)
    write_rows(os.path.join(config.output_dir, 'tradeoff.csv'), ['epsilon', 'objective', 'yield'], rows)
    print(f"📊 trade-off curve with {len(rows)} points written to {config.output_dir}")


# feasible-grid
def feasible_grid(args):
    config = _config(args)
    pipeline = prepare_pipeline(config)
    epsilon = args.epsilon or max(config.epsilons)
    methods = tuple(args.method) if args.method else ('exact', 'moment', 'pobo')
    rows = feasible_set_grid(pipeline, epsilon, args.resolution or config.feasible_grid_resolution, methods)
    write_rows(os.path.join(config.output_dir, 'feasible_grid.csv'), ['x1', 'x2', *methods], rows)
    counts = ", ".join(f"{m}={sum(r[m] for r in rows)}" for m in methods)
    print(f"🗺️ feasible cells at eps={epsilon}: {counts}")


# bench
def bench(args):
    config = _config(args, args.name)
    if config.problem != args.name:
        raise ConfigError(f"config is for '{config.problem}', not '{args.name}'",
                          {'config': args.config, 'benchmark': args.name})
    report = run_experiment(config)
    print(f"🏁 {args.name}: {report['simulations']} simulations, results in {config.output_dir}")
    for row in report['rows']:
        objective = 'N/A' if row['objective'] is None else f"{row['objective']:.4f}"
        yield_ = 'N/A' if row['yield'] is None else f"{row['yield']:.4f}"
        print(f"   {row['method']:>6} eps={row['epsilon']:<5} objective={objective:>9} yield={yield_}")


def build_parser():
    parser = argparse.ArgumentParser(prog='pobo', description='Chance-constrained yield-aware optimization')
    parser.add_argument('--config', help='experiment config (JSON)')
    parser.add_argument('--seed', type=int, help='base seed for every random stream')
    parser.add_argument('--out', help='output directory')
    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('kinship', help='solve and verify optimal kinship functions')
    p.add_argument('--rho', type=int, nargs='+', default=[10])
    p.set_defaults(handler=kinship)

    for name, handler, text in (
        ('quadrature', quadrature, 'build the optimization-based quadrature rule'),
        ('fit', fit, 'fit the polynomial-chaos surrogates'),
        ('optimize', optimize, 'solve the PoBO and moment reformulations'),
        ('validate', validate, 'Monte-Carlo yield of a design'),
        ('sweep', sweep, 'objective/yield trade-off over risk levels'),
        ('feasible-grid', feasible_grid, 'feasible-set membership on a design grid'),
    ):
        p = sub.add_parser(name, help=text)
        p.add_argument('--problem', default='synthetic', choices=['synthetic', 'mzi', 'microring'])
        p.set_defaults(handler=handler)
        if name == 'validate':
            p.add_argument('--x', type=float, nargs='+')
            p.add_argument('--on', default='surrogate', choices=['surrogate', 'truth'])
        if name == 'feasible-grid':
            p.add_argument('--method', nargs='+', choices=['exact', 'moment', 'pobo'])
            p.add_argument('--epsilon', type=float)
            p.add_argument('--resolution', type=int)

    p = sub.add_parser('bench', help='run a full benchmark experiment')
    p.add_argument('name', choices=['synthetic', 'mzi', 'microring'])
    p.set_defaults(handler=bench)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        args.handler(args)
    except PoboError as e:
        run_logger.log_error(e, args.command)
        print(f"❌ {type(e).__name__}: {e.message}")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
