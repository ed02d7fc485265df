#!/usr/bin/env python3
"""
multidag command line.

    multidag.py score    --manifest data/manifest.csv --cache-dir caches
    multidag.py fit      --cache-dir caches --hyper hyper.json --mode joint --out results
    multidag.py sweep    --cache-dir caches --network replicates.json --grid 0,1,2,4 --out results
    multidag.py simulate --seed 7 --out data
    multidag.py export   --solution results/solution.json --out results/dot

Settings resolve as: command-line flag > environment (.env is loaded) >
config file (--config, else $MULTIDAG_CONFIG, else ./config.json) >
built-in defaults. Exit codes: 0 proven optimal / success, 1 gap-limited
result written, 2 input error, 3 capacity exceeded, 4 numerical failure,
5 solver failure.
"""

import argparse
import copy
import io
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from typing import List, Optional

import pandas as pd
from dotenv import load_dotenv

from clustering import ClusterSpec, solve_clustering
from dag_core import Dag
from diagnostics import elicit_lambda, eta_sweep, gnuplot_script, lambda_sweep
from errors import InputError, MultiDagError
from exact_solver import SolverLimits, fit
from ilp_encoding import SolveMode
from joint_prior import (Hyperparameters, SubjectNetwork, lambda_eta_star, load_hyperparameters,
                         replicate_network)
from logging_config import get_logger, log_run, setup_logging
from mdm_scoring import DlmConfig, build_score_table, read_manifest, read_series
from score_cache import cache_path, dumps_score_table, list_caches, read_score_cache
from storage import atomic_write_many, dumps, read_json, stamp, write_json
from synthetic import SyntheticSpec, generate, write_dataset

logger = get_logger('Cli')

COMMANDS = ('score', 'fit', 'sweep', 'simulate', 'export')

DEFAULT_CONFIG = {
    'scoring': {
        'd_max': 3, 'delta': 0.99, 'delta_grid': [0.90, 0.95, 0.99, 1.0],
        'prior_state_mean': 0.0, 'prior_state_scale': 3.0,
        'prior_obs_shape': 1.0, 'prior_obs_scale': 1.0, 'obs_variance': None,
        'threads': None,
    },
    'hyperparameters': {'lambda': 0.0, 'eta': 0.0, 'd_max': 3},
    'solver': {
        'backend': 'ilp', 'time_limit': None, 'node_limit': None, 'gap': 0.0,
        'tolerance': 1e-9, 'brute_force_budget': 200_000_000, 'prototype_prior': 'multiplicity',
    },
    'sweep': {'parameter': 'lambda', 'grid': [0.0, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0], 'metric': 'shd'},
    'simulate': {
        'p': 5, 'subjects': 4, 'steps': 200, 'd_max': 3, 'edge_probability': 0.3,
        'divergence': 1.0, 'obs_variance': 1.0, 'drift_variance': 0.0,
        'coefficient_scale': 1.0, 'seed': 0,
    },
    'logging': {'dir': 'logs', 'level': 'INFO'},
}

# keys that never change results; kept out of output files
VOLATILE_KEYS = {('scoring', 'threads'), ('logging', 'dir'), ('logging', 'level')}


def _merge(base: dict, override: dict) -> dict:
    merged = copy.deepcopy(base)
    for key, value in (override or {}).items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def load_config(config_file: Optional[str]) -> dict:
    """Defaults overlaid with the config file, then with environment variables"""
    config = copy.deepcopy(DEFAULT_CONFIG)
    path = config_file or os.environ.get('MULTIDAG_CONFIG')
    if path is None and os.path.exists('config.json'):
        path = 'config.json'
    if path is not None:
        if not os.path.exists(path):
            raise InputError(f"config file not found: {path}")
        config = _merge(config, read_json(path))
    if os.environ.get('LOG_DIR'):
        config['logging']['dir'] = os.environ['LOG_DIR']
    if os.environ.get('MULTIDAG_THREADS'):
        try:
            config['scoring']['threads'] = int(os.environ['MULTIDAG_THREADS'])
        except ValueError:
            raise InputError(f"MULTIDAG_THREADS must be an integer, got {os.environ['MULTIDAG_THREADS']!r}")
    return config


def parse_grid(text: str) -> List[float]:
    try:
        return [float(v) for v in text.split(',') if v.strip()]
    except ValueError:
        raise InputError(f"bad grid {text!r}; expected comma-separated numbers")


@dataclass
class RunConfig:
    command: str
    settings: dict
    manifest: Optional[str] = None
    cache_dir: Optional[str] = None
    hyper: Optional[str] = None
    mode: str = 'joint'
    network: Optional[str] = None
    clusters: Optional[int] = None
    solution: Optional[str] = None
    out: str = 'results'
    seed: Optional[int] = None
    threads: Optional[int] = None
    inputs: dict = field(default_factory=dict)

    def validate(self):
        needs = {
            'score': ['manifest', 'cache_dir'],
            'fit': ['cache_dir'],
            'sweep': ['cache_dir'],
            'export': ['solution'],
        }.get(self.command, [])
        for name in needs:
            if getattr(self, name) is None:
                raise InputError(f"{self.command} needs --{name.replace('_', '-')}")
        for name in ('manifest', 'hyper', 'network', 'solution'):
            path = getattr(self, name)
            if path is not None and not os.path.exists(path):
                raise InputError(f"--{name} file not found: {path}")
        if self.command in ('fit', 'sweep') and not os.path.isdir(self.cache_dir):
            raise InputError(f"cache directory not found: {self.cache_dir}")
        if self.command == 'fit':
            if self.mode == 'fixed' and self.network is None:
                raise InputError("fixed mode needs --network")
            if self.mode == 'cluster' and not self.clusters:
                raise InputError("cluster mode needs --clusters")

    def embedded(self) -> dict:
        """Resolved configuration as written into output files"""
        settings = copy.deepcopy(self.settings)
        for section, key in VOLATILE_KEYS:
            settings.get(section, {}).pop(key, None)
        return {
            'command': self.command, 'manifest': self.manifest, 'cache_dir': self.cache_dir,
            'hyper': self.hyper, 'mode': self.mode, 'network': self.network,
            'clusters': self.clusters, 'seed': self.seed, 'settings': settings,
        }

    def limits(self) -> SolverLimits:
        return SolverLimits.from_dict(self.settings['solver'])


def build_run_config(args: argparse.Namespace) -> RunConfig:
    settings = load_config(args.config)
    solver = settings['solver']
    for flag, key in (('time_limit', 'time_limit'), ('node_limit', 'node_limit'), ('gap', 'gap'),
                      ('backend', 'backend'), ('prototype_prior', 'prototype_prior')):
        if getattr(args, flag, None) is not None:
            solver[key] = getattr(args, flag)
    hyper = settings['hyperparameters']
    hyper_flags = {}
    if getattr(args, 'lambda_', None) is not None:
        hyper_flags['lambda'] = args.lambda_
    if getattr(args, 'eta', None) is not None:
        hyper_flags['eta'] = args.eta
    if getattr(args, 'd_max', None) is not None:
        settings['scoring']['d_max'] = args.d_max
        hyper_flags['d_max'] = args.d_max
    hyper.update(hyper_flags)
    sweep = settings['sweep']
    if getattr(args, 'grid', None) is not None:
        sweep['grid'] = parse_grid(args.grid)
    if getattr(args, 'metric', None) is not None:
        sweep['metric'] = args.metric
    if getattr(args, 'param', None) is not None:
        sweep['parameter'] = args.param
    if args.threads is not None:
        settings['scoring']['threads'] = args.threads
    if args.log_dir is not None:
        settings['logging']['dir'] = args.log_dir
    if args.seed is not None:
        settings['simulate']['seed'] = args.seed
    for flag in ('p', 'subjects', 'steps', 'divergence'):
        if getattr(args, flag, None) is not None:
            settings['simulate'][flag] = getattr(args, flag)

    run = RunConfig(
        command=args.command, settings=settings,
        manifest=getattr(args, 'manifest', None), cache_dir=getattr(args, 'cache_dir', None),
        hyper=getattr(args, 'hyper', None), mode=getattr(args, 'mode', None) or 'joint',
        network=getattr(args, 'network', None), clusters=getattr(args, 'clusters', None),
        solution=getattr(args, 'solution', None), out=args.out,
        seed=settings['simulate']['seed'] if args.command == 'simulate' else args.seed,
        threads=settings['scoring']['threads'],
        inputs={'hyper_flags': hyper_flags},
    )
    run.validate()
    return run


# -- loading helpers --------------------------------------------------------

def load_network(path: str, k_total: int) -> SubjectNetwork:
    """Network file: {"k_total", "edges"} or replicate groups {"groups": [[1,2],[3,4]]}"""
    data = read_json(path)
    if 'groups' in data:
        network = replicate_network(data['groups'], k_total)
    else:
        network = SubjectNetwork.from_json(data)
    if network.k_total != k_total:
        raise InputError(f"{path}: network has {network.k_total} vertices, expected {k_total}")
    return network


def load_tables(run: RunConfig):
    paths = list_caches(run.cache_dir)
    if run.manifest is not None:
        subjects = [subject for subject, _ in read_manifest(run.manifest)]
        paths = [cache_path(run.cache_dir, s) for s in subjects]
        missing = [p for p in paths if not os.path.exists(p)]
        if missing:
            raise InputError(f"caches missing for manifest subjects: {missing}")
    if not paths:
        raise InputError(f"no score caches in {run.cache_dir}")
    tables = [read_score_cache(p) for p in paths]
    logger.info(f"Loaded {len(tables)} score tables from {run.cache_dir}")
    return tables


def resolve_hyperparameters(run: RunConfig) -> Hyperparameters:
    data = dict(run.settings['hyperparameters'])
    if run.hyper is not None:
        data = {**data, **read_json(run.hyper), **run.inputs.get('hyper_flags', {})}
    return Hyperparameters.from_dict(data)


def resolve_mode(run: RunConfig, k: int) -> SolveMode:
    if run.mode == 'fixed':
        return SolveMode.fixed(load_network(run.network, k))
    if run.mode == 'joint':
        return SolveMode.joint()
    if run.mode == 'cluster':
        return SolveMode.cluster(run.clusters)
    raise InputError(f"unknown mode {run.mode!r}")


def _variables(tables) -> Optional[List[str]]:
    names = tables[0].meta.get('variables')
    return list(names) if names else None


# -- commands -----------------------------------------------------------------

def cmd_score(run: RunConfig, run_logger) -> int:
    scoring = run.settings['scoring']
    dlm = DlmConfig.from_dict(scoring)
    entries = read_manifest(run.manifest)
    series = [read_series(path, subject) for subject, path in entries]
    files = []
    for s in series:
        d_max = min(int(scoring['d_max']), s.p - 1)
        table = build_score_table(s, d_max, dlm, threads=run.threads)
        files.append((cache_path(run.cache_dir, s.subject), dumps_score_table(table, run.embedded())))
    atomic_write_many(files)
    for path, _ in files:
        log_run(run_logger, 'score_written', path=path)
    print(f"✅ Wrote {len(files)} score caches to {run.cache_dir}")
    return 0


def _write_solution(run: RunConfig, tables, mode: SolveMode, hp: Hyperparameters, solution: dict,
                    dags: List[Dag], prototypes: List[Dag], network: SubjectNetwork):
    subjects = [t.subject for t in tables]
    labels = _variables(tables)
    record = {
        **stamp(run.embedded()),
        'subjects': subjects,
        'variables': labels,
        'mode': mode.to_dict(),
        'hyperparameters': hp.to_dict(),
        'solution': solution,
    }
    files = [(os.path.join(run.out, 'solution.json'), dumps(record))]
    files.extend(_dot_files(run.out, subjects, labels, dags, prototypes, network))
    atomic_write_many(files)
    return files[0][0]


def _dot_files(out_dir, subjects, labels, dags, prototypes, network):
    files = [(os.path.join(out_dir, f"{s}.dot"), g.to_dot(labels, name=s)) for s, g in zip(subjects, dags)]
    files.extend((os.path.join(out_dir, f"prototype{c}.dot"), g.to_dot(labels, name=f"prototype{c}"))
                 for c, g in enumerate(prototypes, start=1))
    vertex_labels = list(subjects) + [f"prototype{c}" for c in range(1, len(prototypes) + 1)]
    files.append((os.path.join(out_dir, 'network.dot'), network.to_dot(vertex_labels[:network.k_total])))
    return files


def cmd_fit(run: RunConfig, run_logger) -> int:
    tables = load_tables(run)
    hp = resolve_hyperparameters(run)
    mode = resolve_mode(run, len(tables))
    solver = run.settings['solver']
    limits = run.limits()
    if mode.kind == 'cluster':
        result = solve_clustering(tables, hp, ClusterSpec(mode.l_clusters, len(tables)), limits,
                                  prototype_prior=solver['prototype_prior'], backend=solver['backend'])
        solution = result.to_dict()
        dags, prototypes, network = list(result.subject_dags), list(result.prototypes), result.network()
        certificate, objective, stats = result.certificate, result.objective, result.stats
    else:
        estimate = fit(tables, hp, mode, limits, backend=solver['backend'])
        solution = estimate.to_dict()
        dags, prototypes, network = list(estimate.dags), [], estimate.network
        certificate, objective, stats = estimate.certificate, estimate.objective, estimate.stats
    path = _write_solution(run, tables, mode, hp, solution, dags, prototypes, network)
    log_run(run_logger, 'fit_finished', mode=mode.kind, objective=objective,
            certificate=certificate.label(), nodes=stats.nodes, wall_time=round(stats.wall_time, 3))
    print(f"✅ {mode.kind} fit: objective {objective:.10g}, {certificate.label()} -> {path}")
    return certificate.exit_code


def cmd_sweep(run: RunConfig, run_logger) -> int:
    tables = load_tables(run)
    hp = resolve_hyperparameters(run)
    sweep = run.settings['sweep']
    grid, metric, parameter = sweep['grid'], sweep['metric'], sweep['parameter']
    if not grid:
        raise InputError("sweep grid is empty")
    limits = run.limits()
    backend = run.settings['solver']['backend']
    threads = run.threads or os.cpu_count() or 1
    lam_star, eta_star = lambda_eta_star(tables)
    logger.info(f"lambda* = eta* = {lam_star:.10g}")

    if parameter == 'lambda':
        network = (load_network(run.network, len(tables)) if run.network
                   else SubjectNetwork.complete(len(tables)))
        result = lambda_sweep(tables, network, grid, metric, hp=hp, limits=limits, backend=backend,
                              threads=threads)
    elif parameter == 'eta':
        result = eta_sweep(tables, hp, grid, metric, limits=limits, backend=backend, threads=threads)
    else:
        raise InputError(f"sweep parameter must be lambda or eta, got {parameter!r}")

    embedded = {**run.embedded(), 'lambda_star': lam_star}
    csv_path = os.path.join(run.out, f"{parameter}_sweep.csv")
    script_path = os.path.join(run.out, f"{parameter}_sweep.gp")
    atomic_write_many([
        (csv_path, result.to_csv(embedded)),
        (script_path, gnuplot_script(os.path.basename(csv_path), parameter, metric)),
    ])
    for record in result.records:
        log_run(run_logger, 'sweep_point', parameter=parameter, value=record.value,
                distance=record.distance(metric), objective=record.objective, certificate=record.certificate)
    if parameter == 'lambda' and grid[0] == 0.0:
        try:
            logger.info(f"Elicited lambda (50% of replicate distance): {elicit_lambda(result)}")
        except InputError as e:
            logger.info(f"No elicited lambda: {e}")
    print(f"✅ {parameter} sweep over {len(grid)} points -> {csv_path}")
    proven = all(r.certificate == 'proven-optimal' for r in result.records)
    return 0 if proven else 1


def cmd_simulate(run: RunConfig, run_logger) -> int:
    sim = run.settings['simulate']
    spec = SyntheticSpec(
        p=int(sim['p']), k_subjects=int(sim['subjects']), n_steps=int(sim['steps']),
        d_max=int(sim['d_max']), edge_probability=float(sim['edge_probability']),
        divergence=float(sim['divergence']), obs_variance=float(sim['obs_variance']),
        drift_variance=float(sim['drift_variance']), coefficient_scale=float(sim['coefficient_scale']),
        seed=int(sim['seed']),
    )
    data = generate(spec)
    paths = write_dataset(data, run.out, run.embedded())
    log_run(run_logger, 'simulated', out=run.out, subjects=spec.k_subjects, seed=spec.seed)
    print(f"✅ Simulated {spec.k_subjects} subjects -> {paths[-2]}")
    return 0


def cmd_export(run: RunConfig, run_logger) -> int:
    record = read_json(run.solution)
    try:
        solution = record['solution']
        subjects = record['subjects']
        labels = record.get('variables')
        dags = [Dag.from_json(g) for g in solution['dags']]
        prototypes = [Dag.from_json(g) for g in solution.get('prototypes', [])]
        network = SubjectNetwork.from_json(solution['network'])
    except (KeyError, TypeError) as e:
        raise InputError(f"{run.solution}: not a solution file ({e})")
    names = list(subjects) + [f"prototype{c}" for c in range(1, len(prototypes) + 1)]
    rows = []
    for name, g in zip(names, dags + prototypes):
        for j, i in g.edges():
            rows.append({'graph': name,
                         'parent': labels[j - 1] if labels else j,
                         'child': labels[i - 1] if labels else i})
    buf = io.StringIO()
    pd.DataFrame(rows, columns=['graph', 'parent', 'child']).to_csv(buf, index=False, lineterminator='\n')
    files = _dot_files(run.out, subjects, labels, dags, prototypes, network)
    files.append((os.path.join(run.out, 'edges.csv'), buf.getvalue()))
    atomic_write_many(files)
    log_run(run_logger, 'exported', solution=run.solution, files=len(files))
    print(f"✅ Exported {len(files)} files -> {run.out}")
    return 0


HANDLERS = {'score': cmd_score, 'fit': cmd_fit, 'sweep': cmd_sweep,
            'simulate': cmd_simulate, 'export': cmd_export}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='multidag', description='Exact joint estimation of multiple DAGs')
    parser.add_argument('--config', help='config file (default: $MULTIDAG_CONFIG or ./config.json)')
    parser.add_argument('--log-dir', help='log directory (default: $LOG_DIR or logs)')
    parser.add_argument('--verbose', '-v', action='store_true', help='debug logging')
    parser.add_argument('--quiet', '-q', action='store_true', help='no console logging')
    sub = parser.add_subparsers(dest='command', required=True)

    def common(p, out_default='results'):
        p.add_argument('--out', default=out_default, help='output directory')
        p.add_argument('--threads', type=int, help='worker threads (default: available cores)')
        p.add_argument('--seed', type=int, help='random seed')

    def solving(p):
        p.add_argument('--cache-dir', help='directory of score caches')
        p.add_argument('--manifest', help='manifest fixing subject order')
        p.add_argument('--hyper', help='hyperparameter JSON file')
        p.add_argument('--lambda', dest='lambda_', type=float, help='scalar lambda')
        p.add_argument('--eta', type=float, help='scalar eta')
        p.add_argument('--d-max', type=int, help='in-degree cap')
        p.add_argument('--network', help='network JSON file (edges or replicate groups)')
        p.add_argument('--time-limit', type=float, help='seconds per solve')
        p.add_argument('--node-limit', type=int, help='branch-and-bound nodes per solve')
        p.add_argument('--gap', type=float, help='absolute optimality gap to stop at')
        p.add_argument('--backend', choices=['ilp', 'brute'], help='solver backend')
        p.add_argument('--metric', choices=['shd', 'xor'], help='distance metric')

    p = sub.add_parser('score', help='score every admissible parent set')
    p.add_argument('--manifest', help='CSV with subject,path columns')
    p.add_argument('--cache-dir', help='where to write score caches')
    p.add_argument('--d-max', type=int, help='in-degree cap')
    common(p)

    p = sub.add_parser('fit', help='certified MAP estimate')
    solving(p)
    p.add_argument('--mode', choices=['fixed', 'joint', 'cluster'], help='network mode')
    p.add_argument('--clusters', type=int, help='number of prototypes (cluster mode)')
    p.add_argument('--prototype-prior', choices=['multiplicity', 'flat'], help='prototype score')
    common(p)

    p = sub.add_parser('sweep', help='lambda or eta diagnostic sweep')
    solving(p)
    p.add_argument('--param', choices=['lambda', 'eta'], help='swept hyperparameter')
    p.add_argument('--grid', help='comma-separated grid values')
    common(p)

    p = sub.add_parser('simulate', help='generate synthetic multi-subject data')
    p.add_argument('--p', type=int, help='variables')
    p.add_argument('--subjects', type=int, help='subjects')
    p.add_argument('--steps', type=int, help='time points')
    p.add_argument('--divergence', type=float, help='expected toggles per subject')
    common(p, out_default='data')

    p = sub.add_parser('export', help='DOT files and edge list from a solution')
    p.add_argument('--solution', help='solution.json written by fit')
    common(p, out_default='export')
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    load_dotenv()
    args = build_parser().parse_args(argv)
    try:
        run = build_run_config(args)
        level = logging.DEBUG if args.verbose else getattr(
            logging, str(run.settings['logging']['level']).upper(), logging.INFO)
        _, run_logger = setup_logging(log_dir=run.settings['logging']['dir'], level=level,
                                      console=not args.quiet)
        logger.info(f"multidag {run.command}: {json.dumps(run.embedded(), sort_keys=True, default=str)}")
        return HANDLERS[run.command](run, run_logger)
    except MultiDagError as e:
        logger.error(f"{type(e).__name__}: {e}")
        print(f"❌ {type(e).__name__}: {e}", file=sys.stderr)
        return e.exit_code


if __name__ == '__main__':
    sys.exit(main())
