"""
Hyperparameter elicitation diagnostics.

- lambda sweeps over a fixed (replicate) network, reporting how far apart
  the linked DAGs are at each lambda
- eta sweeps in joint mode, reporting the component partition of the
  estimated network
- MAP log-score differences between settings. These compare unnormalized
  log posteriors at each setting's MAP configuration; they are not
  marginal likelihood ratios.
"""

import io
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
import pandas as pd

from dag_core import distance
from errors import InputError, MultiDagError
from exact_solver import MapEstimate, SolverLimits, fit
from ilp_encoding import SolveMode
from joint_prior import Hyperparameters, SubjectNetwork, log_network_prior, partition_string
from logging_config import get_logger
from mdm_scoring import ScoreTable
from storage import stamp

logger = get_logger('Diagnostics')

METRICS = ('shd', 'xor')
SWEEP_COLUMNS = ['value', 'total_shd', 'total_xor', 'objective', 'partition']


@dataclass(frozen=True)
class SweepRecord:
    value: float
    total_shd: int
    total_xor: int
    objective: float
    partition: str
    certificate: str
    estimate: Optional[MapEstimate] = field(default=None, compare=False)

    def distance(self, metric: str) -> int:
        return self.total_shd if metric == 'shd' else self.total_xor


@dataclass
class SweepResult:
    parameter: str
    metric: str
    records: List[SweepRecord]

    @property
    def grid(self) -> List[float]:
        return [r.value for r in self.records]

    def distances(self, metric: Optional[str] = None) -> List[int]:
        return [r.distance(metric or self.metric) for r in self.records]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([[r.value, r.total_shd, r.total_xor, r.objective, r.partition]
                             for r in self.records], columns=SWEEP_COLUMNS)

    def to_csv(self, config: Optional[dict] = None) -> str:
        """CSV with '#' comment lines carrying the tool stamp and configuration"""
        header = {'parameter': self.parameter, 'metric': self.metric, **stamp(config)}
        buf = io.StringIO()
        buf.write(f"# {json.dumps(header, sort_keys=True)}\n")
        self.to_frame().to_csv(buf, index=False, float_format='%.17g', lineterminator='\n')
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> 'SweepResult':
        lines = text.splitlines()
        header = {}
        if lines and lines[0].startswith('#'):
            header = json.loads(lines[0][1:])
        frame = pd.read_csv(io.StringIO(text), comment='#', dtype={'partition': str})
        records = [SweepRecord(float(row.value), int(row.total_shd), int(row.total_xor),
                               float(row.objective), str(row.partition), 'unknown')
                   for row in frame.itertuples(index=False)]
        return cls(header.get('parameter', 'lambda'), header.get('metric', 'shd'), records)


def _check_grid(grid: Sequence[float]) -> List[float]:
    grid = [float(v) for v in grid]
    if not grid:
        raise InputError("sweep grid is empty")
    if any(not np.isfinite(v) for v in grid):
        raise InputError("sweep grid has non-finite values")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise InputError(f"sweep grid must be strictly increasing: {grid}")
    return grid


def _check_metric(metric: str):
    if metric not in METRICS:
        raise InputError(f"metric must be one of {METRICS}, got {metric!r}")


def total_distance(estimate: MapEstimate, network: SubjectNetwork):
    """(shd, xor) summed over the linked pairs"""
    shd = xor = 0
    for k, l in network.sorted_edges():
        report = distance(estimate.dags[k - 1], estimate.dags[l - 1])
        shd += report.shd
        xor += report.xor_count
    return shd, xor


def _record(value, estimate: MapEstimate, network: SubjectNetwork) -> SweepRecord:
    shd, xor = total_distance(estimate, network)
    return SweepRecord(value, shd, xor, estimate.objective, partition_string(network.components()),
                       estimate.certificate.label(), estimate)


def _run_grid(name, grid, point, threads):
    def guarded(value):
        try:
            return point(value)
        except MultiDagError as e:
            e.args = (f"{name}={value}: {e.args[0] if e.args else e}",) + tuple(e.args[1:])
            raise
    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(guarded, grid))
    return [guarded(v) for v in grid]


def lambda_sweep(tables: Sequence[ScoreTable], a_fixed: SubjectNetwork, grid: Sequence[float],
                 metric: str = 'shd', hp: Optional[Hyperparameters] = None,
                 limits: Optional[SolverLimits] = None, backend: str = 'ilp',
                 threads: int = 1) -> SweepResult:
    """Solve the fixed-network problem at each scalar lambda"""
    _check_metric(metric)
    grid = _check_grid(grid)
    base = hp or Hyperparameters()
    mode = SolveMode.fixed(a_fixed)

    def point(value):
        estimate = fit(tables, base.with_lambda(value), mode, limits, backend=backend)
        record = _record(value, estimate, a_fixed)
        logger.debug(f"lambda={value}: shd={record.total_shd}, xor={record.total_xor}")
        return record

    records = _run_grid('lambda', grid, point, threads)
    logger.info(f"lambda sweep over {len(grid)} points: {metric} = {[r.distance(metric) for r in records]}")
    return SweepResult('lambda', metric, records)


def eta_sweep(tables: Sequence[ScoreTable], hp: Hyperparameters, grid: Sequence[float],
              metric: str = 'shd', limits: Optional[SolverLimits] = None, backend: str = 'ilp',
              threads: int = 1) -> SweepResult:
    """Solve the joint problem at each scalar eta with lambda held fixed"""
    _check_metric(metric)
    grid = _check_grid(grid)

    def point(value):
        estimate = fit(tables, hp.with_eta(value), SolveMode.joint(), limits, backend=backend)
        record = _record(value, estimate, estimate.network)
        logger.debug(f"eta={value}: partition {record.partition}")
        return record

    records = _run_grid('eta', grid, point, threads)
    logger.info(f"eta sweep over {len(grid)} points: {[r.partition for r in records]}")
    return SweepResult('eta', metric, records)


@dataclass(frozen=True)
class ComparisonSetting:
    """
    One hyperparameter setting. ``identical`` forces every subject onto
    one common DAG (solved as a single subject on summed scores) with
    every subject pair linked, so the eta prior covers all pairs.
    """
    name: str
    hp: Hyperparameters = field(default_factory=Hyperparameters)
    mode: Optional[SolveMode] = None
    identical: bool = False


def _setting_objective(tables, setting: ComparisonSetting, limits, backend) -> float:
    if setting.identical:
        combined = ScoreTable.combine(tables)
        hp = Hyperparameters(d_max=setting.hp.d_max)
        objective = fit([combined], hp, SolveMode.fixed(SubjectNetwork.empty(1)), limits, backend=backend).objective
        return objective + log_network_prior(SubjectNetwork.complete(len(tables)), setting.hp)
    mode = setting.mode or SolveMode.joint()
    return fit(tables, setting.hp, mode, limits, backend=backend).objective


def log_score_comparison(tables: Sequence[ScoreTable], settings: Sequence[ComparisonSetting],
                         baseline: Optional[str] = None, limits: Optional[SolverLimits] = None,
                         backend: str = 'ilp') -> pd.DataFrame:
    """
    MAP objective per setting and its difference against the baseline
    setting (first one by default). Positive differences favor the setting
    over the baseline.
    """
    if not settings:
        raise InputError("no settings to compare")
    names = [s.name for s in settings]
    if len(set(names)) != len(names):
        raise InputError(f"duplicate setting names: {names}")
    baseline = baseline or names[0]
    if baseline not in names:
        raise InputError(f"baseline {baseline!r} is not among the settings")
    objectives = [_setting_objective(tables, s, limits, backend) for s in settings]
    reference = objectives[names.index(baseline)]
    frame = pd.DataFrame({'setting': names, 'objective': objectives})
    frame['difference'] = frame['objective'] - reference
    logger.info(f"MAP log-score differences against {baseline}: "
                f"{dict(zip(names, frame['difference'].round(6)))}")
    return frame


def elicit_lambda(sweep: SweepResult, fraction: float = 0.5, metric: Optional[str] = None) -> float:
    """
    Smallest grid lambda at which the linked-pair distance has dropped to at
    most ``fraction`` of its value at lambda = 0.
    """
    if sweep.parameter != 'lambda':
        raise InputError("elicitation needs a lambda sweep")
    if not 0.0 <= fraction <= 1.0:
        raise InputError("fraction must lie in [0, 1]")
    if not sweep.records or sweep.records[0].value != 0.0:
        raise InputError("lambda sweep must start at 0 for elicitation")
    distances = sweep.distances(metric)
    target = fraction * distances[0]
    for value, d in zip(sweep.grid, distances):
        if d <= target:
            return value
    raise InputError(f"no grid point reaches {fraction:.0%} of the lambda=0 distance; extend the grid")


def gnuplot_script(csv_path: str, parameter: str, metric: str = 'shd', output: Optional[str] = None) -> str:
    """Plot script: linked-pair distance and MAP objective against the swept parameter"""
    _check_metric(metric)
    column = 2 if metric == 'shd' else 3
    symbol = 'lambda' if parameter == 'lambda' else 'eta'
    output = output or f"{parameter}_sweep.png"
    return "\n".join([
        "set datafile separator ','",
        "set datafile commentschars '#'",
        "set key autotitle columnhead",
        "set terminal pngcairo size 900,400",
        f"set output '{output}'",
        "set multiplot layout 1,2",
        f"set xlabel '{symbol}'",
        f"set ylabel 'total {metric.upper()} between linked DAGs'",
        f"plot '{csv_path}' using 1:{column} with linespoints title '{metric}'",
        "set ylabel 'MAP log score'",
        f"plot '{csv_path}' using 1:4 with linespoints title 'objective'",
        "unset multiplot",
        "",
    ])
