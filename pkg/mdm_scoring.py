"""
Multiregression dynamical model (MDM) scoring.

Each node i of subject k is a dynamic linear regression on an intercept
and its parent series, with random-walk coefficients. State noise is set
by a discount factor delta on the filtered covariance and the observation
variance is either unknown (conjugate inverse-gamma, Student-t one-step
predictives) or fixed (Gaussian predictives). The node log evidence is
the sum of one-step-ahead log predictive densities; local scores subtract
the binomial multiplicity term log C(P, |pi|).
"""

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import stats

from dag_core import members, popcount
from errors import InputError, NumericalError
from logging_config import get_logger

logger = get_logger('Scoring')

MIN_PREDICTIVE_VARIANCE = 1e-12
DEFAULT_DELTA_GRID = (0.90, 0.95, 0.99, 1.0)


@dataclass(frozen=True)
class TimeSeries:
    subject: str
    values: np.ndarray
    names: tuple = ()

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2:
            raise InputError(f"subject {self.subject}: expected an N x P matrix")
        if values.shape[0] < 1 or values.shape[1] < 1:
            raise InputError(f"subject {self.subject}: empty series")
        if not np.all(np.isfinite(values)):
            raise InputError(f"subject {self.subject}: series contains missing or non-finite values")
        values.setflags(write=False)
        object.__setattr__(self, 'values', values)
        if not self.names:
            object.__setattr__(self, 'names', tuple(f"Y{i}" for i in range(1, values.shape[1] + 1)))
        elif len(self.names) != values.shape[1]:
            raise InputError(f"subject {self.subject}: {len(self.names)} names for {values.shape[1]} columns")

    @property
    def n_steps(self) -> int:
        return self.values.shape[0]

    @property
    def p(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class DlmConfig:
    delta: float = 0.99
    prior_state_mean: float = 0.0
    prior_state_scale: float = 3.0
    prior_obs_shape: float = 1.0
    prior_obs_scale: float = 1.0
    delta_grid: Optional[tuple] = DEFAULT_DELTA_GRID
    # fixes the observation variance; None means unknown (Student-t predictives)
    obs_variance: Optional[float] = None

    def __post_init__(self):
        if not 0.0 < self.delta <= 1.0:
            raise InputError(f"delta must lie in (0, 1], got {self.delta}")
        if self.prior_state_scale <= 0:
            raise InputError("prior_state_scale must be positive")
        if self.prior_obs_shape <= 0 or self.prior_obs_scale <= 0:
            raise InputError("prior_obs_shape and prior_obs_scale must be positive")
        if self.obs_variance is not None and self.obs_variance <= 0:
            raise InputError("obs_variance must be positive")
        if self.delta_grid is not None:
            grid = tuple(float(d) for d in self.delta_grid)
            if not grid or any(not 0.0 < d <= 1.0 for d in grid):
                raise InputError(f"delta_grid entries must lie in (0, 1]: {self.delta_grid}")
            object.__setattr__(self, 'delta_grid', grid)

    def to_dict(self) -> dict:
        data = asdict(self)
        data['delta_grid'] = list(self.delta_grid) if self.delta_grid is not None else None
        return data

    @classmethod
    def from_dict(cls, data: dict) -> 'DlmConfig':
        known = {k: v for k, v in (data or {}).items() if k in cls.__dataclass_fields__}
        if known.get('delta_grid') is not None:
            known['delta_grid'] = tuple(known['delta_grid'])
        return cls(**known)


def one_step_log_density(y: float, forecast: float, scale2: float, dof: Optional[float]) -> float:
    """Log predictive density: Gaussian when dof is None, else Student-t"""
    if dof is None:
        return float(stats.norm.logpdf(y, loc=forecast, scale=math.sqrt(scale2)))
    return float(stats.t.logpdf(y, df=dof, loc=forecast, scale=math.sqrt(scale2)))


def _design(series: TimeSeries, parents: Sequence[int]) -> np.ndarray:
    """Regressor matrix: intercept column then parent columns"""
    cols = [np.ones(series.n_steps)] + [series.values[:, j - 1] for j in parents]
    return np.column_stack(cols)


def _filter_log_evidence(y: np.ndarray, design: np.ndarray, delta: float, config: DlmConfig,
                         node: int, parents: Sequence[int]) -> float:
    q = design.shape[1]
    m = np.full(q, config.prior_state_mean, dtype=float)
    # state covariance in units of the observation variance
    c = np.eye(q) * config.prior_state_scale
    n = config.prior_obs_shape
    d = config.prior_obs_scale
    known_v = config.obs_variance

    steps = len(y)
    forecasts = np.empty(steps)
    scales2 = np.empty(steps)
    dofs = np.empty(steps)
    for t in range(steps):
        f_vec = design[t]
        r = c / delta
        forecast = float(f_vec @ m)
        rf = r @ f_vec
        q_star = float(f_vec @ rf) + 1.0
        scale2 = known_v * q_star if known_v is not None else (d / n) * q_star
        if not np.isfinite(scale2) or scale2 < MIN_PREDICTIVE_VARIANCE:
            raise NumericalError("non-positive predictive variance",
                                 node=node, parents=list(parents), step=t + 1, variance=scale2)
        forecasts[t], scales2[t], dofs[t] = forecast, scale2, n
        err = y[t] - forecast

        gain = rf / q_star
        m = m + gain * err
        c = r - np.outer(gain, gain) * q_star
        c = 0.5 * (c + c.T)
        if known_v is None:
            n += 1.0
            d += err * err / q_star

    if known_v is not None:
        return float(stats.norm.logpdf(y, loc=forecasts, scale=np.sqrt(scales2)).sum())
    return float(stats.t.logpdf(y, df=dofs, loc=forecasts, scale=np.sqrt(scales2)).sum())


def node_log_evidence(series: TimeSeries, node: int, parent_set, config: DlmConfig,
                      delta: Optional[float] = None) -> float:
    """
    Sum over n of log p(Y_i(n) | Y_pi(n), Y(1:n-1)) for one node.

    ``parent_set`` is a bitmask or an iterable of 1-based vertices.
    ``delta`` overrides ``config.delta`` (used by the grid search).
    """
    if not 1 <= node <= series.p:
        raise InputError(f"node {node} outside 1..{series.p}")
    parents = members(parent_set) if isinstance(parent_set, (int, np.integer)) else sorted(parent_set)
    if node in parents:
        raise InputError(f"node {node} cannot be its own parent")
    if any(j < 1 or j > series.p for j in parents):
        raise InputError(f"parent set {parents} outside 1..{series.p}")
    y = series.values[:, node - 1]
    return _filter_log_evidence(y, _design(series, parents), config.delta if delta is None else delta,
                                config, node, parents)


def static_log_evidence(series: TimeSeries, node: int, parent_set, config: DlmConfig) -> float:
    """
    Closed-form marginal likelihood of the static (delta = 1) model:
    conjugate Bayesian linear regression. Multivariate normal when the
    observation variance is fixed, multivariate Student-t otherwise.
    """
    parents = members(parent_set) if isinstance(parent_set, (int, np.integer)) else sorted(parent_set)
    design = _design(series, parents)
    y = series.values[:, node - 1]
    mean = design @ np.full(design.shape[1], config.prior_state_mean)
    shape = np.eye(len(y)) + config.prior_state_scale * design @ design.T
    if config.obs_variance is not None:
        return float(stats.multivariate_normal.logpdf(y, mean=mean, cov=config.obs_variance * shape))
    scale = config.prior_obs_scale / config.prior_obs_shape
    return float(stats.multivariate_t.logpdf(y, loc=mean, shape=scale * shape, df=config.prior_obs_shape))


def log_binomial(p: int, size: int) -> float:
    return math.log(math.comb(p, size))


@dataclass
class ScoreTable:
    """
    Local scores s(i, pi) for one subject. ``scores[i][mask]`` holds every
    admissible parent set of node i; anything with |pi| > d_max is -inf.
    """
    subject: str
    p: int
    d_max: int
    scores: Dict[int, Dict[int, float]]
    deltas: Dict[Tuple[int, int], float] = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.d_max < 0 or self.d_max > max(self.p - 1, 0):
            raise InputError(f"d_max={self.d_max} invalid for P={self.p}")
        expected = admissible_keys(self.p, self.d_max)
        for i, mask in expected:
            value = self.scores.get(i, {}).get(mask)
            if value is None or not np.isfinite(value):
                raise InputError(f"score table {self.subject}: missing finite entry for node {i}, parents {members(mask)}")
        allowed = set(expected)
        extra = [(i, m) for i, row in self.scores.items() for m in row if (i, m) not in allowed]
        if extra:
            raise InputError(f"score table {self.subject}: entries outside the admissible set: {extra[:3]}")

    def score(self, node: int, mask: int) -> float:
        if popcount(mask) > self.d_max:
            return -math.inf
        return self.scores[node][mask]

    def parent_sets(self, node: int, d_max: Optional[int] = None) -> List[int]:
        cap = self.d_max if d_max is None else min(d_max, self.d_max)
        return [m for m in sorted(self.scores[node]) if popcount(m) <= cap]

    def n_entries(self) -> int:
        return sum(len(row) for row in self.scores.values())

    @classmethod
    def from_entries(cls, subject, p, d_max, entries, **kwargs) -> 'ScoreTable':
        """Build from {(node, parents): score} where parents is an iterable or mask"""
        scores: Dict[int, Dict[int, float]] = {i: {} for i in range(1, p + 1)}
        for (node, parents), value in entries.items():
            mask = parents if isinstance(parents, int) else sum(1 << (j - 1) for j in parents)
            scores[node][mask] = float(value)
        return cls(subject, p, d_max, scores, **kwargs)

    @classmethod
    def prototype(cls, subject, p, d_max) -> 'ScoreTable':
        """No data term: s(i, pi) = -log C(P, |pi|)"""
        entries = {(i, m): -log_binomial(p, popcount(m)) for i, m in admissible_keys(p, d_max)}
        return cls.from_entries(subject, p, d_max, entries, meta={'prototype': True})

    @classmethod
    def flat(cls, subject, p, d_max) -> 'ScoreTable':
        entries = {key: 0.0 for key in admissible_keys(p, d_max)}
        return cls.from_entries(subject, p, d_max, entries, meta={'prototype': True})

    @classmethod
    def combine(cls, tables: Sequence['ScoreTable'], subject='combined') -> 'ScoreTable':
        """Sum of several tables over their common admissible keys"""
        if not tables:
            raise InputError("nothing to combine")
        p = tables[0].p
        if any(t.p != p for t in tables):
            raise InputError("cannot combine tables with different P")
        d_max = min(t.d_max for t in tables)
        entries = {(i, m): sum(t.scores[i][m] for t in tables) for i, m in admissible_keys(p, d_max)}
        return cls.from_entries(subject, p, d_max, entries)


def admissible_keys(p: int, d_max: int) -> List[Tuple[int, int]]:
    """All (node, mask) with node not in mask and |mask| <= d_max, in cache order"""
    keys = []
    for i in range(1, p + 1):
        own = 1 << (i - 1)
        keys.extend((i, m) for m in range(1 << p) if not m & own and popcount(m) <= d_max)
    return keys


def _score_entry(series, node, mask, config, p):
    grid = config.delta_grid if config.delta_grid is not None else (config.delta,)
    best, best_delta = -math.inf, None
    for delta in grid:
        try:
            value = node_log_evidence(series, node, mask, config, delta=delta)
        except NumericalError as e:
            raise NumericalError(f"scoring failed for subject {series.subject}",
                                 node=node, parents=members(mask), cause=str(e))
        if value > best:
            best, best_delta = value, delta
    return best - log_binomial(p, popcount(mask)), best_delta


def build_score_table(series: TimeSeries, d_max: int, config: DlmConfig,
                      threads: Optional[int] = None) -> ScoreTable:
    """
    Score every admissible (node, parent set) pair. Pairs are independent
    and scored on a thread pool; the table does not depend on scheduling.
    """
    p = series.p
    if d_max < 0 or d_max > max(p - 1, 0):
        raise InputError(f"d_max={d_max} must lie in 0..{p - 1}")
    keys = admissible_keys(p, d_max)
    workers = threads or os.cpu_count() or 1
    logger.info(f"Scoring subject {series.subject}: P={p}, N={series.n_steps}, "
                f"{len(keys)} parent sets, {workers} threads")

    with ThreadPoolExecutor(max_workers=workers) as pool:
        results = list(pool.map(lambda key: _score_entry(series, key[0], key[1], config, p), keys))

    scores: Dict[int, Dict[int, float]] = {i: {} for i in range(1, p + 1)}
    deltas = {}
    for (i, mask), (value, delta) in zip(keys, results):
        scores[i][mask] = value
        deltas[(i, mask)] = delta
    meta = {'dlm': config.to_dict(), 'd_max': d_max, 'n_steps': series.n_steps,
            'variables': list(series.names)}
    return ScoreTable(series.subject, p, d_max, scores, deltas=deltas, meta=meta)


def read_manifest(path) -> List[Tuple[str, str]]:
    """
    Manifest CSV with columns ``subject,path``; relative paths resolve
    against the manifest's directory.
    """
    try:
        frame = pd.read_csv(path, dtype=str)
    except FileNotFoundError:
        raise InputError(f"manifest not found: {path}")
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise InputError(f"{path}: unreadable manifest: {e}")
    if not {'subject', 'path'} <= set(frame.columns):
        raise InputError(f"{path}: manifest needs 'subject' and 'path' columns")
    if frame['subject'].duplicated().any():
        raise InputError(f"{path}: duplicate subject ids")
    base = os.path.dirname(os.path.abspath(path))
    return [(row.subject, row.path if os.path.isabs(row.path) else os.path.join(base, row.path))
            for row in frame.itertuples(index=False)]


def read_series(path, subject: str) -> TimeSeries:
    """N rows x P columns with a header row of variable names"""
    try:
        frame = pd.read_csv(path)
    except FileNotFoundError:
        raise InputError(f"series file not found: {path}")
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise InputError(f"{path}: unreadable series: {e}")
    try:
        values = frame.to_numpy(dtype=float)
    except ValueError as e:
        raise InputError(f"{path}: non-numeric entries: {e}")
    try:
        return TimeSeries(subject, values, tuple(str(c) for c in frame.columns))
    except InputError as e:
        raise InputError(f"{path}: {e}")
