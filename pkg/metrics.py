"""Regret-ratio series, misidentification counters, aggregation and CSV tables."""

import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from utils import UsageError

logger = logging.getLogger(__name__)

RUN_COLUMNS = [
    'algorithm', 'nu', 'lambda', 'seed', 'replication', 't', 'regret', 'ratio',
    'collisions', 'misid_Nk_max', 'disagreements',
]
AGGREGATE_COLUMNS = ['algorithm', 'nu', 't', 'ratio_mean', 'ratio_stderr']
FLOAT_FORMAT = '%.9g'

@dataclass(frozen=True)
class RatioSeries:
    """R(t) / (t^((1+nu)/2) ln t) for t = 2..T"""
    times: np.ndarray
    ratio: np.ndarray
    nu: float

@dataclass(frozen=True)
class AggregateSeries:
    times: np.ndarray
    mean: np.ndarray
    stderr: np.ndarray
    replications: int

@dataclass
class MisidentCounters:
    """Cumulative counters per step (column t-1 holds the value up to t).

    nk[k-1]: steps where player k's Omega_k differed from the true top-M set.
    nhat[k-1]: steps where player k did not select the true rank-k arm.
    disagreements: steps where the players holding an Omega_k did not all agree.
    """
    nk: np.ndarray
    nhat: np.ndarray
    disagreements: np.ndarray
    tracks_top_set: bool = False

    @classmethod
    def empty(cls, num_players: int, horizon: int) -> 'MisidentCounters':
        return cls(
            nk=np.zeros((num_players, horizon), dtype=np.int64),
            nhat=np.zeros((num_players, horizon), dtype=np.int64),
            disagreements=np.zeros(horizon, dtype=np.int64),
        )

    def final_nk(self) -> List[int]:
        return [int(v) for v in self.nk[:, -1]]

    def final_nhat(self) -> List[int]:
        return [int(v) for v in self.nhat[:, -1]]

    def headline(self) -> np.ndarray:
        """max_k N_k(t) for round-robin style policies, max_k N-hat_k(t) otherwise"""
        source = self.nk if self.tracks_top_set else self.nhat
        return source.max(axis=0)

class MisidentTracker:
    """Incremental misidentification counting, fed one step at a time"""

    def __init__(self, num_players: int, horizon: int):
        self.num_players = num_players
        self.counters = MisidentCounters.empty(num_players, horizon)
        self._nk = [0] * num_players
        self._nhat = [0] * num_players
        self._disagreements = 0

    def update(self, t: int, selections: Sequence[int], top_sets: Sequence[Optional[Tuple[int, ...]]],
               ranking: Sequence[int]) -> None:
        true_top = tuple(sorted(ranking[:self.num_players]))

        held = []
        for k in range(self.num_players):
            if selections[k] != ranking[k]:
                self._nhat[k] += 1
            estimate = top_sets[k]
            if estimate is not None:
                held.append(tuple(estimate))
                if tuple(estimate) != true_top:
                    self._nk[k] += 1

        if held:
            self.counters.tracks_top_set = True
            if any(estimate != held[0] for estimate in held[1:]):
                self._disagreements += 1

        column = t - 1
        self.counters.nk[:, column] = self._nk
        self.counters.nhat[:, column] = self._nhat
        self.counters.disagreements[column] = self._disagreements

def regret_ratio(ledger, nu: float) -> RatioSeries:
    """Normalize cumulative regret by t^((1+nu)/2) ln t (natural log), t >= 2"""
    regret = np.asarray(ledger.cumulative_regret, dtype=float)
    horizon = regret.shape[0]
    if horizon < 2:
        raise UsageError("the regret ratio needs a ledger with T >= 2")

    times = np.arange(2, horizon + 1)
    normalizer = times ** ((1.0 + nu) / 2.0) * np.log(times)
    return RatioSeries(times=times, ratio=regret[1:] / normalizer, nu=nu)

def misident_counts(trace, timeline) -> MisidentCounters:
    """Recount misidentifications from a retained step trace"""
    if trace is None:
        raise UsageError("misidentification counts need a retained trace (run with trace retention on)")
    if not trace:
        raise UsageError("empty trace")

    tracker = MisidentTracker(len(trace[0].selections), len(trace))
    for outcome in trace:
        tracker.update(outcome.t, outcome.selections, outcome.top_sets, timeline.ranking_at(outcome.t))

    return tracker.counters

def aggregate(runs: Sequence[RatioSeries]) -> AggregateSeries:
    """Pointwise mean and standard error across replications"""
    if not runs:
        raise UsageError("aggregate needs at least one run")

    times = runs[0].times
    for series in runs[1:]:
        if series.times.shape != times.shape or not np.array_equal(series.times, times):
            raise UsageError("runs have mismatched time grids")

    stacked = np.vstack([series.ratio for series in runs])
    mean = stacked.mean(axis=0)
    if len(runs) > 1:
        stderr = stacked.std(axis=0, ddof=1) / math.sqrt(len(runs))
    else:
        stderr = np.zeros_like(mean)

    return AggregateSeries(times=times, mean=mean, stderr=stderr, replications=len(runs))

def growth_exponent(times: Sequence[float], values: Sequence[float], t_lo: float, t_hi: float) -> float:
    """Least-squares slope of log(values) against log(times) over [t_lo, t_hi]"""
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    mask = (times >= t_lo) & (times <= t_hi) & (values > 0)
    if mask.sum() < 2:
        raise UsageError(f"need two positive points in [{t_lo}, {t_hi}] to fit a slope")

    slope, _ = np.polyfit(np.log(times[mask]), np.log(values[mask]), 1)
    return float(slope)

def misident_upper_bound(num_arms: int, num_players: int, horizon: int, lam: float, alpha: float,
                         delta_min: float, num_breakpoints: int) -> float:
    """Closed-form bound on N_k(T) for the round-robin policy"""
    n, m, big_t = num_arms, num_players, horizon
    epochs = big_t ** (1.0 - alpha) / (lam * (1.0 - alpha)) + 1.0
    per_epoch = 1.0 + 4.0 * m * (1.0 + alpha) * math.log(big_t) / delta_min ** 2
    tail = math.pi ** 2 / 3.0 * ((lam + m + 1.0) / m) ** 2
    biased = num_breakpoints * (math.ceil(lam * (big_t - 1) ** alpha) + m - 1)
    return (n - m) * (epochs * per_epoch + tail) + biased + n

def run_table(algorithm: str, nu: float, lam: float, seed: int, replication: int,
              ledger, ratio: RatioSeries, times: Sequence[int]) -> pd.DataFrame:
    """Rows of the per-run CSV for the given (decimated) times"""
    index = np.asarray(times, dtype=np.int64)
    rows = len(index)

    return pd.DataFrame({
        'algorithm': [algorithm] * rows,
        'nu': np.full(rows, nu, dtype=float),
        'lambda': np.full(rows, lam, dtype=float),
        'seed': np.full(rows, seed, dtype=np.uint64),
        'replication': np.full(rows, replication, dtype=np.int64),
        't': index,
        'regret': ledger.cumulative_regret[index - 1],
        # ratio starts at t=2
        'ratio': ratio.ratio[index - 2],
        'collisions': ledger.collisions[index - 1],
        'misid_Nk_max': ledger.misident.headline()[index - 1],
        'disagreements': ledger.misident.disagreements[index - 1],
    }, columns=RUN_COLUMNS)

def aggregate_table(algorithm: str, nu: float, series: AggregateSeries, times: Sequence[int]) -> pd.DataFrame:
    index = np.asarray(times, dtype=np.int64)
    positions = index - series.times[0]
    rows = len(index)

    return pd.DataFrame({
        'algorithm': [algorithm] * rows,
        'nu': np.full(rows, nu, dtype=float),
        't': index,
        'ratio_mean': series.mean[positions],
        'ratio_stderr': series.stderr[positions],
    }, columns=AGGREGATE_COLUMNS)

def write_csv(table: pd.DataFrame, path) -> None:
    """Write a table with the fixed float format and Unix line endings"""
    table.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator='\n')
