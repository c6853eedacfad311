"""Experiment runner: algorithm x nu x replication sweeps written to CSV plus a manifest."""

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import yaml
from tqdm import tqdm

from env import DEFAULT_MEAN_POOL, EnvConfig, RewardModel, breakpoint_count, dump_timeline, generate_timeline
from metrics import (
    RatioSeries, aggregate, aggregate_table, growth_exponent, misident_counts, misident_upper_bound, regret_ratio,
    run_table, write_csv,
)
from policies import PolicyKind, TIE_BREAKS
from sim import run_episode
from utils import (
    ConfigurationError, UsageError, decimation_grid, default_decimation, derive_seed, format_nu,
    parse_float_list, parse_reward_model,
)

logger = logging.getLogger(__name__)

ARTIFACT_VERSION = "0.1.0"
SEED_ENV_VAR = "SWARMBANDIT_SEED"

DEFAULT_ALGORITHMS = (PolicyKind.RR_SW_UCB_SHARP, PolicyKind.SW_DLP)
DEFAULT_NU_GRID = (0.15, 0.3, 0.45)
DEFAULT_ARMS = 6
DEFAULT_PLAYERS = 3
DEFAULT_HORIZON = 100_000
DEFAULT_LAMBDA = 12.3
DEFAULT_REPLICATIONS = 20
DEFAULT_OUTPUT_DIR = "results"

# Config-file keys and the ExperimentSpec fields they fill
CONFIG_KEYS = {
    'algorithms': 'algorithms',
    'nu': 'nu_grid',
    'arms': 'num_arms',
    'players': 'num_players',
    'horizon': 'horizon',
    'lambda': 'lam',
    'mean_pool': 'mean_pool',
    'reward_model': 'reward_model',
    'replications': 'replications',
    'seed': 'master_seed',
    'decimate': 'decimate',
    'retain_trace': 'retain_trace',
    'dump_env': 'dump_env',
    'tie_break': 'tie_break',
    'workers': 'workers',
    'out': 'output_dir',
}

@dataclass(frozen=True)
class RunTask:
    algorithm: PolicyKind
    nu: float
    replication: int
    env_seed: int
    seed: int

    @property
    def name(self) -> str:
        return f"{self.algorithm.value}_nu{format_nu(self.nu)}_rep{self.replication}"

@dataclass(frozen=True)
class ExperimentSpec:
    algorithms: Tuple[PolicyKind, ...] = DEFAULT_ALGORITHMS
    nu_grid: Tuple[float, ...] = DEFAULT_NU_GRID
    num_arms: int = DEFAULT_ARMS
    num_players: int = DEFAULT_PLAYERS
    horizon: int = DEFAULT_HORIZON
    lam: float = DEFAULT_LAMBDA
    mean_pool: Tuple[float, ...] = DEFAULT_MEAN_POOL
    reward_model: RewardModel = field(default_factory=RewardModel)
    replications: int = DEFAULT_REPLICATIONS
    master_seed: int = 0
    output_dir: Path = Path(DEFAULT_OUTPUT_DIR)
    decimate: Optional[int] = None
    retain_trace: bool = False
    dump_env: bool = False
    workers: int = 1
    tie_break: str = 'index'

    def validate(self) -> List[str]:
        """Every violated constraint, in a stable order"""
        errors = []
        if not self.algorithms:
            errors.append("at least one algorithm is required")
        if not self.nu_grid:
            errors.append("at least one nu is required")
        if self.num_players < 1:
            errors.append("M must be ≥ 1")
        if self.num_players > self.num_arms:
            errors.append("M must be ≤ N")
        for nu in self.nu_grid:
            if not (0.0 <= nu < 1.0):
                errors.append(f"nu must be in [0, 1), got {nu}")
        if self.lam <= 0:
            errors.append(f"lambda must be > 0, got {self.lam}")
        if len(self.mean_pool) < self.num_arms:
            errors.append(f"mean pool has {len(self.mean_pool)} values, need at least N={self.num_arms}")
        if any(v < 0.0 or v > 1.0 for v in self.mean_pool):
            errors.append("mean pool values must lie in [0, 1]")
        if len(set(self.mean_pool)) != len(self.mean_pool):
            errors.append("mean pool values must be distinct")
        if self.horizon < self.num_arms:
            errors.append(f"T must be ≥ N (T={self.horizon}, N={self.num_arms})")
        if self.horizon < 2:
            errors.append("T must be ≥ 2")
        if self.replications < 1:
            errors.append("replications must be ≥ 1")
        if not (0 <= self.master_seed < 2 ** 64):
            errors.append("seed must be a 64-bit unsigned integer")
        if self.decimate is not None and self.decimate < 1:
            errors.append("decimate must be ≥ 1")
        if self.workers < 1:
            errors.append("workers must be ≥ 1")
        if self.tie_break not in TIE_BREAKS:
            errors.append(f"tie-break must be one of {', '.join(TIE_BREAKS)}")
        return errors

    def alpha_for(self, algorithm: PolicyKind, nu: float) -> Optional[float]:
        """Window exponent used by a windowed algorithm at this nu"""
        if PolicyKind.parse(algorithm).windowed:
            return (1.0 - nu) / 2.0
        return None

    @property
    def decimation(self) -> int:
        return self.decimate if self.decimate is not None else default_decimation(self.horizon)

    def env_config(self, nu: float, seed: int) -> EnvConfig:
        return EnvConfig(
            num_arms=self.num_arms,
            num_players=self.num_players,
            horizon=self.horizon,
            nu=nu,
            mean_pool=self.mean_pool,
            reward_model=self.reward_model,
            seed=seed,
        )

    def tasks(self) -> List[RunTask]:
        """Run list in output order: algorithm, then nu, then replication"""
        tasks = []
        for algorithm in self.algorithms:
            for nu in self.nu_grid:
                for replication in range(1, self.replications + 1):
                    tasks.append(RunTask(
                        algorithm=algorithm,
                        nu=nu,
                        replication=replication,
                        env_seed=derive_seed(self.master_seed, 'env', nu, replication),
                        seed=derive_seed(self.master_seed, algorithm.value, nu, replication),
                    ))
        return tasks

    def to_config(self) -> Dict[str, Any]:
        """Merged settings in config-file form (execution-only settings left out)"""
        return {
            'algorithms': [algorithm.value for algorithm in self.algorithms],
            'nu': list(self.nu_grid),
            'arms': self.num_arms,
            'players': self.num_players,
            'horizon': self.horizon,
            'lambda': self.lam,
            'mean_pool': list(self.mean_pool),
            'reward_model': self.reward_model.label(),
            'replications': self.replications,
            'seed': self.master_seed,
            'decimate': self.decimation,
            'retain_trace': self.retain_trace,
            'dump_env': self.dump_env,
            'tie_break': self.tie_break,
        }

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="swarmbandit",
        description="Multi-player sliding-window bandit experiments in abruptly-changing environments.",
    )
    parser.add_argument('--config', help="YAML (or JSON) file with settings; flags override it")
    parser.add_argument('--algorithm', action='append', dest='algorithms',
                        help="ucb|dlp|sw-ucb-sharp|rr-sw-ucb-sharp|sw-dlp|oracle (repeatable)")
    parser.add_argument('--arms', type=int, help="number of arms N")
    parser.add_argument('--players', type=int, help="number of players M")
    parser.add_argument('--horizon', type=int, help="horizon T")
    parser.add_argument('--nu', type=float, action='append', help="breakpoint exponent (repeatable)")
    parser.add_argument('--lambda', type=float, dest='lam', help="window scale lambda")
    parser.add_argument('--mean-pool', help="comma separated pool of mean rewards")
    parser.add_argument('--reward-model', help="bernoulli or gaussian:SIGMA")
    parser.add_argument('--replications', type=int)
    parser.add_argument('--seed', type=int, help=f"master seed (falls back to ${SEED_ENV_VAR})")
    parser.add_argument('--out', help="output directory")
    parser.add_argument('--decimate', type=int, help="emit every n-th time step (1 = full series)")
    parser.add_argument('--retain-trace', action='store_true', default=None,
                        help="keep the step trace and write it next to the run CSV")
    parser.add_argument('--dump-env', action='store_true', default=None,
                        help="write each generated environment as text")
    parser.add_argument('--workers', type=int, help="parallel worker processes (default: all cores)")
    parser.add_argument('--tie-break', choices=TIE_BREAKS)
    parser.add_argument('--summary', action='store_true', help="print JSON-lines summaries on stdout")
    parser.add_argument('--verbose', action='store_true')
    parser.add_argument('--quiet', action='store_true')
    return parser

def load_config_file(path: str) -> Dict[str, Any]:
    """Read a YAML config; a written manifest is accepted too (its 'spec' section)"""
    try:
        with open(path, 'r') as f:
            data = yaml.safe_load(f) or {}
    except OSError as e:
        raise UsageError(f"cannot read config file {path}: {e}")
    except yaml.YAMLError as e:
        raise UsageError(f"cannot parse config file {path}: {e}")

    if not isinstance(data, dict):
        raise UsageError(f"config file {path} must hold a mapping")
    if isinstance(data.get('spec'), dict):
        data = data['spec']

    unknown = sorted(set(data) - set(CONFIG_KEYS))
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(unknown)}")
    return data

def _as_list(value) -> list:
    if value is None:
        return []
    if isinstance(value, (list, tuple)):
        return list(value)
    return [value]

def parse_args(argv: Optional[Sequence[str]] = None, environ: Optional[Dict[str, str]] = None) -> ExperimentSpec:
    """Merge defaults, $SWARMBANDIT_SEED, the config file and flags into a validated spec"""
    environ = os.environ if environ is None else environ
    args = build_parser().parse_args(list(argv) if argv is not None else None)

    settings: Dict[str, Any] = {}
    if environ.get(SEED_ENV_VAR):
        try:
            settings['seed'] = int(environ[SEED_ENV_VAR])
        except ValueError:
            raise UsageError(f"${SEED_ENV_VAR} must be an integer, got {environ[SEED_ENV_VAR]!r}")
    if args.config:
        settings.update(load_config_file(args.config))

    flags = {
        'algorithms': args.algorithms,
        'nu': args.nu,
        'arms': args.arms,
        'players': args.players,
        'horizon': args.horizon,
        'lambda': args.lam,
        'mean_pool': args.mean_pool,
        'reward_model': args.reward_model,
        'replications': args.replications,
        'seed': args.seed,
        'decimate': args.decimate,
        'retain_trace': args.retain_trace,
        'dump_env': args.dump_env,
        'tie_break': args.tie_break,
        'workers': args.workers,
        'out': args.out,
    }
    settings.update({key: value for key, value in flags.items() if value is not None})

    errors = []
    values: Dict[str, Any] = {}
    try:
        if 'algorithms' in settings:
            values['algorithms'] = tuple(PolicyKind.parse(a) for a in _as_list(settings['algorithms']))
    except ConfigurationError as e:
        errors.extend(e.messages)
    try:
        if 'mean_pool' in settings:
            pool = settings['mean_pool']
            if isinstance(pool, str):
                values['mean_pool'] = tuple(parse_float_list(pool))
            else:
                values['mean_pool'] = tuple(float(v) for v in _as_list(pool))
        if 'reward_model' in settings:
            values['reward_model'] = RewardModel(*parse_reward_model(settings['reward_model']))
    except ConfigurationError as e:
        errors.extend(e.messages)
    except (TypeError, ValueError):
        errors.append(f"mean_pool must be a list of numbers, got {settings['mean_pool']!r}")

    if 'nu' in settings:
        try:
            values['nu_grid'] = tuple(float(v) for v in _as_list(settings['nu']))
        except (TypeError, ValueError):
            errors.append(f"nu must be a list of numbers, got {settings['nu']!r}")
    for key, caster in (('arms', int), ('players', int), ('horizon', int), ('lambda', float),
                        ('replications', int), ('seed', int), ('decimate', int), ('workers', int)):
        if key in settings:
            try:
                values[CONFIG_KEYS[key]] = caster(settings[key])
            except (TypeError, ValueError):
                errors.append(f"{key} must be a number, got {settings[key]!r}")
    for key in ('retain_trace', 'dump_env'):
        if key in settings:
            if isinstance(settings[key], bool):
                values[key] = settings[key]
            else:
                errors.append(f"{key} must be true or false, got {settings[key]!r}")
    if 'tie_break' in settings:
        values['tie_break'] = str(settings['tie_break'])
    if 'out' in settings:
        values['output_dir'] = Path(settings['out'])
    if 'workers' not in values:
        values['workers'] = os.cpu_count() or 1

    spec = ExperimentSpec(**values)
    errors.extend(spec.validate())
    if errors:
        raise UsageError(errors)

    return spec

@dataclass
class RunResult:
    task: RunTask
    table: pd.DataFrame
    ratio: np.ndarray
    final_regret: float
    mean_switches: float = 0.0
    max_misident: int = 0
    delta_min: float = 0.0
    trace: Optional[pd.DataFrame] = None

def run_single(task: RunTask, spec: ExperimentSpec) -> RunResult:
    """Simulate one run; module-level so worker processes can pickle it"""
    config = spec.env_config(task.nu, task.env_seed)
    timeline = generate_timeline(config)
    ledger, trace = run_episode(config, task.algorithm, spec.lam, task.seed, timeline=timeline,
                                retain_trace=spec.retain_trace, tie_break=spec.tie_break)
    ratio = regret_ratio(ledger, task.nu)
    times = decimation_grid(spec.horizon, spec.decimation)
    table = run_table(task.algorithm.value, task.nu, spec.lam, task.seed, task.replication, ledger, ratio, times)

    trace_table = None
    if trace is not None:
        counters = misident_counts(trace, timeline)
        trace_table = pd.DataFrame({
            't': [outcome.t for outcome in trace],
            **{f"s_{k}": [outcome.selections[k - 1] for outcome in trace]
               for k in range(1, spec.num_players + 1)},
            'group_reward': [outcome.group_reward for outcome in trace],
            'oracle_reward': [outcome.oracle_reward for outcome in trace],
            'inst_regret': [outcome.inst_regret for outcome in trace],
            **{f"nhat_{k}": counters.nhat[k - 1] for k in range(1, spec.num_players + 1)},
        })

    return RunResult(task=task, table=table, ratio=ratio.ratio, final_regret=ledger.final_regret(),
                     mean_switches=float(ledger.switches[:, -1].mean()),
                     max_misident=int(ledger.misident.headline()[-1]),
                     delta_min=timeline.delta_min, trace=trace_table)

def execute_runs(spec: ExperimentSpec, tasks: List[RunTask], show_progress: bool = False) -> List[RunResult]:
    progress = dict(total=len(tasks), file=sys.stderr, disable=not show_progress, desc="runs")

    if spec.workers == 1 or len(tasks) == 1:
        return [run_single(task, spec) for task in tqdm(tasks, **progress)]

    with ProcessPoolExecutor(max_workers=min(spec.workers, len(tasks))) as executor:
        # map yields results in submission order
        return list(tqdm(executor.map(run_single, tasks, [spec] * len(tasks)), **progress))

def _as_series(result: RunResult, nu: float) -> RatioSeries:
    return RatioSeries(times=np.arange(2, len(result.ratio) + 2), ratio=result.ratio, nu=nu)

def _summaries(spec: ExperimentSpec, results: List[RunResult]) -> List[Dict[str, Any]]:
    summaries = []
    for algorithm in spec.algorithms:
        for nu in spec.nu_grid:
            group = [r for r in results if r.task.algorithm == algorithm and r.task.nu == nu]
            times = np.arange(2, spec.horizon + 1)
            mean_ratio = np.mean([r.ratio for r in group], axis=0)
            mean_regret = mean_ratio * times ** ((1.0 + nu) / 2.0) * np.log(times)
            try:
                exponent = growth_exponent(times, mean_regret, spec.horizon / 10, spec.horizon)
            except UsageError:
                exponent = None
            summary = {
                'algorithm': algorithm.value,
                'nu': nu,
                'mean_final_regret': float(np.mean([r.final_regret for r in group])),
                'growth_exponent': exponent,
                'replications': len(group),
                'mean_switches': float(np.mean([r.mean_switches for r in group])),
                'misid_Nk_max': max(r.max_misident for r in group),
            }
            if algorithm == PolicyKind.RR_SW_UCB_SHARP:
                summary['misid_Nk_bound'] = misident_upper_bound(
                    spec.num_arms, spec.num_players, spec.horizon, spec.lam, spec.alpha_for(algorithm, nu),
                    min(r.delta_min for r in group), breakpoint_count(nu, spec.horizon))
            summaries.append(summary)
    return summaries

def run_experiment(spec: ExperimentSpec, show_progress: bool = False, summary_stream=None) -> int:
    """Run every task and write run CSVs, the aggregate CSV and the manifest; returns the exit status"""
    tasks = spec.tasks()
    logger.info("running %d runs (%d algorithms x %d nu x %d replications) with %d workers",
                len(tasks), len(spec.algorithms), len(spec.nu_grid), spec.replications, spec.workers)

    results = execute_runs(spec, tasks, show_progress)
    written: List[Path] = []
    out = spec.output_dir

    try:
        (out / 'runs').mkdir(parents=True, exist_ok=True)

        if spec.dump_env:
            (out / 'envs').mkdir(exist_ok=True)
            for nu in spec.nu_grid:
                for replication in range(1, spec.replications + 1):
                    config = spec.env_config(nu, derive_seed(spec.master_seed, 'env', nu, replication))
                    path = out / 'envs' / f"nu{format_nu(nu)}_rep{replication}.txt"
                    path.write_text(dump_timeline(config, generate_timeline(config)))
                    written.append(path)

        for result in results:
            path = out / 'runs' / f"{result.task.name}.csv"
            write_csv(result.table, path)
            written.append(path)
            if result.trace is not None:
                path = out / 'runs' / f"{result.task.name}.trace.csv"
                write_csv(result.trace, path)
                written.append(path)

        times = decimation_grid(spec.horizon, spec.decimation)
        tables = []
        for algorithm in spec.algorithms:
            for nu in spec.nu_grid:
                group = [r for r in results if r.task.algorithm == algorithm and r.task.nu == nu]
                series = aggregate([_as_series(r, nu) for r in group])
                tables.append(aggregate_table(algorithm.value, nu, series, times))
        path = out / 'aggregate.csv'
        write_csv(pd.concat(tables, ignore_index=True), path)
        written.append(path)

        manifest = {
            'artifact_version': ARTIFACT_VERSION,
            'spec': spec.to_config(),
            'runs': [
                {
                    'algorithm': r.task.algorithm.value,
                    'nu': r.task.nu,
                    'replication': r.task.replication,
                    'env_seed': r.task.env_seed,
                    'seed': r.task.seed,
                    'alpha': spec.alpha_for(r.task.algorithm, r.task.nu),
                    'csv': f"runs/{r.task.name}.csv",
                }
                for r in results
            ],
        }
        path = out / 'manifest.json'
        path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        written.append(path)
    except OSError as e:
        logger.error("writing results to %s failed: %s", out, e)
        for path in written:
            try:
                path.unlink()
            except OSError:
                logger.warning("could not remove partial output %s", path)
        return 1

    logger.info("wrote %d files to %s", len(written), out)
    if summary_stream is not None:
        for summary in _summaries(spec, results):
            print(json.dumps(summary, sort_keys=True), file=summary_stream)
    return 0

def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        preview = build_parser().parse_known_args(list(argv) if argv is not None else None)[0]
    except UsageError:
        preview = argparse.Namespace(verbose=False, quiet=False, summary=False)
    level = logging.DEBUG if preview.verbose else logging.WARNING if preview.quiet else logging.INFO
    logging.basicConfig(level=level, stream=sys.stderr,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")

    try:
        spec = parse_args(argv)
    except (UsageError, ConfigurationError) as e:
        for message in e.messages:
            print(f"swarmbandit: error: {message}", file=sys.stderr)
        return 2

    return run_experiment(spec, show_progress=not preview.quiet,
                          summary_stream=sys.stdout if preview.summary else None)

if __name__ == "__main__":
    sys.exit(main())
