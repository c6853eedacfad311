"""Abruptly-changing environments: breakpoint placement, mean assignment, reward sampling."""

import bisect
import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from fractions import Fraction
from typing import List, Optional, Sequence, Tuple

import numpy as np

from utils import ConfigurationError, UsageError, check_distinct, format_sig, min_pairwise_gap

logger = logging.getLogger(__name__)

DEFAULT_MEAN_POOL = (0.05, 0.22, 0.39, 0.56, 0.73, 0.90)

@dataclass(frozen=True)
class RewardModel:
    """Reward distribution around the active mean: bernoulli or truncated gaussian"""
    kind: str = 'bernoulli'
    sigma: float = 0.0

    def __post_init__(self):
        if self.kind not in ('bernoulli', 'truncated_gaussian'):
            raise ConfigurationError(f"unknown reward model kind {self.kind!r}")
        if self.sigma < 0:
            raise ConfigurationError(f"sigma must be >= 0, got {self.sigma}")

    def label(self) -> str:
        """CLI spelling of the model"""
        if self.kind == 'bernoulli':
            return 'bernoulli'
        return f"gaussian:{format_sig(self.sigma)}"

@dataclass(frozen=True)
class EnvConfig:
    num_arms: int
    num_players: int
    horizon: int
    nu: float
    mean_pool: Tuple[float, ...] = DEFAULT_MEAN_POOL
    reward_model: RewardModel = field(default_factory=RewardModel)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, 'mean_pool', tuple(float(v) for v in self.mean_pool))

        errors = []
        if self.num_players < 1:
            errors.append("M must be >= 1")
        if self.num_arms < self.num_players:
            errors.append("M must be ≤ N")
        if self.horizon < 1:
            errors.append("T must be >= 1")
        if not (0.0 <= self.nu < 1.0):
            errors.append(f"nu must be in [0, 1), got {self.nu}")
        if len(self.mean_pool) < self.num_arms:
            errors.append(f"mean pool has {len(self.mean_pool)} values, need at least N={self.num_arms}")
        if any(v < 0.0 or v > 1.0 for v in self.mean_pool):
            errors.append("mean pool values must lie in [0, 1]")
        duplicate = check_distinct(self.mean_pool)
        if duplicate:
            errors.append(f"mean pool values must be distinct: {duplicate}")
        if not (0 <= self.seed < 2 ** 64):
            errors.append("seed must be a 64-bit unsigned integer")

        if errors:
            raise ConfigurationError(errors)

@dataclass(frozen=True)
class MeanTimeline:
    """Piecewise-constant arm means; segment s covers [starts[s], starts[s+1])"""
    horizon: int
    breakpoints: Tuple[int, ...]
    segments: Tuple[Tuple[float, ...], ...]
    delta_min: float

    @property
    def num_arms(self) -> int:
        return len(self.segments[0])

    @property
    def starts(self) -> Tuple[int, ...]:
        return (1,) + self.breakpoints

    def segment_index(self, t: int) -> int:
        """Index of the segment active at time t (new means apply from the breakpoint on)"""
        return bisect.bisect_right(self.breakpoints, t)

    def segment_bounds(self, index: int) -> Tuple[int, int]:
        """First and last time of a segment"""
        starts = self.starts
        end = starts[index + 1] - 1 if index + 1 < len(starts) else self.horizon
        return starts[index], end

    def means_at(self, t: int) -> Tuple[float, ...]:
        if t < 1 or t > self.horizon:
            raise UsageError(f"t={t} outside 1..{self.horizon}")
        return self.segments[self.segment_index(t)]

    @cached_property
    def segment_rankings(self) -> Tuple[Tuple[int, ...], ...]:
        return tuple(
            tuple(sorted(range(1, len(means) + 1), key=lambda arm: (-means[arm - 1], arm)))
            for means in self.segments
        )

    def ranking_at(self, t: int) -> Tuple[int, ...]:
        """Arms sorted by decreasing true mean at t (sigma_t); rank k is entry k-1"""
        if t < 1 or t > self.horizon:
            raise UsageError(f"t={t} outside 1..{self.horizon}")
        return self.segment_rankings[self.segment_index(t)]

EXACT_DENOMINATOR_LIMIT = 10_000
_LOG_MARGIN = 1e-9

def _reaches(t: int, level: int, nu: float, exponent: Fraction) -> bool:
    """t^nu >= level, settled with integer powers when the logs are too close to call"""
    gap = nu * math.log(t) - math.log(level)
    if abs(gap) > _LOG_MARGIN:
        return gap > 0
    if exponent.denominator <= EXACT_DENOMINATOR_LIMIT:
        return t ** exponent.numerator >= level ** exponent.denominator
    return math.floor(t ** nu) >= level

def generate_breakpoints(nu: float, horizon: int) -> List[int]:
    """Times t in 2..T where floor(t^nu) steps up.

    nu is taken as its shortest decimal spelling, so 0.3 means 3/10 and t=1024 reaches level 8
    exactly. Integer powers decide near-ties whenever that decimal has a denominator of at most
    EXACT_DENOMINATOR_LIMIT.
    """
    if horizon < 1:
        raise UsageError(f"T must be >= 1, got {horizon}")
    if not (0.0 <= nu < 1.0):
        raise ConfigurationError(f"nu must be in [0, 1), got {nu}")
    if nu == 0.0:
        return []

    nu = float(nu)
    exponent = Fraction(repr(nu))

    breakpoints = []
    level = 2
    while True:
        if math.log(level) / nu > math.log(horizon) + _LOG_MARGIN:
            break
        # Least t with t^nu >= level
        candidate = max(2, math.ceil(level ** (1.0 / nu)))
        while candidate > 2 and _reaches(candidate - 1, level, nu, exponent):
            candidate -= 1
        while not _reaches(candidate, level, nu, exponent):
            candidate += 1

        if candidate > horizon:
            break
        breakpoints.append(candidate)
        level += 1

    return breakpoints

def breakpoint_count(nu: float, t: int) -> int:
    """Number of breakpoints up to and including t"""
    return len(generate_breakpoints(nu, t))

def assign_means(pool: Sequence[float], num_arms: int, rng: np.random.Generator) -> List[float]:
    """Draw N distinct means from the pool without replacement"""
    if num_arms > len(pool):
        raise ConfigurationError(f"pool of {len(pool)} values cannot supply N={num_arms} distinct means")

    order = rng.permutation(len(pool))[:num_arms]
    return [float(pool[i]) for i in order]

def environment_streams(seed: int) -> Tuple[np.random.Generator, np.random.Generator]:
    """(timeline stream, reward stream) for an environment seed, both PCG64"""
    timeline_seq, reward_seq = np.random.SeedSequence(seed).spawn(2)
    return np.random.Generator(np.random.PCG64(timeline_seq)), np.random.Generator(np.random.PCG64(reward_seq))

def generate_timeline(config: EnvConfig, rng: Optional[np.random.Generator] = None) -> MeanTimeline:
    """Place breakpoints and draw a mean assignment for t=1 and every breakpoint"""
    if rng is None:
        rng, _ = environment_streams(config.seed)

    breakpoints = generate_breakpoints(config.nu, config.horizon)
    segments = []
    for _ in range(len(breakpoints) + 1):
        segments.append(tuple(assign_means(config.mean_pool, config.num_arms, rng)))

    delta_min = min(min_pairwise_gap(segment) for segment in segments)
    logger.debug("timeline: %d breakpoints, delta_min=%.6f", len(breakpoints), delta_min)

    return MeanTimeline(
        horizon=config.horizon,
        breakpoints=tuple(breakpoints),
        segments=tuple(segments),
        delta_min=delta_min,
    )

def mean_at(timeline: MeanTimeline, arm: int, t: int) -> float:
    """True mean of an arm (1-based) at time t"""
    if arm < 1 or arm > timeline.num_arms:
        raise UsageError(f"arm={arm} outside 1..{timeline.num_arms}")
    return timeline.means_at(t)[arm - 1]

def sample_reward(timeline: MeanTimeline, arm: int, t: int, rng: np.random.Generator,
                  model: RewardModel = RewardModel()) -> float:
    """One reward draw from an arm at time t"""
    mu = mean_at(timeline, arm, t)

    if model.kind == 'bernoulli':
        return 1.0 if rng.random() < mu else 0.0

    return float(min(1.0, max(0.0, rng.normal(mu, model.sigma))))

def sample_rewards(timeline: MeanTimeline, t: int, rng: np.random.Generator,
                   model: RewardModel = RewardModel()) -> np.ndarray:
    """Reward draws for every arm at time t (index arm-1)"""
    means = np.asarray(timeline.means_at(t))

    if model.kind == 'bernoulli':
        return (rng.random(means.shape[0]) < means).astype(float)

    return np.clip(rng.normal(means, model.sigma), 0.0, 1.0)

def dump_timeline(config: EnvConfig, timeline: MeanTimeline) -> str:
    """Text dump: header 'N M T nu seed', then 't_start t_end mu_1 ... mu_N' per segment"""
    lines = [f"{config.num_arms} {config.num_players} {config.horizon} {format_sig(config.nu)} {config.seed}"]

    for index, segment in enumerate(timeline.segments):
        start, end = timeline.segment_bounds(index)
        means = " ".join(f"{mu:.6f}" for mu in segment)
        lines.append(f"{start} {end} {means}")

    return "\n".join(lines) + "\n"
