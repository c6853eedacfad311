"""One simulated run: selection, collision resolution, pseudo-regret accounting.

Group reward follows the pseudo-reward convention: the sum of the TRUE means of
arms selected by exactly one player. Every player observes the sampled reward of
the arm it selected, collided or not.
"""

import logging
import math
from dataclasses import dataclass
from typing import Dict, FrozenSet, List, Optional, Sequence, Tuple

import numpy as np

from env import EnvConfig, MeanTimeline, environment_streams, generate_timeline, sample_rewards
from metrics import MisidentCounters, MisidentTracker
from policies import Policy, PolicyConfig, PolicyKind, make_policy

logger = logging.getLogger(__name__)

@dataclass(frozen=True)
class StepOutcome:
    t: int
    selections: Tuple[int, ...]
    # (arm, player) pairs where the player is the only one on the arm
    sole_pairs: FrozenSet[Tuple[int, int]]
    group_reward: float
    oracle_reward: float
    inst_regret: float
    top_sets: Tuple[Optional[Tuple[int, ...]], ...] = ()

@dataclass
class RegretLedger:
    """Per-step series; index t-1 holds the value at time t"""
    inst_regret: np.ndarray
    cumulative_regret: np.ndarray
    collisions: np.ndarray
    player_rewards: np.ndarray
    switches: np.ndarray
    misident: MisidentCounters

    @classmethod
    def empty(cls, num_players: int, horizon: int) -> 'RegretLedger':
        return cls(
            inst_regret=np.zeros(horizon),
            cumulative_regret=np.zeros(horizon),
            collisions=np.zeros(horizon, dtype=np.int64),
            player_rewards=np.zeros((num_players, horizon)),
            switches=np.zeros((num_players, horizon), dtype=np.int64),
            misident=MisidentCounters.empty(num_players, horizon),
        )

    @property
    def horizon(self) -> int:
        return self.cumulative_regret.shape[0]

    def final_regret(self) -> float:
        return float(self.cumulative_regret[-1])

def oracle_top_m(timeline: MeanTimeline, t: int, num_players: int) -> Tuple[Tuple[int, ...], float]:
    """The M arms with the largest true means at t, and the sum of those means"""
    ranking = timeline.ranking_at(t)
    means = timeline.means_at(t)
    top = tuple(sorted(ranking[:num_players]))
    return top, math.fsum(means[arm - 1] for arm in top)

def resolve_collisions(selections: Sequence[int]) -> FrozenSet[Tuple[int, int]]:
    """(arm, player) pairs for players that were alone on their arm; players are 1-based"""
    pickers: Dict[int, int] = {}
    for arm in selections:
        pickers[arm] = pickers.get(arm, 0) + 1

    return frozenset(
        (arm, player)
        for player, arm in enumerate(selections, start=1)
        if pickers[arm] == 1
    )

def player_streams(seed: int, num_players: int) -> List[np.random.Generator]:
    """Independent PCG64 tie-break streams, one per player"""
    return [np.random.Generator(np.random.PCG64(child))
            for child in np.random.SeedSequence(seed).spawn(num_players)]

class Episode:
    """Step-by-step driver of one run; run_episode wraps it"""

    def __init__(self, config: EnvConfig, timeline: MeanTimeline, policy_kind, lam: float, seed: int,
                 retain_trace: bool = True, tie_break: str = 'index',
                 players: Optional[List[Policy]] = None):
        self.config = config
        self.timeline = timeline
        self.kind = PolicyKind.parse(policy_kind) if players is None else None
        self.num_players = config.num_players
        self.horizon = config.horizon
        _, self.reward_rng = environment_streams(config.seed)

        if players is None:
            streams = player_streams(seed, self.num_players)
            players = []
            for k in range(1, self.num_players + 1):
                policy_config = PolicyConfig(
                    kind=self.kind,
                    player_index=k,
                    num_arms=config.num_arms,
                    num_players=config.num_players,
                    nu=config.nu,
                    lam=lam,
                    horizon=config.horizon,
                    tie_break=tie_break,
                )
                players.append(make_policy(policy_config, streams[k - 1], timeline))
        self.players = players

        self.ledger = RegretLedger.empty(self.num_players, self.horizon)
        self.trace: Optional[List[StepOutcome]] = [] if retain_trace else None
        self._tracker = MisidentTracker(self.num_players, self.horizon)
        self.ledger.misident = self._tracker.counters
        self._regret = 0.0
        self._collisions = 0
        self._player_rewards = [0.0] * self.num_players
        self._switches = [0] * self.num_players
        self._previous: Optional[Tuple[int, ...]] = None
        self.t = 0

    @property
    def done(self) -> bool:
        return self.t >= self.horizon

    def step(self) -> StepOutcome:
        t = self.t + 1
        selections = tuple(player.select(t) for player in self.players)
        top_sets = tuple(player.top_set() for player in self.players)

        means = self.timeline.means_at(t)
        sole_pairs = resolve_collisions(selections)
        group_reward = math.fsum(means[arm - 1] for arm, _ in sole_pairs)
        _, oracle_reward = oracle_top_m(self.timeline, t, self.num_players)
        inst_regret = oracle_reward - group_reward

        rewards = sample_rewards(self.timeline, t, self.reward_rng, self.config.reward_model)
        for player, arm in zip(self.players, selections):
            player.observe(t, arm, float(rewards[arm - 1]))

        self._record(t, selections, sole_pairs, inst_regret, means)
        self._tracker.update(t, selections, top_sets, self.timeline.ranking_at(t))

        outcome = StepOutcome(
            t=t,
            selections=selections,
            sole_pairs=sole_pairs,
            group_reward=group_reward,
            oracle_reward=oracle_reward,
            inst_regret=inst_regret,
            top_sets=top_sets,
        )
        if self.trace is not None:
            self.trace.append(outcome)
        self.t = t
        return outcome

    def _record(self, t, selections, sole_pairs, inst_regret, means) -> None:
        column = t - 1
        ledger = self.ledger

        self._regret += inst_regret
        self._collisions += self.num_players - len(sole_pairs)
        ledger.inst_regret[column] = inst_regret
        ledger.cumulative_regret[column] = self._regret
        ledger.collisions[column] = self._collisions

        for arm, player in sole_pairs:
            self._player_rewards[player - 1] += means[arm - 1]
        if self._previous is not None:
            for k, (before, now) in enumerate(zip(self._previous, selections)):
                if before != now:
                    self._switches[k] += 1
        self._previous = selections

        ledger.player_rewards[:, column] = self._player_rewards
        ledger.switches[:, column] = self._switches

    def run(self) -> 'Episode':
        while not self.done:
            self.step()
        return self

def run_episode(config: EnvConfig, policy_kind, lam: float, seed: int,
                timeline: Optional[MeanTimeline] = None, retain_trace: bool = True,
                tie_break: str = 'index') -> Tuple[RegretLedger, Optional[List[StepOutcome]]]:
    """Simulate t = 1..T and return the ledger (and the step trace when retained)"""
    if timeline is None:
        timeline = generate_timeline(config)

    episode = Episode(config, timeline, policy_kind, lam, seed,
                      retain_trace=retain_trace, tie_break=tie_break)
    episode.run()

    logger.debug("episode %s nu=%s seed=%d: R(T)=%.4f", episode.kind.value, config.nu, seed,
                 episode.ledger.final_regret())
    return episode.ledger, episode.trace
