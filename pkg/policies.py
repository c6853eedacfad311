"""Arm-selection policies behind one select/observe contract.

Every player sees only its own (arm, reward) observations. Arms and times are
1-based so the round-robin and initialization formulas read as written:
``s_k(t) = mod(t + k - 2, N) + 1`` during initialization and
``s_k(t) = G(mod(t - N + k - 2, M) + 1)`` afterwards.
"""

from dataclasses import dataclass
from enum import Enum
from typing import List, Optional, Sequence, Tuple

import numpy as np

from utils import ConfigurationError, UsageError
from window import FullHistoryStats, WindowStats

TIE_BREAKS = ('index', 'random')

class PolicyKind(str, Enum):
    UCB = 'ucb'
    DLP = 'dlp'
    SW_UCB_SHARP = 'sw-ucb-sharp'
    RR_SW_UCB_SHARP = 'rr-sw-ucb-sharp'
    SW_DLP = 'sw-dlp'
    ORACLE = 'oracle'

    @classmethod
    def parse(cls, value) -> 'PolicyKind':
        """Accept 'sw-dlp', 'sw_dlp' or a PolicyKind"""
        if isinstance(value, cls):
            return value
        text = str(value).strip().lower().replace('_', '-')
        for kind in cls:
            if kind.value == text:
                return kind
        names = ", ".join(kind.value for kind in cls)
        raise ConfigurationError(f"unknown algorithm {value!r} (choose from {names})")

    @property
    def windowed(self) -> bool:
        return self in (PolicyKind.SW_UCB_SHARP, PolicyKind.RR_SW_UCB_SHARP, PolicyKind.SW_DLP)

@dataclass(frozen=True)
class PolicyConfig:
    kind: PolicyKind
    player_index: int
    num_arms: int
    num_players: int
    nu: float
    lam: float
    horizon: Optional[int] = None
    tie_break: str = 'index'

    def __post_init__(self):
        object.__setattr__(self, 'kind', PolicyKind.parse(self.kind))

        errors = []
        if not (1 <= self.player_index <= self.num_players):
            errors.append(f"player index k={self.player_index} outside 1..{self.num_players}")
        if self.num_players > self.num_arms:
            errors.append("M must be ≤ N")
        if not (0.0 <= self.nu < 1.0):
            errors.append(f"nu must be in [0, 1), got {self.nu}")
        if self.lam <= 0:
            errors.append(f"lambda must be > 0, got {self.lam}")
        if self.tie_break not in TIE_BREAKS:
            errors.append(f"tie_break must be one of {TIE_BREAKS}")

        if errors:
            raise ConfigurationError(errors)

    @property
    def alpha(self) -> Optional[float]:
        """Window exponent (1 - nu) / 2 for the sliding-window kinds"""
        if self.kind.windowed:
            return (1.0 - self.nu) / 2.0
        return None

@dataclass
class RoundRobinState:
    omega: Tuple[int, ...] = ()
    phase: int = 0
    last_recompute_t: Optional[int] = None

@dataclass
class PrioritizationState:
    a_set: Tuple[int, ...] = ()

def init_select(t: int, k: int, num_arms: int) -> int:
    """Initialization pick: every player visits each arm once, offset by its index"""
    if t < 1 or t > num_arms:
        raise UsageError(f"initialization covers t=1..{num_arms}, got t={t}")
    return (t + k - 2) % num_arms + 1

def _tie_ranks(num_arms: int, rng: Optional[np.random.Generator]) -> Sequence[int]:
    if rng is None:
        return range(num_arms)
    return rng.permutation(num_arms).tolist()

def top_m(indices: Sequence[float], m: int, ranks: Optional[Sequence[int]] = None) -> Tuple[int, ...]:
    """Arms (1-based) holding the m largest indices, returned in ascending arm order"""
    if m > len(indices):
        raise UsageError(f"cannot pick m={m} of {len(indices)} arms")
    if ranks is None:
        ranks = range(len(indices))

    order = sorted(range(len(indices)), key=lambda i: (-indices[i], ranks[i]))
    return tuple(sorted(i + 1 for i in order[:m]))

def ucb_indices(stats: FullHistoryStats, t: int) -> List[float]:
    return [stats.ucb_index(arm, t) for arm in range(1, stats.num_arms + 1)]

def top_m_by_ucb(stats: FullHistoryStats, t: int, m: int,
                 rng: Optional[np.random.Generator] = None) -> Tuple[int, ...]:
    """The m arms with the largest upper confidence bounds when deciding at t"""
    return top_m(ucb_indices(stats, t), m, _tie_ranks(stats.num_arms, rng))

def _argmin_lcb(stats: FullHistoryStats, t: int, candidates: Sequence[int],
                rng: Optional[np.random.Generator] = None) -> int:
    ranks = _tie_ranks(stats.num_arms, rng)
    return min(candidates, key=lambda arm: (stats.lcb_index(arm, t), ranks[arm - 1]))

def rr_select(state: RoundRobinState, stats: WindowStats, t: int, k: int, num_arms: int,
              num_players: int, rng: Optional[np.random.Generator] = None) -> int:
    """Round-robin pick over the sorted estimated top-M set, recomputed every M steps"""
    if t <= num_arms:
        raise UsageError(f"round robin starts after initialization (t > {num_arms}), got t={t}")

    phase = (t - num_arms - 1) % num_players
    if phase == 0 or not state.omega:
        state.omega = top_m_by_ucb(stats, t, num_players, rng)
        state.last_recompute_t = t
    state.phase = phase

    return state.omega[(t - num_arms + k - 2) % num_players]

def sw_dlp_select(state: PrioritizationState, stats: WindowStats, t: int, k: int,
                  rng: Optional[np.random.Generator] = None) -> int:
    """Lowest-LCB arm among the k best-UCB arms, recomputed every step"""
    state.a_set = top_m_by_ucb(stats, t, k, rng)
    return _argmin_lcb(stats, t, state.a_set, rng)

def ucb_baseline_select(stats: FullHistoryStats, t: int, rng: Optional[np.random.Generator] = None) -> int:
    """Classic UCB over the full history"""
    return top_m_by_ucb(stats, t, 1, rng)[0]

def dlp_baseline_select(stats: FullHistoryStats, t: int, k: int,
                        rng: Optional[np.random.Generator] = None) -> int:
    """SL(k): lowest LCB among the k largest full-history UCBs"""
    a_set = top_m_by_ucb(stats, t, k, rng)
    return _argmin_lcb(stats, t, a_set, rng)

class Policy:
    """One player's decision rule. Subclasses implement _select_after_init"""

    kind: PolicyKind

    def __init__(self, config: PolicyConfig, rng: Optional[np.random.Generator] = None):
        self.config = config
        self.k = config.player_index
        self.num_arms = config.num_arms
        self.num_players = config.num_players
        self.rng = rng if config.tie_break == 'random' else None
        self.stats = self._make_stats()

    def _make_stats(self) -> FullHistoryStats:
        return FullHistoryStats(self.num_arms)

    def select(self, t: int) -> int:
        if t <= self.num_arms:
            return init_select(t, self.k, self.num_arms)
        return self._select_after_init(t)

    def _select_after_init(self, t: int) -> int:
        raise NotImplementedError

    def observe(self, t: int, arm: int, reward: float) -> None:
        self.stats.record(t, arm, reward)

    def top_set(self) -> Optional[Tuple[int, ...]]:
        """Estimated top-M set Omega_k, for policies that hold one"""
        return None

class UCBPolicy(Policy):
    kind = PolicyKind.UCB

    def _select_after_init(self, t: int) -> int:
        return ucb_baseline_select(self.stats, t, self.rng)

class DLPPolicy(Policy):
    kind = PolicyKind.DLP

    def _select_after_init(self, t: int) -> int:
        return dlp_baseline_select(self.stats, t, self.k, self.rng)

class _WindowedPolicy(Policy):
    def _make_stats(self) -> WindowStats:
        return WindowStats(self.num_arms, self.config.alpha, self.config.lam, self.config.horizon)

class SWUCBSharpPolicy(_WindowedPolicy):
    """Single-player sliding-window UCB: argmax of the windowed index every step"""

    kind = PolicyKind.SW_UCB_SHARP

    def _select_after_init(self, t: int) -> int:
        return top_m_by_ucb(self.stats, t, 1, self.rng)[0]

class RoundRobinPolicy(_WindowedPolicy):
    kind = PolicyKind.RR_SW_UCB_SHARP

    def __init__(self, config: PolicyConfig, rng: Optional[np.random.Generator] = None):
        super().__init__(config, rng)
        self.state = RoundRobinState()

    def _select_after_init(self, t: int) -> int:
        return rr_select(self.state, self.stats, t, self.k, self.num_arms, self.num_players, self.rng)

    def top_set(self) -> Optional[Tuple[int, ...]]:
        return self.state.omega

class SWDLPPolicy(_WindowedPolicy):
    kind = PolicyKind.SW_DLP

    def __init__(self, config: PolicyConfig, rng: Optional[np.random.Generator] = None):
        super().__init__(config, rng)
        self.state = PrioritizationState()

    def _select_after_init(self, t: int) -> int:
        return sw_dlp_select(self.state, self.stats, t, self.k, self.rng)

class OraclePolicy(Policy):
    """Reference player k that always takes the true rank-k arm; reads the timeline"""

    kind = PolicyKind.ORACLE

    def __init__(self, config: PolicyConfig, timeline, rng: Optional[np.random.Generator] = None):
        super().__init__(config, rng)
        self.timeline = timeline

    def select(self, t: int) -> int:
        return self.timeline.ranking_at(t)[self.k - 1]

_POLICY_CLASSES = {
    PolicyKind.UCB: UCBPolicy,
    PolicyKind.DLP: DLPPolicy,
    PolicyKind.SW_UCB_SHARP: SWUCBSharpPolicy,
    PolicyKind.RR_SW_UCB_SHARP: RoundRobinPolicy,
    PolicyKind.SW_DLP: SWDLPPolicy,
}

def make_policy(config: PolicyConfig, rng: Optional[np.random.Generator] = None, timeline=None) -> Policy:
    """Build the policy for one player"""
    if config.kind == PolicyKind.ORACLE:
        if timeline is None:
            raise UsageError("the oracle policy needs the mean timeline")
        return OraclePolicy(config, timeline, rng)

    return _POLICY_CLASSES[config.kind](config, rng)
