"""Per-player sliding-window statistics for the windowed UCB policies.

Time is 1-based. After ``record(t, ...)`` the window holds the selections made at
times ``t - tau(t) + 1 .. t``; a policy deciding at time ``t + 1`` reads these
statistics, which are exactly the ``t - 1`` arguments of the selection rule.
"""

import math
from collections import deque
from typing import Deque, List, Optional, Tuple

from utils import UsageError

# Every double in [0, 1] is an integer multiple of 2**-1074
_UNIT_BITS = 1074
_UNIT = 1 << _UNIT_BITS

def _to_units(reward: float) -> int:
    numerator, denominator = float(reward).as_integer_ratio()
    return numerator << (_UNIT_BITS - (denominator.bit_length() - 1))

def window_width(t: int, alpha: float, lam: float) -> int:
    """tau(t, alpha) = min(ceil(lambda * t^alpha), t)"""
    return min(math.ceil(lam * t ** alpha), t)

class FullHistoryStats:
    """Counts and means over every observation so far (stationary UCB / DLP)"""

    exploration = 2.0

    def __init__(self, num_arms: int):
        self.num_arms = num_arms
        self.t = 0
        self.counts: List[int] = [0] * num_arms
        self._units: List[int] = [0] * num_arms
        self.sums: List[float] = [0.0] * num_arms

    def record(self, t: int, arm: int, reward: float) -> None:
        if t != self.t + 1:
            raise UsageError(f"record expects t={self.t + 1}, got t={t}")
        if not (0.0 <= reward <= 1.0):
            raise UsageError(f"reward {reward} outside [0, 1]")

        i = arm - 1
        self.counts[i] += 1
        self._units[i] += _to_units(reward)
        self.sums[i] = self._units[i] / _UNIT
        self.t = t

    def count(self, arm: int) -> int:
        return self.counts[arm - 1]

    def windowed_mean(self, arm: int) -> Optional[float]:
        n = self.counts[arm - 1]
        if n == 0:
            return None
        return self.sums[arm - 1] / n

    def confidence_radius(self, arm: int, t: int) -> float:
        """sqrt(exploration * ln t / n), +inf for an arm never seen"""
        if t < 1:
            raise UsageError(f"t must be >= 1, got {t}")
        n = self.counts[arm - 1]
        if n == 0:
            return math.inf
        return math.sqrt(self.exploration * math.log(t) / n)

    def ucb_index(self, arm: int, t: int) -> float:
        mean = self.windowed_mean(arm)
        if mean is None:
            return math.inf
        return mean + self.confidence_radius(arm, t)

    def lcb_index(self, arm: int, t: int) -> float:
        mean = self.windowed_mean(arm)
        if mean is None:
            return -math.inf
        return mean - self.confidence_radius(arm, t)

class WindowStats(FullHistoryStats):
    """Counts n_i(t, alpha) and sums over the last tau(t, alpha) selections"""

    def __init__(self, num_arms: int, alpha: float, lam: float, horizon: Optional[int] = None):
        if not (0.0 < alpha <= 1.0):
            raise UsageError(f"alpha must be in (0, 1], got {alpha}")
        if lam <= 0:
            raise UsageError(f"lambda must be > 0, got {lam}")

        super().__init__(num_arms)
        self.alpha = alpha
        self.lam = lam
        self.exploration = 1.0 + alpha

        capacity = window_width(horizon, alpha, lam) if horizon else None
        self.history: Deque[Tuple[int, int, float]] = deque(maxlen=capacity)

    def width(self, t: Optional[int] = None) -> int:
        return window_width(self.t if t is None else t, self.alpha, self.lam)

    def record(self, t: int, arm: int, reward: float) -> None:
        if t != self.t + 1:
            raise UsageError(f"record expects t={self.t + 1}, got t={t}")
        if not (0.0 <= reward <= 1.0):
            raise UsageError(f"reward {reward} outside [0, 1]")

        # t - tau(t) never decreases, so evicted entries never re-enter
        cutoff = t - window_width(t, self.alpha, self.lam)
        while self.history and self.history[0][0] <= cutoff:
            _, old_arm, old_reward = self.history.popleft()
            j = old_arm - 1
            self.counts[j] -= 1
            self._units[j] -= _to_units(old_reward)
            self.sums[j] = self._units[j] / _UNIT

        self.history.append((t, arm, reward))
        i = arm - 1
        self.counts[i] += 1
        self._units[i] += _to_units(reward)
        self.sums[i] = self._units[i] / _UNIT
        self.t = t

    def oldest_time(self) -> Optional[int]:
        """Earliest time still inside the window"""
        return self.history[0][0] if self.history else None

def record(stats: FullHistoryStats, t: int, arm: int, reward: float) -> FullHistoryStats:
    """Functional form of stats.record; returns the updated stats"""
    stats.record(t, arm, reward)
    return stats

def windowed_mean(stats: FullHistoryStats, arm: int) -> Optional[float]:
    """Mean over the window, None when the arm has no observation in it"""
    return stats.windowed_mean(arm)

def confidence_radius(stats: FullHistoryStats, arm: int, t: int) -> float:
    """Radius used when deciding at time t (stats hold the window at t-1)"""
    return stats.confidence_radius(arm, t)
