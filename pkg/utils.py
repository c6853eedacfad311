import hashlib
import math
from typing import Iterable, List, Optional, Sequence, Tuple

class ConfigurationError(ValueError):
    """Invalid environment, policy or experiment configuration"""

    def __init__(self, messages):
        if isinstance(messages, str):
            messages = [messages]
        self.messages = list(messages)
        super().__init__("; ".join(self.messages))

class UsageError(ValueError):
    """Invalid call: out-of-range index, wrong call order, missing data"""

    def __init__(self, messages):
        if isinstance(messages, str):
            messages = [messages]
        self.messages = list(messages)
        super().__init__("; ".join(self.messages))

def parse_float_list(value: str) -> List[float]:
    """Parse a comma separated list of floats ('0.05,0.22, 0.39')"""
    if value is None:
        return []

    items = []
    for part in str(value).split(','):
        cleaned = part.strip()
        if cleaned == '':
            continue
        try:
            items.append(float(cleaned))
        except ValueError:
            raise ConfigurationError(f"not a number: {cleaned!r}")

    return items

def parse_reward_model(value: str) -> Tuple[str, float]:
    """Parse 'bernoulli' or 'gaussian:<sigma>' into (kind, sigma)"""
    text = str(value).strip().lower()

    if text == 'bernoulli':
        return 'bernoulli', 0.0

    # Accept both the CLI spelling and the long name
    for prefix in ('gaussian:', 'truncated_gaussian:'):
        if text.startswith(prefix):
            try:
                sigma = float(text[len(prefix):])
            except ValueError:
                raise ConfigurationError(f"bad sigma in reward model {value!r}")
            if sigma < 0 or math.isnan(sigma):
                raise ConfigurationError(f"sigma must be >= 0, got {sigma}")
            return 'truncated_gaussian', sigma

    raise ConfigurationError(f"unknown reward model {value!r} (use bernoulli or gaussian:SIGMA)")

def format_sig(value: float, digits: int = 9) -> str:
    """Format a float with a fixed number of significant digits"""
    return f"{value:.{digits}g}"

def format_nu(nu: float) -> str:
    """Short stable label for an exponent, used in file names"""
    return format_sig(nu, 6)

def derive_seed(master_seed: int, *coordinates) -> int:
    """Mix a master seed and run coordinates into a 64-bit sub-seed.

    The coordinates are rendered as text (floats through repr) and hashed with
    BLAKE2b, so adding replications or algorithms never changes existing seeds.
    """
    parts = [str(int(master_seed))]
    for coordinate in coordinates:
        if isinstance(coordinate, float):
            parts.append(repr(coordinate))
        else:
            parts.append(str(coordinate))

    digest = hashlib.blake2b("|".join(parts).encode('utf-8'), digest_size=16).digest()
    return int.from_bytes(digest[:8], 'big')

def default_decimation(horizon: int, points: int = 1000) -> int:
    """Step between emitted rows so that about `points` rows are written"""
    return max(1, math.ceil(horizon / points))

def decimation_grid(horizon: int, step: int) -> List[int]:
    """Times t >= 2 emitted for a run: every step-th instant plus the horizon"""
    if step < 1:
        raise UsageError(f"decimation step must be >= 1, got {step}")

    times = [t for t in range(step, horizon + 1, step) if t >= 2]
    if horizon >= 2 and (not times or times[-1] != horizon):
        times.append(horizon)

    return times

def min_pairwise_gap(values: Iterable[float]) -> float:
    """Smallest absolute difference between any two values (inf for < 2 values)"""
    ordered = sorted(values)
    if len(ordered) < 2:
        return math.inf

    return min(b - a for a, b in zip(ordered, ordered[1:]))

def check_distinct(values: Sequence[float]) -> Optional[str]:
    """Return an error message when values repeat, otherwise None"""
    seen = set()
    for value in values:
        if value in seen:
            return f"value {value} appears more than once"
        seen.add(value)
    return None
