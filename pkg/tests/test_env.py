import math

import numpy as np
import pytest

from env import (
    DEFAULT_MEAN_POOL, EnvConfig, MeanTimeline, RewardModel, assign_means, breakpoint_count, dump_timeline,
    environment_streams, generate_breakpoints, generate_timeline, mean_at, sample_reward, sample_rewards,
)
from utils import ConfigurationError, UsageError


def stationary(means, horizon=100):
    return MeanTimeline(horizon=horizon, breakpoints=(), segments=(tuple(means),), delta_min=0.0)


class TestBreakpoints:
    @pytest.mark.parametrize("nu, horizon, expected", [
        (0.0, 100, []),
        (0.5, 20, [4, 9, 16]),
        (0.3, 10, []),
        (0.3, 1024, [11, 39, 102, 214, 393, 657, 1024]),
    ])
    def test_golden(self, nu, horizon, expected):
        assert generate_breakpoints(nu, horizon) == expected

    @pytest.mark.parametrize("nu", [0.15, 0.3, 0.45, 0.5, 0.75])
    def test_matches_floor_increments(self, nu):
        # away from exact powers float evaluation agrees with the exact rule
        horizon = 3000
        floors = [int(np.floor(t ** nu + 1e-9)) for t in range(1, horizon + 1)]
        expected = [t for t in range(2, horizon + 1) if floors[t - 1] > floors[t - 2]]
        assert generate_breakpoints(nu, horizon) == expected

    @pytest.mark.parametrize("nu", [0.4321, 0.123456, 0.2718])
    def test_off_grid_exponent(self, nu):
        horizon = 100_000
        floors = [math.floor(t ** nu) for t in range(1, horizon + 1)]
        expected = [t for t in range(2, horizon + 1) if floors[t - 1] > floors[t - 2]]
        assert generate_breakpoints(nu, horizon) == expected

    def test_fine_decimal_is_not_rounded(self):
        assert generate_breakpoints(0.123456, 100_000) == [275, 7324, 75287]

    def test_exact_power_of_small_exponent(self):
        # 2^(1/0.0625) = 65536 reaches level 2 exactly
        assert generate_breakpoints(0.0625, 65_536) == [65_536]
        assert generate_breakpoints(0.0625, 65_535) == []

    def test_count_is_floor_minus_one(self):
        for nu in (0.15, 0.3, 0.45):
            assert breakpoint_count(nu, 100_000) == int(np.floor(100_000 ** nu + 1e-9)) - 1

    def test_invalid(self):
        with pytest.raises(ConfigurationError):
            generate_breakpoints(1.0, 10)
        with pytest.raises(UsageError):
            generate_breakpoints(0.5, 0)


class TestAssignMeans:
    def test_full_pool_is_a_permutation(self):
        rng = np.random.Generator(np.random.PCG64(3))
        means = assign_means(DEFAULT_MEAN_POOL, 6, rng)
        assert sorted(means) == sorted(DEFAULT_MEAN_POOL)

    def test_single_choice(self):
        rng = np.random.Generator(np.random.PCG64(0))
        assert assign_means([0.5], 1, rng) == [0.5]

    def test_deterministic_under_seed(self):
        first = assign_means(DEFAULT_MEAN_POOL, 4, np.random.Generator(np.random.PCG64(11)))
        second = assign_means(DEFAULT_MEAN_POOL, 4, np.random.Generator(np.random.PCG64(11)))
        assert first == second
        assert len(set(first)) == 4

    def test_pool_too_small(self):
        with pytest.raises(ConfigurationError):
            assign_means([0.1, 0.2], 3, np.random.Generator(np.random.PCG64(0)))


class TestEnvConfig:
    def test_collects_every_error(self):
        with pytest.raises(ConfigurationError) as excinfo:
            EnvConfig(num_arms=2, num_players=3, horizon=10, nu=1.5, mean_pool=(0.1, 0.1))
        messages = excinfo.value.messages
        assert "M must be ≤ N" in messages
        assert any("nu" in m for m in messages)
        assert any("distinct" in m for m in messages)

    def test_reward_model_validation(self):
        with pytest.raises(ConfigurationError):
            RewardModel(kind='poisson')
        with pytest.raises(ConfigurationError):
            RewardModel(kind='truncated_gaussian', sigma=-0.1)
        assert RewardModel().label() == 'bernoulli'
        assert RewardModel('truncated_gaussian', 0.1).label() == 'gaussian:0.1'


class TestTimeline:
    def test_segments_follow_breakpoints(self):
        config = EnvConfig(num_arms=6, num_players=3, horizon=20, nu=0.5, seed=5)
        timeline = generate_timeline(config)
        assert timeline.breakpoints == (4, 9, 16)
        assert [timeline.segment_bounds(s) for s in range(4)] == [(1, 3), (4, 8), (9, 15), (16, 20)]
        for index, (start, end) in enumerate(timeline.segment_bounds(s) for s in range(4)):
            for t in range(start, end + 1):
                assert timeline.means_at(t) == timeline.segments[index]
        for segment in timeline.segments:
            assert sorted(segment) == sorted(DEFAULT_MEAN_POOL)

    def test_same_seed_same_timeline(self):
        config = EnvConfig(num_arms=6, num_players=3, horizon=5000, nu=0.45, seed=99)
        assert generate_timeline(config) == generate_timeline(config)

    def test_delta_min(self):
        config = EnvConfig(num_arms=6, num_players=3, horizon=1000, nu=0.3, seed=1)
        assert generate_timeline(config).delta_min == pytest.approx(0.17)

    def test_stationary_mean(self):
        timeline = stationary((0.2, 0.8, 0.5))
        assert all(mean_at(timeline, 2, t) == 0.8 for t in (1, 50, 100))

    def test_ranking(self):
        timeline = stationary((0.2, 0.8, 0.5))
        assert timeline.ranking_at(1) == (2, 3, 1)

    @pytest.mark.parametrize("arm, t", [(0, 1), (4, 1), (1, 0), (1, 101)])
    def test_out_of_range(self, arm, t):
        with pytest.raises(UsageError):
            mean_at(stationary((0.2, 0.8, 0.5)), arm, t)


class TestRewards:
    def test_degenerate_bernoulli(self):
        timeline = stationary((1.0, 0.0))
        rng = np.random.Generator(np.random.PCG64(0))
        assert all(sample_reward(timeline, 1, 1, rng) == 1.0 for _ in range(200))
        assert all(sample_reward(timeline, 2, 1, rng) == 0.0 for _ in range(200))

    def test_bernoulli_mean(self):
        timeline = stationary((0.56,))
        rng = np.random.Generator(np.random.PCG64(2024))
        draws = [sample_reward(timeline, 1, 1, rng) for _ in range(100_000)]
        assert np.mean(draws) == pytest.approx(0.56, abs=0.01)

    def test_gaussian_is_truncated(self):
        timeline = stationary((0.05, 0.95))
        rng = np.random.Generator(np.random.PCG64(1))
        model = RewardModel('truncated_gaussian', 0.5)
        draws = np.vstack([sample_rewards(timeline, 1, rng, model) for _ in range(1000)])
        assert draws.min() >= 0.0 and draws.max() <= 1.0

    def test_zero_sigma_is_deterministic(self):
        timeline = stationary((0.39, 0.73))
        rng = np.random.Generator(np.random.PCG64(1))
        model = RewardModel('truncated_gaussian', 0.0)
        assert list(sample_rewards(timeline, 1, rng, model)) == [0.39, 0.73]

    def test_vector_draw_shape(self):
        timeline = stationary(DEFAULT_MEAN_POOL)
        _, rng = environment_streams(7)
        rewards = sample_rewards(timeline, 1, rng)
        assert rewards.shape == (6,)
        assert set(rewards.tolist()) <= {0.0, 1.0}


def test_dump_timeline():
    config = EnvConfig(num_arms=2, num_players=1, horizon=20, nu=0.5, mean_pool=(0.2, 0.8), seed=7)
    text = dump_timeline(config, generate_timeline(config))
    lines = text.splitlines()

    assert text.endswith("\n")
    assert lines[0] == "2 1 20 0.5 7"
    assert [line.split()[:2] for line in lines[1:]] == [['1', '3'], ['4', '8'], ['9', '15'], ['16', '20']]
    for line in lines[1:]:
        assert sorted(line.split()[2:]) == ['0.200000', '0.800000']
