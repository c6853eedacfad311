import itertools
from collections import Counter

import numpy as np
import pytest

from env import DEFAULT_MEAN_POOL, EnvConfig, MeanTimeline, RewardModel, generate_timeline
from policies import Policy, PolicyConfig, PolicyKind
from sim import Episode, oracle_top_m, player_streams, resolve_collisions, run_episode
from window import window_width


def stationary(means, horizon):
    return MeanTimeline(horizon=horizon, breakpoints=(), segments=(tuple(means),), delta_min=0.0)


class FixedArmPolicy(Policy):
    """Always plays the same arm"""

    def __init__(self, config, arm):
        super().__init__(config)
        self.arm = arm

    def select(self, t):
        return self.arm


class TestOracleTopM:
    def test_small(self):
        top, total = oracle_top_m(stationary((0.9, 0.5, 0.7), 5), 1, 2)
        assert top == (1, 3)
        assert total == pytest.approx(1.6)

    def test_all_arms(self):
        _, total = oracle_top_m(stationary((0.9, 0.5, 0.7), 5), 1, 3)
        assert total == pytest.approx(2.1)

    def test_default_pool(self):
        means = (0.39, 0.05, 0.90, 0.56, 0.22, 0.73)
        top, total = oracle_top_m(stationary(means, 5), 3, 3)
        assert top == (3, 4, 6)
        assert total == pytest.approx(2.19)


class TestCollisions:
    @pytest.mark.parametrize("selections, expected", [
        ((1, 2, 3), {(1, 1), (2, 2), (3, 3)}),
        ((1, 1, 3), {(3, 3)}),
        ((2, 2, 2), set()),
    ])
    def test_examples(self, selections, expected):
        assert resolve_collisions(selections) == expected

    def test_every_selection_of_three_players_over_three_arms(self):
        cases = list(itertools.product((1, 2, 3), repeat=3))
        assert len(cases) == 27
        for selections in cases:
            pickers = Counter(selections)
            sole = resolve_collisions(selections)
            for player, arm in enumerate(selections, start=1):
                assert ((arm, player) in sole) == (pickers[arm] == 1)
            assert len(sole) == sum(1 for n in pickers.values() if n == 1)


def test_player_streams_are_independent_and_reproducible():
    first = [rng.random() for rng in player_streams(42, 3)]
    second = [rng.random() for rng in player_streams(42, 3)]
    assert first == second
    assert len(set(first)) == 3


class TestRunEpisode:
    def config(self, **overrides):
        values = dict(num_arms=6, num_players=3, horizon=1500, nu=0.3, seed=17)
        values.update(overrides)
        return EnvConfig(**values)

    @pytest.mark.parametrize("kind", [k.value for k in PolicyKind])
    def test_ledger_invariants(self, kind):
        ledger, trace = run_episode(self.config(), kind, 12.3, seed=5)

        assert ledger.horizon == 1500
        assert len(trace) == 1500
        assert np.all(ledger.inst_regret >= 0.0)
        assert np.all(np.diff(ledger.cumulative_regret) >= 0.0)
        assert np.all(np.diff(ledger.collisions) >= 0)
        assert ledger.final_regret() == pytest.approx(ledger.inst_regret.sum())
        for outcome in trace:
            assert outcome.inst_regret == outcome.oracle_reward - outcome.group_reward

    def test_initialization_is_collision_free(self):
        ledger, trace = run_episode(self.config(), 'sw-dlp', 12.3, seed=1)
        for outcome in trace[:6]:
            assert len(set(outcome.selections)) == 3
        assert ledger.collisions[5] == 0

    def test_same_seed_same_run(self):
        first, _ = run_episode(self.config(), 'rr-sw-ucb-sharp', 12.3, seed=9, retain_trace=False)
        second, _ = run_episode(self.config(), 'rr-sw-ucb-sharp', 12.3, seed=9, retain_trace=False)
        assert np.array_equal(first.cumulative_regret, second.cumulative_regret)
        assert np.array_equal(first.switches, second.switches)

    def test_trace_optional(self):
        _, trace = run_episode(self.config(horizon=50), 'ucb', 12.3, seed=0, retain_trace=False)
        assert trace is None

    @pytest.mark.parametrize("nu", [0.0, 0.15, 0.3, 0.45])
    def test_oracle_has_zero_regret(self, nu):
        for env_seed in range(10):
            config = self.config(horizon=2000, nu=nu, seed=env_seed)
            ledger, _ = run_episode(config, 'oracle', 12.3, seed=env_seed, retain_trace=False)
            assert ledger.final_regret() == 0.0
            assert ledger.collisions[-1] == 0
            assert ledger.misident.final_nhat() == [0, 0, 0]

    def test_oracle_switches_only_at_breakpoints(self):
        config = self.config(horizon=2000, nu=0.0)
        ledger, _ = run_episode(config, 'oracle', 12.3, seed=0, retain_trace=False)
        assert ledger.switches[:, -1].tolist() == [0, 0, 0]

    def test_total_collision(self):
        config = self.config(horizon=200, nu=0.0)
        timeline = generate_timeline(config)
        players = [FixedArmPolicy(PolicyConfig('ucb', k, 6, 3, nu=0.0, lam=12.3), arm=2) for k in (1, 2, 3)]
        episode = Episode(config, timeline, None, 12.3, seed=0, players=players).run()

        _, best = oracle_top_m(timeline, 1, 3)
        assert all(outcome.group_reward == 0.0 for outcome in episode.trace)
        assert episode.ledger.final_regret() == pytest.approx(200 * best)
        assert episode.ledger.collisions[-1] == 600
        assert episode.ledger.player_rewards[:, -1].tolist() == [0.0, 0.0, 0.0]

    def test_player_rewards_add_up_to_group_reward(self):
        ledger, trace = run_episode(self.config(horizon=500), 'rr-sw-ucb-sharp', 12.3, seed=3)
        total = sum(outcome.group_reward for outcome in trace)
        assert ledger.player_rewards[:, -1].sum() == pytest.approx(total)

    def test_k1_prioritization_matches_single_player_ucb(self):
        config = self.config(num_players=1, horizon=2000, nu=0.45)
        _, dlp = run_episode(config, 'sw-dlp', 12.3, seed=4)
        _, sharp = run_episode(config, 'sw-ucb-sharp', 12.3, seed=4)
        assert [o.selections for o in dlp] == [o.selections for o in sharp]


class TestRoundRobinTrace:
    num_arms, num_players = 6, 3

    @pytest.fixture(scope="class", params=[4, 11])
    def run(self, request):
        config = EnvConfig(num_arms=6, num_players=3, horizon=3000, nu=0.3, seed=request.param)
        timeline = generate_timeline(config)
        ledger, trace = run_episode(config, 'rr-sw-ucb-sharp', 12.3, seed=request.param, timeline=timeline)
        return timeline, ledger, trace

    def test_sets_change_only_at_phase_starts(self, run):
        _, _, trace = run
        starts = {t for t in range(self.num_arms + 1, 3001) if (t - self.num_arms - 1) % self.num_players == 0}
        for before, now in zip(trace[self.num_arms:], trace[self.num_arms + 1:]):
            if now.top_sets != before.top_sets:
                assert now.t in starts

    def test_agreeing_players_never_collide(self, run):
        _, _, trace = run
        agreeing = [o for o in trace[self.num_arms:] if len(set(o.top_sets)) == 1]
        assert agreeing
        for outcome in agreeing:
            assert len(set(outcome.selections)) == self.num_players
            assert set(outcome.selections) == set(outcome.top_sets[0])

    def test_correct_shared_set_has_zero_regret(self, run):
        timeline, _, trace = run
        correct = [
            o for o in trace[self.num_arms:]
            if all(s == tuple(sorted(timeline.ranking_at(o.t)[:self.num_players])) for s in o.top_sets)
        ]
        assert correct
        assert all(o.inst_regret == 0.0 for o in correct)


def test_windows_forget_the_old_segment():
    breakpoint, horizon = 500, 5000
    config = EnvConfig(num_arms=6, num_players=3, horizon=horizon, nu=0.3, seed=2)
    timeline = MeanTimeline(
        horizon=horizon,
        breakpoints=(breakpoint,),
        segments=((0.90, 0.73, 0.56, 0.39, 0.22, 0.05), (0.05, 0.22, 0.39, 0.56, 0.73, 0.90)),
        delta_min=0.17,
    )
    alpha = (1.0 - config.nu) / 2.0

    for kind in ('rr-sw-ucb-sharp', 'sw-dlp'):
        episode = Episode(config, timeline, kind, 12.3, seed=8, retain_trace=False)
        while not episode.done:
            t = episode.t + 1
            if t > breakpoint + window_width(t - 1, alpha, 12.3):
                for player in episode.players:
                    assert player.stats.oldest_time() >= breakpoint
                    assert all(time >= breakpoint for time, _, _ in player.stats.history)
            episode.step()


def test_deterministic_rewards_first_phase_is_exact():
    model = RewardModel('truncated_gaussian', 0.0)
    for env_seed in range(10):
        config = EnvConfig(num_arms=6, num_players=3, horizon=9, nu=0.0, reward_model=model, seed=env_seed)
        ledger, trace = run_episode(config, 'rr-sw-ucb-sharp', 12.3, seed=env_seed)
        assert ledger.inst_regret[6:9].tolist() == [0.0, 0.0, 0.0]
        assert trace[6].top_sets[0] == tuple(sorted(generate_timeline(config).ranking_at(7)[:3]))


def test_common_random_rewards_across_policies():
    config = EnvConfig(num_arms=6, num_players=3, horizon=300, nu=0.3, mean_pool=DEFAULT_MEAN_POOL, seed=12)
    first = Episode(config, generate_timeline(config), 'ucb', 12.3, seed=1, retain_trace=False)
    second = Episode(config, generate_timeline(config), 'sw-dlp', 12.3, seed=2, retain_trace=False)
    assert first.reward_rng.random() == second.reward_rng.random()
