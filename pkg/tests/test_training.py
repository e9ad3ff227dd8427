"""Training loop pieces: exploration schedule, reward, targets, replay
buffer, and the episode loop itself at toy scale."""

import csv
import json

import numpy as np
import pytest

from bayescat.bank import BankGenConfig, generate_bank
from bayescat.posterior import SunPosterior, sample, update
from bayescat.rl import (
    EpsilonSchedule,
    NetworkConfig,
    NetworkError,
    QNetwork,
    ReplayBuffer,
    TrainConfig,
    Transition,
    build_state,
    double_q_target,
    init_network,
    load_checkpoint,
    reward,
    save_checkpoint,
    train,
    write_training_log,
)
from bayescat.rl.train import TrainingError


def _bank(seed=0, j=8, k=2):
    return generate_bank(BankGenConfig(num_items=j, num_factors=k,
                                       max_extra_loadings=min(1, k - 1),
                                       seed=seed))


def _tiny_cfg(**over):
    base = dict(factors=(0,), tau2=0.5, episodes=12, horizon=6,
                discount=0.95, epsilon=EpsilonSchedule(0.9, 0.1, 100),
                learning_rate=1e-3, batch_size=8, buffer_capacity=500,
                target_sync=3, sample_count=64, reward_window=5,
                checkpoint_period=4, l1=8, l2=8, combiner_width=8, seed=0)
    base.update(over)
    return TrainConfig(**base)


class TestEpsilonSchedule:
    def test_endpoints(self):
        s = EpsilonSchedule(0.99, 0.01, 700_000)
        assert s.value(0) == pytest.approx(0.99)
        assert s.value(700_000) == pytest.approx(0.01)
        assert s.value(10_000_000) == pytest.approx(0.01)

    def test_linear_midpoint(self):
        s = EpsilonSchedule(0.99, 0.01, 700_000)
        assert s.value(350_000) == pytest.approx(0.5)

    def test_non_increasing(self):
        s = EpsilonSchedule(0.8, 0.2, 1_000)
        vals = [s.value(t) for t in range(0, 1_500, 37)]
        assert all(a >= b for a, b in zip(vals, vals[1:]))

    def test_constant_schedule(self):
        s = EpsilonSchedule(1.0, 1.0, 10)
        assert s.value(0) == s.value(5) == s.value(50) == 1.0


class TestReward:
    def test_below_threshold_terminates(self):
        assert reward(np.array([0.1, 0.9]), (0,), 0.16) == 0.0

    def test_max_over_prioritized_factors(self):
        assert reward(np.array([0.1, 0.9]), (0, 1), 0.16) == -1.0

    def test_boundary_counts_as_met(self):
        assert reward(np.array([0.16, 0.5]), (0,), 0.16) == 0.0

    def test_unprioritized_factors_ignored(self):
        assert reward(np.array([5.0, 0.01]), (1,), 0.16) == 0.0


class TestDoubleQTarget:
    def _nets(self, target_bias):
        cfg = NetworkConfig(num_factors=2, num_items=5, l1=8, l2=8,
                            combiner_width=8, seed=0)
        zero = {k: np.zeros_like(v) for k, v in init_network(cfg).params.items()}
        primary_params = {k: v.copy() for k, v in zero.items()}
        primary_params["rho_1_b"] = np.array([0.0, 2.0, 0.0, 1.0, 0.0])
        target_params = {k: v.copy() for k, v in zero.items()}
        target_params["rho_1_b"] = np.asarray(target_bias, dtype=float)
        return (QNetwork(cfg, primary_params), QNetwork(cfg, target_params), cfg)

    def _transition(self, cfg, done, next_available):
        state = build_state(SunPosterior.prior(2), _bank(j=5),
                            sample(SunPosterior.prior(2), 32,
                                   np.random.default_rng(0)),
                            np.ones(5, dtype=bool))
        return Transition(state=state, action=0, reward=0.0 if done else -1.0,
                          next_state=state, next_available=next_available,
                          done=done)

    def test_done_is_minus_one(self):
        primary, target, cfg = self._nets([0, 0, 0, 0, 0])
        tr = self._transition(cfg, True, np.zeros(5, dtype=bool))
        assert double_q_target(primary, target, tr, 0.95) == -1.0

    def test_zero_discount(self):
        primary, target, cfg = self._nets([-9, -9, -9, -9, -9])
        tr = self._transition(cfg, False, np.ones(5, dtype=bool))
        assert double_q_target(primary, target, tr, 0.0) == -1.0

    def test_bootstrap_uses_primary_argmax_target_value(self):
        # primary picks item 1; the frozen net values it at -3
        primary, target, cfg = self._nets([0.0, -3.0, 0.0, -7.0, 0.0])
        tr = self._transition(cfg, False, np.ones(5, dtype=bool))
        assert double_q_target(primary, target, tr, 0.95) == pytest.approx(-3.85)

    def test_argmax_respects_mask(self):
        # with item 1 masked, primary falls back to item 3, valued -7
        primary, target, cfg = self._nets([0.0, -3.0, 0.0, -7.0, 0.0])
        avail = np.array([False, False, False, True, False])
        tr = self._transition(cfg, False, avail)
        assert double_q_target(primary, target, tr, 0.95) == pytest.approx(-1 + 0.95 * -7)

    def test_empty_mask_on_nonterminal_rejected(self):
        primary, target, cfg = self._nets([0, 0, 0, 0, 0])
        tr = self._transition(cfg, False, np.zeros(5, dtype=bool))
        with pytest.raises(NetworkError):
            double_q_target(primary, target, tr, 0.95)


class TestReplayBuffer:
    def test_oldest_evicted_first(self):
        buf = ReplayBuffer(capacity=3)
        for i in range(5):
            buf.push(i)
        assert len(buf) == 3
        held = {buf.sample(1, np.random.default_rng(s))[0] for s in range(60)}
        assert held == {2, 3, 4}

    def test_sample_uniform(self):
        buf = ReplayBuffer(capacity=10)
        for i in range(10):
            buf.push(i)
        rng = np.random.default_rng(1)
        counts = np.zeros(10)
        for _ in range(4_000):
            for x in buf.sample(5, rng):
                counts[x] += 1
        freqs = counts / counts.sum()
        np.testing.assert_allclose(freqs, 0.1, atol=0.01)

    def test_insufficient_contents_rejected(self):
        buf = ReplayBuffer(capacity=10)
        buf.push(0)
        with pytest.raises(ValueError):
            buf.sample(2, np.random.default_rng(0))

    def test_capacity_never_exceeded(self):
        buf = ReplayBuffer(capacity=4)
        for i in range(100):
            buf.push(i)
            assert len(buf) <= 4


class TestBuildState:
    def test_shapes_track_posterior(self):
        bank = _bank(j=6)
        post = SunPosterior.prior(2)
        rng = np.random.default_rng(2)
        avail = np.ones(6, dtype=bool)
        s0 = build_state(post, bank, sample(post, 64, rng), avail)
        assert s0.tuples.shape == (0, 4)
        assert s0.psi.shape == (6, 11)
        post = update(post, bank.loadings[0], float(bank.intercepts[0]), 1,
                      item=0)
        s1 = build_state(post, bank, sample(post, 64, rng), avail)
        assert s1.tuples.shape == (1, 4)
        np.testing.assert_array_equal(s1.tuples[0, :2], post.c1[0])
        assert s1.tuples[0, 2] == post.c2[0]
        assert s1.tuples[0, 3] == post.c3[0]


class TestTrainLoop:
    def test_deterministic_logs(self):
        bank = _bank(seed=1)
        runs = []
        for _ in range(2):
            res = train(bank, _tiny_cfg(), np.random.default_rng(42))
            runs.append([(r.episode, r.epsilon, r.mean_reward, r.loss)
                         for r in res.log])
        assert runs[0] == runs[1]

    def test_pure_exploration_ignores_learning(self):
        # with epsilon pinned at 1 the network never influences actions,
        # so the learning rate cannot change the administered sequences
        bank = _bank(seed=2)
        eps = EpsilonSchedule(1.0, 1.0, 10)
        fast = train(bank, _tiny_cfg(epsilon=eps, learning_rate=1e-2),
                     np.random.default_rng(7))
        slow = train(bank, _tiny_cfg(epsilon=eps, learning_rate=1e-8),
                     np.random.default_rng(7))
        assert [r.mean_reward for r in fast.log] == \
            [r.mean_reward for r in slow.log]

    def test_returns_best_window_checkpoint(self):
        bank = _bank(seed=3)
        res = train(bank, _tiny_cfg(episodes=10, checkpoint_period=2),
                    np.random.default_rng(9))
        assert res.checkpoints
        best = max(res.checkpoints,
                   key=lambda c: (c["mean_reward"], c["episode"]))
        assert res.best_episode == best["episode"]
        assert res.best_mean_reward == best["mean_reward"]
        assert not res.diverged
        assert res.episodes_run == 10

    def test_episode_returns_bounded(self):
        bank = _bank(seed=4)
        cfg = _tiny_cfg(episodes=8)
        res = train(bank, cfg, np.random.default_rng(11))
        for row in res.log:
            assert -cfg.horizon <= row.mean_reward <= 0.0

    def test_divergence_aborts_with_stable_checkpoint(self):
        bank = _bank(seed=5)
        with np.errstate(over="ignore", invalid="ignore"):
            res = train(bank, _tiny_cfg(episodes=40, learning_rate=1e120),
                        np.random.default_rng(13))
        assert res.diverged
        assert res.episodes_run < 40
        for v in res.network.params.values():
            assert np.isfinite(v).all()


class TestCheckpointFiles:
    def test_save_load_round_trip(self, tmp_path):
        bank = _bank(seed=6)
        res = train(bank, _tiny_cfg(episodes=4), np.random.default_rng(15))
        path = tmp_path / "ckpt.json"
        save_checkpoint(path, res.network, res.best_episode,
                        res.best_mean_reward)
        net, meta = load_checkpoint(path)
        assert meta["episode"] == res.best_episode
        for k in net.params:
            np.testing.assert_array_equal(net.params[k],
                                          res.network.params[k])

    def test_config_header_preserved(self, tmp_path):
        bank = _bank(seed=7)
        cfg = _tiny_cfg(episodes=4)
        res = train(bank, cfg, np.random.default_rng(17))
        path = tmp_path / "ckpt.json"
        save_checkpoint(path, res.network, 4, -3.0, train_config=cfg)
        doc = json.loads(path.read_text())
        assert doc["version"] == 1
        assert doc["train_config"]["tau2"] == 0.5

    def test_training_log_csv(self, tmp_path):
        bank = _bank(seed=8)
        res = train(bank, _tiny_cfg(episodes=6), np.random.default_rng(19))
        path = tmp_path / "log.csv"
        write_training_log(path, res.log)
        with open(path) as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["episode", "epsilon", "mean_reward_500", "loss"]
        assert len(rows) == len(res.log) + 1
        float(rows[1][1])
        float(rows[1][2])


class TestTrainConfig:
    def test_round_trip(self):
        cfg = _tiny_cfg()
        back = TrainConfig.from_dict(cfg.to_dict())
        assert back == cfg

    def test_validation(self):
        with pytest.raises(TrainingError):
            _tiny_cfg(discount=1.5)
        with pytest.raises(TrainingError):
            _tiny_cfg(tau2=0.0)
        with pytest.raises(TrainingError):
            _tiny_cfg(epsilon=EpsilonSchedule(0.5, 0.9, 100))
