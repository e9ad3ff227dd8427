"""Double Q-learning of an item-selection policy.

One episode simulates a respondent with latent traits drawn from the prior,
administers items under an epsilon-greedy policy, and rewards 0 once every
targeted factor's posterior variance falls to the precision threshold
(otherwise -1 per step).  Updates regress the primary network onto double-Q
targets from a periodically synced target network.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ..bank import ItemBank, probit_prob
from ..posterior import (
    PosteriorSamples,
    SunPosterior,
    moments,
    prediction_quantiles,
    sample,
    update,
)
from .network import (
    AdamState,
    NetworkConfig,
    NetworkError,
    QNetwork,
    StateSnapshot,
    act,
    clip_gradients,
    forward_batch,
    init_network,
    load_checkpoint_dict,
    save_checkpoint_dict,
    td_loss_and_grads,
)
from .replay import ReplayBuffer, Transition


class TrainingError(ValueError):
    """Invalid training configuration."""


@dataclass(frozen=True)
class EpsilonSchedule:
    """Linear decay per environment step, clamped at the floor."""

    high: float = 0.99
    low: float = 0.01
    decay_steps: int = 700_000

    def __post_init__(self):
        if not 0.0 <= self.low <= self.high <= 1.0:
            raise TrainingError("need 0 <= low <= high <= 1")
        if self.decay_steps < 1:
            raise TrainingError("decay_steps must be positive")

    def value(self, step: int) -> float:
        return max(self.low, self.high - step * (self.high - self.low) / self.decay_steps)


def reward(variances: np.ndarray, factors: Sequence[int], tau2: float) -> float:
    """0 when every targeted factor's posterior variance is within tau^2
    (boundary counts as met), else -1."""
    v = np.asarray(variances, dtype=np.float64)
    worst = float(np.max(v[list(factors)]))
    return 0.0 if worst <= tau2 else -1.0


def build_state(post: SunPosterior, bank: ItemBank, samples: PosteriorSamples,
                available: np.ndarray) -> StateSnapshot:
    """Assemble the policy input from the posterior and its draws."""
    tuples = np.column_stack([post.c1, post.c2, post.c3]) if post.num_items \
        else np.zeros((0, post.num_factors + 2))
    psi = prediction_quantiles(post, bank, samples).psi
    return StateSnapshot(tuples, psi, available)


def double_q_target(primary: QNetwork, target: QNetwork, transition: Transition,
                    gamma: float) -> float:
    """Terminal: -1.  Otherwise -1 + gamma * Q_target(s', a*) with a* the
    primary network's masked argmax over the items still available."""
    if transition.done:
        return -1.0
    avail = transition.next_available
    if not np.any(avail):
        raise NetworkError("non-terminal transition with no available items")
    state = transition.next_state
    qp, _ = forward_batch(primary, [state])
    a_star = int(np.argmax(np.where(avail, qp[0], -np.inf)))
    qt, _ = forward_batch(target, [state])
    return -1.0 + gamma * float(qt[0, a_star])


def _batch_targets(primary: QNetwork, target: QNetwork, batch: Sequence[Transition],
                   gamma: float) -> np.ndarray:
    targets = np.full(len(batch), -1.0)
    live = [i for i, tr in enumerate(batch) if not tr.done]
    if not live:
        return targets
    states = [batch[i].next_state for i in live]
    masks = np.stack([batch[i].next_available for i in live])
    if not masks.any(axis=1).all():
        raise NetworkError("non-terminal transition with no available items")
    qp, _ = forward_batch(primary, states)
    qt, _ = forward_batch(target, states)
    a_star = np.argmax(np.where(masks, qp, -np.inf), axis=1)
    targets[live] = -1.0 + gamma * qt[np.arange(len(live)), a_star]
    return targets


@dataclass(frozen=True)
class TrainConfig:
    factors: tuple[int, ...]
    tau2: float
    episodes: int = 80_000
    horizon: int = 60
    discount: float = 0.95
    epsilon: EpsilonSchedule = field(default_factory=EpsilonSchedule)
    learning_rate: float = 1e-4
    batch_size: int = 64
    buffer_capacity: int = 200_000
    target_sync: int = 100            # episodes between target refreshes
    sample_count: int = 512           # posterior draws per step
    reward_window: int = 500
    checkpoint_period: int = 1000
    l1: int = 256
    l2: int = 256
    combiner_width: int = 256
    seed: int = 0

    def __post_init__(self):
        if not self.factors:
            raise TrainingError("need at least one targeted factor")
        if self.tau2 <= 0.0:
            raise TrainingError("tau2 must be positive")
        if min(self.episodes, self.horizon, self.batch_size, self.target_sync,
               self.sample_count, self.checkpoint_period, self.reward_window) < 1:
            raise TrainingError("counts must be positive")
        if not 0.0 < self.discount <= 1.0:
            raise TrainingError("discount must be in (0, 1]")

    def to_dict(self) -> dict:
        doc = {
            "factors": list(self.factors), "tau2": self.tau2,
            "episodes": self.episodes, "horizon": self.horizon,
            "discount": self.discount,
            "epsilon": {"high": self.epsilon.high, "low": self.epsilon.low,
                        "decay_steps": self.epsilon.decay_steps},
            "learning_rate": self.learning_rate, "batch_size": self.batch_size,
            "buffer_capacity": self.buffer_capacity, "target_sync": self.target_sync,
            "sample_count": self.sample_count, "reward_window": self.reward_window,
            "checkpoint_period": self.checkpoint_period,
            "l1": self.l1, "l2": self.l2, "combiner_width": self.combiner_width,
            "seed": self.seed,
        }
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainConfig":
        doc = dict(doc)
        eps = doc.pop("epsilon", None)
        kwargs = {"factors": tuple(int(k) for k in doc.pop("factors"))}
        if eps is not None:
            kwargs["epsilon"] = EpsilonSchedule(float(eps["high"]), float(eps["low"]),
                                                int(eps["decay_steps"]))
        kwargs.update(doc)
        return cls(**kwargs)


@dataclass(frozen=True)
class LogRow:
    episode: int
    epsilon: float
    mean_reward: float
    loss: float


@dataclass
class TrainResult:
    network: QNetwork
    best_episode: int
    best_mean_reward: float
    log: list[LogRow]
    checkpoints: list[dict]
    diverged: bool
    episodes_run: int


def _params_finite(net: QNetwork) -> bool:
    return all(np.isfinite(v).all() for v in net.params.values())


def train(bank: ItemBank, cfg: TrainConfig, rng: np.random.Generator) -> TrainResult:
    """Run the full training loop and return the checkpoint with the highest
    windowed mean episode reward."""
    if max(cfg.factors) >= bank.num_factors or min(cfg.factors) < 0:
        raise TrainingError("targeted factors out of range")
    net_cfg = NetworkConfig(bank.num_factors, bank.num_items, l1=cfg.l1, l2=cfg.l2,
                            combiner_width=cfg.combiner_width, seed=cfg.seed)
    primary = init_network(net_cfg)
    target = primary.copy()
    adam = AdamState(lr=cfg.learning_rate)
    buffer = ReplayBuffer(cfg.buffer_capacity)
    factors = list(cfg.factors)

    checkpoints: list[dict] = []
    log: list[LogRow] = []
    window: list[float] = []
    global_step = 0
    last_loss = math.nan
    diverged = False
    episodes_run = 0

    for episode in range(1, cfg.episodes + 1):
        theta = rng.standard_normal(bank.num_factors)
        post = SunPosterior.prior(bank.num_factors)
        available = np.ones(bank.num_items, dtype=bool)
        draws = sample(post, cfg.sample_count, rng)
        state = build_state(post, bank, draws, available)
        ep_reward = 0.0

        try:
            for _ in range(cfg.horizon):
                eps = cfg.epsilon.value(global_step)
                if rng.random() < eps:
                    choices = np.flatnonzero(available)
                    action = int(choices[rng.integers(choices.size)])
                else:
                    action = act(primary, state)
                b_j = bank.loadings[action]
                p_true = probit_prob(bank, action, theta)
                y = int(rng.random() < p_true)

                post = update(post, b_j, bank.intercepts[action], y, item=action)
                draws = sample(post, cfg.sample_count, rng)
                _, variances = moments(draws)
                r = reward(variances, factors, cfg.tau2)
                next_available = available.copy()
                next_available[action] = False
                done = (r == 0.0) or not next_available.any()
                next_state = build_state(post, bank, draws, next_available)
                buffer.push(Transition(state, action, r, next_state,
                                       next_available, done))
                ep_reward += r
                global_step += 1

                if len(buffer) > cfg.batch_size:
                    batch = buffer.sample(cfg.batch_size, rng)
                    targets = _batch_targets(primary, target, batch, cfg.discount)
                    actions = np.array([tr.action for tr in batch])
                    last_loss, grads = td_loss_and_grads(
                        primary, [tr.state for tr in batch], actions, targets)
                    clip_gradients(grads, 10.0)
                    adam.apply(primary, grads)

                state = next_state
                available = next_available
                if done:
                    break
        except FloatingPointError:
            diverged = True

        episodes_run = episode
        window.append(ep_reward)
        if len(window) > cfg.reward_window:
            window.pop(0)
        mean_reward = float(np.mean(window))
        log.append(LogRow(episode, cfg.epsilon.value(global_step), mean_reward,
                          last_loss))

        if not diverged and episode % cfg.target_sync == 0:
            if _params_finite(primary):
                target = primary.copy()
            else:
                diverged = True
        if diverged:
            break
        if episode % cfg.checkpoint_period == 0 or episode == cfg.episodes:
            checkpoints.append(save_checkpoint_dict(primary, episode, mean_reward))

    if not checkpoints:
        # diverged before any stable checkpoint: fall back to the init weights
        checkpoints.append(save_checkpoint_dict(init_network(net_cfg), 0,
                                                -float(cfg.horizon)))
    best = max(checkpoints, key=lambda c: (c["mean_reward"], c["episode"]))
    net, meta = load_checkpoint_dict(best)
    return TrainResult(
        network=net,
        best_episode=meta["episode"],
        best_mean_reward=meta["mean_reward"],
        log=log,
        checkpoints=checkpoints,
        diverged=diverged,
        episodes_run=episodes_run,
    )


def save_checkpoint(path: str | Path, net: QNetwork, episode: int,
                    mean_reward: float, train_config: TrainConfig | None = None) -> None:
    doc = save_checkpoint_dict(net, episode, mean_reward)
    if train_config is not None:
        doc["train_config"] = train_config.to_dict()
    Path(path).write_text(json.dumps(doc))


def load_checkpoint(path: str | Path) -> tuple[QNetwork, dict]:
    doc = json.loads(Path(path).read_text())
    return load_checkpoint_dict(doc)


def write_training_log(path: str | Path, rows: Sequence[LogRow]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["episode", "epsilon", "mean_reward_500", "loss"])
        for row in rows:
            writer.writerow([row.episode, f"{row.epsilon:.6f}",
                             f"{row.mean_reward:.6f}",
                             "" if math.isnan(row.loss) else f"{row.loss:.8f}"])
