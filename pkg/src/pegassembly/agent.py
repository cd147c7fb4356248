"""N-step Q-learning: epsilon-greedy selection with a linear decay schedule,
a uniform ring replay buffer, N-step bootstrapped targets against a frozen
target network, and the optimizer-driven training loop."""

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import network as net
from .env import AssemblyEnv, EpisodeOutcome, StateObs, action_enumeration_string
from .network import NadamState, NetworkParams


@dataclass
class TrainConfig:
    lam: float = 0.95              # discount
    alpha: float = 1e-4            # learning rate
    k: int = 4                     # lookahead steps
    step_max: int = 5000
    batch_size: int = 32
    buffer_size: int = 100_000
    update_rate: int = 1000        # optimizer steps between target syncs
    target_style: str = "standard_dqn"   # or "literal_eq10"
    train_every: int = 1           # env steps per optimizer step

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("lookahead k must be >= 1")
        if self.target_style not in ("standard_dqn", "literal_eq10"):
            raise ValueError(f"unknown target style {self.target_style!r}")


@dataclass
class EpsilonSchedule:
    eps_min: float = 0.1
    eps_max: float = 1.0
    indx_decay: int = 30_000
    steps_accu: int = 0
    frozen_eps: float | None = None

    def value(self) -> float:
        if self.frozen_eps is not None:
            return self.frozen_eps
        eps = self.eps_min + (self.eps_max - self.eps_min) * (1.0 - self.steps_accu / self.indx_decay)
        return float(min(self.eps_max, max(self.eps_min, eps)))


def select_action(q: np.ndarray, eps: float, rng: np.random.Generator) -> int:
    """Greedy (lowest-index maximizer) with probability 1 - eps, else uniform."""
    if rng.uniform() < eps:
        return int(rng.integers(len(q)))
    return int(np.argmax(q))


@dataclass
class StateRecord:
    """Compact stored observation; the image keeps its raw 8-bit grays."""
    gray: np.ndarray
    pose: np.ndarray
    wrench: np.ndarray

    @classmethod
    def from_obs(cls, obs: StateObs) -> "StateRecord":
        gray = np.round((1.0 - obs.image) * 256.0).astype(np.uint8)
        return cls(gray=gray, pose=obs.pose_n.copy(), wrench=obs.wrench_n.copy())

    def image(self) -> np.ndarray:
        return (1.0 - self.gray.astype(np.float32) / 256.0)


@dataclass
class Transition:
    state: StateRecord
    action: int
    rewards: list          # R_{t+1} .. R_{t+m}, m <= k
    terminal: bool         # episode ended inside the lookahead window
    bootstrap_state: StateRecord | None


class ReplayBuffer:
    """Uniform-sampling ring buffer; the oldest entry is evicted first."""

    def __init__(self, capacity: int):
        self.capacity = int(capacity)
        self._data: list[Transition | None] = [None] * self.capacity
        self._next = 0
        self._size = 0

    def __len__(self) -> int:
        return self._size

    def add(self, tr: Transition) -> None:
        self._data[self._next] = tr
        self._next = (self._next + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def sample(self, n: int, rng: np.random.Generator) -> list[Transition]:
        if n > self._size:
            raise ValueError(f"cannot sample {n} from buffer of size {self._size}")
        idx = rng.integers(0, self._size, size=n)
        return [self._data[i] for i in idx]


def n_step_return(rewards, lam: float) -> float:
    """Discounted sum of the recorded rewards by explicit summation."""
    total = 0.0
    for i, r in enumerate(rewards):
        total += (lam ** i) * r
    return total


def n_step_target(tr: Transition, online: NetworkParams, target: NetworkParams,
                  cfg: TrainConfig) -> float:
    """Regression target for one transition.

    standard_dqn: sum of discounted rewards plus the discounted greedy
    bootstrap from the frozen target network (dropped on terminals).
    literal_eq10: the same temporal-difference error folded into the current
    prediction with the learning rate, i.e. Q_pre + alpha * delta.
    """
    ret = n_step_return(tr.rewards, cfg.lam)
    boot = 0.0
    if not tr.terminal:
        q_boot = net.forward(target, tr.bootstrap_state.image()[None],
                             tr.bootstrap_state.pose[None], tr.bootstrap_state.wrench[None])
        boot = (cfg.lam ** (cfg.k - 1)) * float(q_boot.max())
    if cfg.target_style == "standard_dqn":
        return ret + boot
    q_pre = net.forward(online, tr.state.image()[None], tr.state.pose[None],
                        tr.state.wrench[None])
    q_pre_a = float(q_pre[0, tr.action])
    return q_pre_a + cfg.alpha * (ret + boot - q_pre_a)


class Trainer:
    """Owns the networks, optimizer, buffer, and schedule for one run."""

    def __init__(self, cfg: TrainConfig, online: NetworkParams,
                 rng: np.random.Generator,
                 schedule: EpsilonSchedule | None = None):
        self.cfg = cfg
        self.online = online
        self.target = online.copy()
        self.opt = NadamState()
        self.buffer = ReplayBuffer(cfg.buffer_size)
        self.schedule = schedule or EpsilonSchedule()
        self.rng = rng
        self.opt_steps = 0
        self.target_syncs = 0
        self.telemetry: list[tuple] = []   # (opt_step, loss, eps, buffer, syncs)

    # -- one optimizer step ------------------------------------------------

    def _batch_targets(self, batch: list[Transition]) -> np.ndarray:
        cfg = self.cfg
        rets = np.array([n_step_return(tr.rewards, cfg.lam) for tr in batch])
        boots = np.zeros(len(batch))
        live = [i for i, tr in enumerate(batch) if not tr.terminal]
        if live:
            imgs = np.stack([batch[i].bootstrap_state.image() for i in live])
            poses = np.stack([batch[i].bootstrap_state.pose for i in live])
            wrenches = np.stack([batch[i].bootstrap_state.wrench for i in live])
            q = net.forward(self.target, imgs, poses, wrenches)
            boots[live] = (cfg.lam ** (cfg.k - 1)) * q.max(axis=1)
        targets = rets + boots
        if cfg.target_style == "literal_eq10":
            imgs = np.stack([tr.state.image() for tr in batch])
            poses = np.stack([tr.state.pose for tr in batch])
            wrenches = np.stack([tr.state.wrench for tr in batch])
            q_pre = net.forward(self.online, imgs, poses, wrenches)
            q_pre_a = q_pre[np.arange(len(batch)), [tr.action for tr in batch]]
            targets = q_pre_a + cfg.alpha * (targets - q_pre_a)
        return targets

    def train_step(self) -> float:
        cfg = self.cfg
        if len(self.buffer) < cfg.batch_size:
            raise ValueError("buffer smaller than one batch")
        batch = self.buffer.sample(cfg.batch_size, self.rng)
        targets = self._batch_targets(batch)
        imgs = np.stack([tr.state.image() for tr in batch])
        poses = np.stack([tr.state.pose for tr in batch])
        wrenches = np.stack([tr.state.wrench for tr in batch])
        actions = np.array([tr.action for tr in batch])
        q, cache = net.forward(self.online, imgs, poses, wrenches, want_cache=True)
        loss_val = net.loss(q[np.arange(len(batch)), actions], targets)
        grads = net.backward(self.online, cache, actions, q, targets)
        net.nadam_step(self.online, grads, self.opt, cfg.alpha)
        self.opt_steps += 1
        if self.opt_steps % cfg.update_rate == 0:
            self.target = self.online.copy()
            self.target_syncs += 1
        self.telemetry.append((self.opt_steps, loss_val, self.schedule.value(),
                               len(self.buffer), self.target_syncs))
        return loss_val

    # -- episode loop ------------------------------------------------------

    def run_episode(self, env: AssemblyEnv, mode: str, train: bool = True,
                    eps_override: float | None = None,
                    step_budget: int | None = None) -> EpisodeOutcome:
        """Play one episode, maturing k-deep reward windows into the buffer."""
        cfg = self.cfg
        obs = env.reset(mode)
        pending: deque = deque()
        outcome = None
        while outcome is None:
            eps = eps_override if eps_override is not None else self.schedule.value()
            q = net.forward(self.online, obs.image[None], obs.pose_n[None], obs.wrench_n[None])
            action = select_action(q[0], eps, self.rng)
            next_obs, reward, outcome = env.step(action)
            self.schedule.steps_accu += 1
            record = StateRecord.from_obs(obs)
            pending.append(Transition(state=record, action=action, rewards=[],
                                      terminal=False, bootstrap_state=None))
            for tr in pending:
                tr.rewards.append(reward.total)
            if outcome is None and len(pending[0].rewards) == cfg.k:
                tr = pending.popleft()
                tr.bootstrap_state = StateRecord.from_obs(next_obs)
                self.buffer.add(tr)
            if train and len(self.buffer) >= cfg.batch_size \
                    and self.schedule.steps_accu % cfg.train_every == 0:
                self.train_step()
            obs = next_obs
            if step_budget is not None and self.schedule.steps_accu >= step_budget \
                    and outcome is None:
                # budget exhausted mid-episode: stop without a terminal flush
                return EpisodeOutcome(status=None, steps_taken=env.steps,
                                      episode_reward=env.episode_reward)
        # flush the remaining windows, truncated at the terminal
        while pending:
            tr = pending.popleft()
            tr.terminal = True
            self.buffer.add(tr)
        return outcome
