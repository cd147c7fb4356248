"""Run orchestration: seeded construction of the world/env/trainer stack,
the train and evaluate commands, gradient checking, and log export."""

import csv
import os
from dataclasses import dataclass, field

import numpy as np

from . import network as net
from .agent import EpsilonSchedule, Trainer
from .config import RunConfig, dump_config
from .env import AssemblyEnv, EnvConfig, Outcome, action_enumeration_string
from .network import Architecture, NetworkParams
from .world import World

EPISODE_HEADER = ["episode", "mode", "outcome", "steps", "ER",
                  "danger_events", "warning_steps", "seed"]
TELEMETRY_HEADER = ["step", "loss", "epsilon", "buffer_size", "target_syncs"]


def spawn_rngs(master_seed: int, n: int) -> list[np.random.Generator]:
    return [np.random.default_rng(s) for s in np.random.SeedSequence(master_seed).spawn(n)]


def build_env(cfg: RunConfig, rng: np.random.Generator,
              env_config: EnvConfig | None = None) -> AssemblyEnv:
    peg, hole, contact, sensor = cfg.build_world_parts()
    world = World(peg, hole, contact=contact, sensor=sensor)
    return AssemblyEnv(world, cfg.tcs, env_config or cfg.env, rng)


def build_trainer(cfg: RunConfig, rng: np.random.Generator,
                  params: NetworkParams | None = None) -> Trainer:
    if params is None:
        params = NetworkParams.init(Architecture(), cfg.run.net_seed)
    schedule = EpsilonSchedule(eps_min=cfg.epsilon.eps_min, eps_max=cfg.epsilon.eps_max,
                               indx_decay=cfg.epsilon.indx_decay,
                               frozen_eps=cfg.epsilon.frozen_eps)
    return Trainer(cfg.train, params, rng, schedule)


def _write_csv(path: str, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


@dataclass
class ExperimentReport:
    mode: str
    rows: list = field(default_factory=list)   # episode CSV rows
    outcomes: list = field(default_factory=list)

    @property
    def attempts(self) -> int:
        return len(self.outcomes)

    @property
    def successes(self) -> int:
        return sum(1 for o in self.outcomes if o.status == Outcome.SUCCESS)

    @property
    def success_rate(self) -> float:
        return self.successes / self.attempts if self.attempts else 0.0

    @property
    def average_er(self) -> float:
        return float(np.mean([o.episode_reward for o in self.outcomes])) if self.outcomes else 0.0

    @property
    def average_completion_steps(self) -> float | None:
        """Mean steps over successful episodes only; None if there were none."""
        steps = [o.steps_taken for o in self.outcomes if o.status == Outcome.SUCCESS]
        return float(np.mean(steps)) if steps else None

    def summary_rows(self) -> list[list]:
        avg = self.average_completion_steps
        return [["mode", self.mode],
                ["average_ER", f"{self.average_er:.4f}"],
                ["successes", self.successes],
                ["attempts", self.attempts],
                ["success_rate", f"{self.successes}/{self.attempts}"],
                ["success_rate_pct", round(100.0 * self.success_rate)],
                ["average_completion_steps", "-" if avg is None else f"{avg:.1f}"]]


def cmd_train(cfg: RunConfig, out_dir: str) -> str:
    """Train until the env-step budget and write telemetry, episode logs,
    the effective config, and checkpoints.  Returns the final checkpoint path."""
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "effective_config.txt"), "w") as fh:
        fh.write(dump_config(cfg))

    env_rng, trainer_rng = spawn_rngs(cfg.run.seed, 2)
    env_cfg = EnvConfig(**{**cfg.env.__dict__, "step_max": cfg.run.episode_step_max})
    env = build_env(cfg, env_rng, env_cfg)
    trainer = build_trainer(cfg, trainer_rng)

    if cfg.run.train_mode not in ("fixed", "random", "mixed"):
        raise ValueError(f"unknown train mode {cfg.run.train_mode!r}")
    episode_rows = []
    episode = 0
    next_checkpoint = cfg.run.checkpoint_every
    ckpt_path = os.path.join(out_dir, "checkpoint.bin")
    _save_checkpoint(trainer.online, ckpt_path)
    while trainer.schedule.steps_accu < cfg.run.step_budget:
        if cfg.run.train_mode == "mixed":
            # alternate the start distribution so the policy both specializes
            # on the fixed pose and generalizes across the random disc
            mode = "fixed" if episode % 2 == 0 else "random"
        else:
            mode = cfg.run.train_mode
        outcome = trainer.run_episode(env, mode, train=True,
                                      step_budget=cfg.run.step_budget)
        episode += 1
        status = outcome.status.value if outcome.status is not None else "budget_cut"
        episode_rows.append([episode, mode, status, outcome.steps_taken,
                             f"{outcome.episode_reward:.6f}", env.danger_events,
                             env.warning_substeps, cfg.run.seed])
        if trainer.schedule.steps_accu >= next_checkpoint:
            _save_checkpoint(trainer.online, ckpt_path)
            next_checkpoint += cfg.run.checkpoint_every
    _save_checkpoint(trainer.online, ckpt_path)

    _write_csv(os.path.join(out_dir, "episodes.csv"), EPISODE_HEADER, episode_rows)
    _write_csv(os.path.join(out_dir, "telemetry.csv"), TELEMETRY_HEADER,
               [[s, f"{l:.8e}", f"{e:.6f}", b, t] for s, l, e, b, t in trainer.telemetry])
    return ckpt_path


def _save_checkpoint(params: NetworkParams, path: str) -> None:
    with open(path, "wb") as fh:
        fh.write(net.save_params(params, action_enumeration_string()))


def load_checkpoint(path: str) -> NetworkParams:
    with open(path, "rb") as fh:
        return net.load_params(fh.read(), action_enumeration_string())


def cmd_eval(cfg: RunConfig, mode: str, episodes: int, out_dir: str,
             checkpoint: str | None = None, record_trace: bool = False) -> ExperimentReport:
    """Evaluate a policy.

    ft: fixed start, trained weights, greedy.  rt: random start, trained
    weights, greedy.  fnt: fixed start, fresh random weights, exploratory
    epsilon at its initial schedule value.
    """
    mode = mode.lower()
    if mode not in ("ft", "rt", "fnt"):
        raise ValueError(f"unknown eval mode {mode!r}")
    os.makedirs(out_dir, exist_ok=True)

    env_rng, trainer_rng, init_rng = spawn_rngs(cfg.run.seed + 7770, 3)
    env = build_env(cfg, env_rng)
    if mode == "fnt":
        params = NetworkParams.init(Architecture(), int(init_rng.integers(2 ** 31)))
        eps = EpsilonSchedule(eps_min=cfg.epsilon.eps_min, eps_max=cfg.epsilon.eps_max,
                              indx_decay=cfg.epsilon.indx_decay).value()
    else:
        if checkpoint is None:
            raise ValueError("ft/rt evaluation requires a checkpoint")
        params = load_checkpoint(checkpoint)
        eps = 0.0
    trainer = build_trainer(cfg, trainer_rng, params)

    start_mode = "random" if mode == "rt" else "fixed"
    report = ExperimentReport(mode=mode)
    trace_rows = []
    for ep in range(1, episodes + 1):
        env.record_trace = record_trace
        outcome = trainer.run_episode(env, start_mode, train=False, eps_override=eps)
        report.outcomes.append(outcome)
        report.rows.append([ep, mode, outcome.status.value, outcome.steps_taken,
                            f"{outcome.episode_reward:.6f}", env.danger_events,
                            env.warning_substeps, cfg.run.seed])
        if record_trace:
            for step_i, wrench in env.trace:
                trace_rows.append([ep, step_i] + [f"{v:.9e}" for v in wrench])

    _write_csv(os.path.join(out_dir, f"episodes_{mode}.csv"), EPISODE_HEADER, report.rows)
    _write_csv(os.path.join(out_dir, f"report_{mode}.csv"), ["metric", "value"],
               report.summary_rows())
    if record_trace:
        _write_csv(os.path.join(out_dir, f"wrench_trace_{mode}.csv"),
                   ["episode", "step", "fx", "fy", "fz", "mx", "my", "mz"], trace_rows)
    return report


def cmd_gradcheck(seeds=(0, 1, 2), corrupt: bool = False) -> float:
    """Finite-difference sweep over every parameter of a downsized network.

    Returns the max relative error across seeds; `corrupt` is a negative-
    control hook that perturbs one analytic gradient.
    """
    worst = 0.0
    for seed in seeds:
        arch = Architecture(image_size=16, conv_channels=(2, 3, 4), image_dense=8,
                            trunk=(8, 6), n_actions=5)
        params = NetworkParams.init(arch, seed)
        # float64 copies keep the finite differences meaningful
        params = NetworkParams(arch, {k: v.astype(np.float64) for k, v in params.params.items()})
        rng = np.random.default_rng(seed + 100)
        img = rng.uniform(0, 1, (2, 16, 16))
        pose = rng.normal(0, 0.01, (2, arch.n_pose))
        wrench = rng.normal(0, 1.0, (2, arch.n_wrench))
        actions = np.array([1, 3])
        targets = rng.normal(0, 1, 2)

        q, cache = net.forward(params, img, pose, wrench, want_cache=True)
        grads = net.backward(params, cache, actions, q, targets)
        if corrupt:
            grads["val_w"] = grads["val_w"] + 0.5

        def loss_fn():
            qq = net.forward(params, img, pose, wrench)
            return net.loss(qq[np.arange(2), actions], targets)

        # small enough that no relu pre-activation changes sign under the
        # perturbation; float64 keeps the central difference accurate
        h = 1e-6
        for name in params.names():
            arr = params.params[name]
            flat = arr.reshape(-1)
            g_flat = grads[name].reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                lp = loss_fn()
                flat[i] = orig - h
                lm = loss_fn()
                flat[i] = orig
                g_num = (lp - lm) / (2 * h)
                denom = max(abs(g_num), abs(g_flat[i]), 1e-6)
                worst = max(worst, abs(g_num - g_flat[i]) / denom)
    return worst


def cmd_export_plots(in_dir: str, out_dir: str) -> list[str]:
    """Re-emit the run logs as tidy per-metric CSV series for plotting."""
    os.makedirs(out_dir, exist_ok=True)
    written = []

    def read_csv(path):
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows:
            raise ValueError(f"malformed log (no header): {path}")
        return rows[0], rows[1:]

    for name in sorted(os.listdir(in_dir)):
        path = os.path.join(in_dir, name)
        if name.startswith("episodes") and name.endswith(".csv"):
            header, rows = read_csv(path)
            tag = name[len("episodes"):-len(".csv")].strip("_") or "train"
            er_path = os.path.join(out_dir, f"er_{tag}.csv")
            _write_csv(er_path, ["episode", "ER"],
                       [[r[0], r[4]] for r in rows])
            steps_path = os.path.join(out_dir, f"completion_steps_{tag}.csv")
            _write_csv(steps_path, ["episode", "steps"],
                       [[r[0], r[3]] for r in rows if r[2] == "success"])
            written += [er_path, steps_path]
        elif name == "telemetry.csv":
            header, rows = read_csv(path)
            loss_path = os.path.join(out_dir, "loss.csv")
            _write_csv(loss_path, ["step", "loss"], [[r[0], r[1]] for r in rows])
            written.append(loss_path)
        elif name.startswith("wrench_trace") and name.endswith(".csv"):
            header, rows = read_csv(path)
            tag = name[len("wrench_trace"):-len(".csv")].strip("_")
            for i, axis in enumerate(["fx", "fy", "fz", "mx", "my", "mz"]):
                axis_path = os.path.join(out_dir, f"wrench_{axis}_{tag}.csv")
                _write_csv(axis_path, ["episode", "step", axis],
                           [[r[0], r[1], r[2 + i]] for r in rows])
                written.append(axis_path)
    return written
