"""Training loop, greedy evaluation and report aggregation.

Implements the per-step option/attention/action cycle, per-epoch replay
training with target sync, periodic greedy evaluation, ablation variants
and attention-trace export.  All numbers are fully determined by the run
config and its seed.
"""

from __future__ import annotations

import dataclasses
import io
import os
from dataclasses import dataclass, field

import numpy as np

from .agent import HRLAgent
from .baselines import FlatDDQNAgent, RuleId, RulePolicy
from .config import RunConfig
from .env import (DrivingEnv, EnvConfig, FrontVehicleProfile, ProfileKind,
                  StateVector, TerminalKind)
from .replay import Level, PrioritizedStore, ReplayMode, Transition
from .rewards import OptionId, RewardConfig, hybrid_reward, task_reward

LOG_HEADER = "epoch,success,collision,not_stop,timeout,mean_ro,mean_ra,mean_steps"


@dataclass(frozen=True)
class Variant:
    """Feature toggles distinguishing the HRL ablations."""
    name: str
    hybrid_reward: bool
    hper: bool
    attention: bool


VARIANTS = {
    "hrl0": Variant("hrl0", hybrid_reward=False, hper=False, attention=False),
    "hrl1": Variant("hrl1", hybrid_reward=True, hper=False, attention=False),
    "hrl2": Variant("hrl2", hybrid_reward=True, hper=True, attention=False),
    "hrl3": Variant("hrl3", hybrid_reward=True, hper=False, attention=True),
    "hybrid-hrl": Variant("hybrid-hrl", hybrid_reward=True, hper=True,
                          attention=True),
}

RULE_POLICIES = {r.value: r for r in RuleId}


@dataclass
class EpisodeReport:
    outcome: TerminalKind
    steps: int
    sum_r_option: float
    sum_r_action: float
    unsmoothness_penalty_total: float
    unsafe_penalty_total: float
    n_front_vehicles: int
    front_departs: bool
    attention_trace: list[np.ndarray] | None = None


@dataclass
class EvalResult:
    reports: list[EpisodeReport]

    @property
    def n(self) -> int:
        return len(self.reports)

    def rate(self, kind: TerminalKind) -> float:
        return sum(1 for r in self.reports if r.outcome is kind) / self.n

    @property
    def outcome_rates(self) -> dict[str, float]:
        return {k.value: self.rate(k) for k in
                (TerminalKind.SUCCESS, TerminalKind.COLLISION,
                 TerminalKind.NOT_STOP, TerminalKind.TIMEOUT)}

    @property
    def mean_r_option(self) -> float:
        return float(np.mean([r.sum_r_option for r in self.reports]))

    @property
    def mean_r_action(self) -> float:
        return float(np.mean([r.sum_r_action for r in self.reports]))

    @property
    def mean_steps(self) -> float:
        return float(np.mean([r.steps for r in self.reports]))

    @property
    def mean_unsmoothness(self) -> float:
        return float(np.mean([r.unsmoothness_penalty_total
                              for r in self.reports]))

    @property
    def mean_unsafe(self) -> float:
        return float(np.mean([r.unsafe_penalty_total for r in self.reports]))


@dataclass
class TrainResult:
    """Trained agent plus the periodic-evaluation log.

    The returned agent carries the weights of the best evaluation
    checkpoint (selected on success rate, collisions breaking ties),
    not necessarily the last epoch's weights.
    """
    agent: object
    log_rows: list[str]

    @property
    def log_csv(self) -> str:
        return "\n".join([LOG_HEADER] + self.log_rows) + "\n"

    @property
    def final_success(self) -> float:
        """Success rate of the selected evaluation checkpoint."""
        if not self.log_rows:
            return 0.0
        return max(float(row.split(",")[1]) for row in self.log_rows)


def _episode_seed(run_seed: int, epoch: int) -> int:
    return (run_seed << 24) + epoch


def _agent_nets(agent) -> list:
    if isinstance(agent, HRLAgent):
        return [agent.q_option, agent.q_option_target,
                agent.q_action, agent.q_action_target, agent.attention]
    return [agent.q, agent.q_target]


# Checkpoint selection prefers policies inside this collision budget;
# a fast policy that trades crashes for successes is not a better agent.
COLLISION_BUDGET = 0.02


def _eval_key(res: EvalResult) -> tuple[bool, float, float]:
    r = res.outcome_rates
    return (r["collision"] <= COLLISION_BUDGET, r["success"], -r["collision"])


class _BestCheckpoint:
    """Keeps a copy of the agent weights at the best evaluation so far
    (greedy Q-learning drifts; the peak policy is the deliverable)."""

    def __init__(self):
        self._key = None
        self._nets = None

    def offer(self, agent, res: EvalResult) -> None:
        key = _eval_key(res)
        if self._key is None or key >= self._key:
            self._key = key
            self._nets = [net.clone() for net in _agent_nets(agent)]

    def restore(self, agent) -> None:
        if self._nets is None:
            return
        for net, saved in zip(_agent_nets(agent), self._nets):
            net.copy_weights_from(saved)


def run_episode(policy, env: DrivingEnv, reward_cfg: RewardConfig,
                episode_seed: int,
                profiles: list[FrontVehicleProfile] | None = None,
                collect_attention: bool = False,
                trace_sink: io.TextIOBase | None = None) -> EpisodeReport:
    """One greedy episode.  `policy` needs act_greedy(state) and
    accel_of(action); policies without an option level are scored with
    the flat task reward on both levels."""
    state = env.reset(episode_seed, profiles=profiles)
    departs = any(p.profile_kind is not ProfileKind.STOPS_AT_LINE
                  for p in env.front_profiles())
    n_fronts = env.n_front_vehicles

    sum_ro = sum_ra = 0.0
    unsmooth = unsafe = 0.0
    att_trace: list[np.ndarray] | None = [] if collect_attention else None
    outcome = None
    while True:
        option, action, weights = policy.act_greedy(state)
        accel = policy.accel_of(action)
        outcome = env.step(accel)
        if option is None:
            r_t = task_reward(outcome.state, outcome, reward_cfg)
            r_o = r_a = r_t
            comp = {}
            # Task-level penalty attribution for the report columns.
            bd = hybrid_reward(outcome.state, OptionId.SSL, outcome, reward_cfg)
            comp = bd.components
        else:
            bd = hybrid_reward(outcome.state, option, outcome, reward_cfg)
            r_o, r_a = bd.r_option, bd.r_action
            comp = bd.components
        sum_ro += r_o
        sum_ra += r_a
        if "unsmoothness" in comp:
            unsmooth += -comp["unsmoothness"][2]
        for key in ("unsafe_front", "unsafe_stop"):
            if key in comp:
                unsafe += -comp[key][2]
        if att_trace is not None and weights is not None:
            att_trace.append(weights)
        if trace_sink is not None:
            trace_sink.write(
                f"{outcome.step_index},{env.ego.position:.6f},"
                f"{outcome.state.v_e:.6f},{outcome.state.a_e:.6f},"
                f"{outcome.state.j_e:.6f},{outcome.state.d_f:.6f},"
                f"{outcome.state.v_f:.6f},{outcome.state.d_d:.6f},"
                f"{-1 if option is None else int(option)},{action},"
                f"{r_o:.6f},{r_a:.6f},{outcome.terminal_kind.value}\n")
        state = outcome.state
        if outcome.terminal:
            break

    return EpisodeReport(
        outcome=outcome.terminal_kind,
        steps=outcome.step_index,
        sum_r_option=sum_ro,
        sum_r_action=sum_ra,
        unsmoothness_penalty_total=unsmooth,
        unsafe_penalty_total=unsafe,
        n_front_vehicles=n_fronts,
        front_departs=n_fronts > 0 and departs,
        attention_trace=att_trace,
    )


def _evaluate_chunk(policy, env_cfg: EnvConfig, reward_cfg: RewardConfig,
                    seeds: list[int]) -> list[EpisodeReport]:
    env = DrivingEnv(env_cfg)
    return [run_episode(policy, env, reward_cfg, s) for s in seeds]


def evaluate(policy, env_cfg: EnvConfig, reward_cfg: RewardConfig,
             n_episodes: int, seed_base: int) -> EvalResult:
    """Greedy evaluation on seeds seed_base..seed_base+n-1.  Episodes
    may fan out over processes (HRL_THREADS); results merge in seed
    order, so the output is identical either way."""
    if n_episodes < 1:
        raise ValueError("n_episodes must be >= 1")
    seeds = [seed_base + i for i in range(n_episodes)]
    workers = int(os.environ.get("HRL_THREADS", "1"))
    if workers > 1 and n_episodes >= 2 * workers:
        from concurrent.futures import ProcessPoolExecutor
        chunks = [seeds[i::workers] for i in range(workers)]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_evaluate_chunk,
                                  [policy] * workers,
                                  [env_cfg] * workers,
                                  [reward_cfg] * workers,
                                  chunks))
        by_seed = {}
        for chunk, reports in zip(chunks, parts):
            by_seed.update(zip(chunk, reports))
        return EvalResult([by_seed[s] for s in seeds])
    return EvalResult(_evaluate_chunk(policy, env_cfg, reward_cfg, seeds))


def _log_row(epoch: int, res: EvalResult) -> str:
    r = res.outcome_rates
    return (f"{epoch},{r['success']:.4f},{r['collision']:.4f},"
            f"{r['not_stop']:.4f},{r['timeout']:.4f},"
            f"{res.mean_r_option:.6f},{res.mean_r_action:.6f},"
            f"{res.mean_steps:.4f}")


def train(run: RunConfig, variant: Variant = VARIANTS["hybrid-hrl"],
          out_dir=None) -> TrainResult:
    """Full training per the run config; returns the trained agent and
    the evaluation log.  With out_dir set, writes train_log.csv and
    agent.ckpt there."""
    run.validate()
    agent_cfg = run.resolved_agent()
    agent = HRLAgent(agent_cfg, seed=run.run_seed,
                     use_attention=variant.attention)
    mode = ReplayMode.DUAL if variant.hper else ReplayMode.UNIFORM
    store = PrioritizedStore(run.replay.capacity, alpha=run.replay.alpha,
                             beta=run.replay.beta,
                             epsilon_priority=run.replay.epsilon_priority,
                             mode=mode, seed=run.run_seed)
    env = DrivingEnv(run.env)
    log_rows: list[str] = []
    best = _BestCheckpoint()

    for epoch in range(run.epochs):
        eps = agent.epsilon_at(epoch)
        state = env.reset(_episode_seed(run.run_seed, epoch))
        while True:
            option = agent.select_option(state, eps)
            weighted, _ = agent.apply_attention(state, option)
            action = agent.select_action(weighted, option, eps)
            outcome = env.step(agent.accel_of(action))
            if variant.hybrid_reward:
                bd = hybrid_reward(outcome.state, option, outcome, run.reward)
                r_o, r_a = bd.r_option, bd.r_action
            else:
                r_t = task_reward(outcome.state, outcome, run.reward)
                r_o = r_a = r_t
            store.push(Transition(state=state, option=option, action=action,
                                  r_option=r_o, r_action=r_a,
                                  next_state=outcome.state,
                                  terminal=outcome.terminal))
            state = outcome.state
            if outcome.terminal:
                break

        _replay_training(agent, store, run, agent.lr_scale_at(epoch))
        agent.sync_targets()

        if (epoch + 1) % run.eval_every == 0 or epoch + 1 == run.epochs:
            res = evaluate(agent, run.env, run.reward, run.eval_episodes,
                           run.eval_seed_base)
            log_rows.append(_log_row(epoch + 1, res))
            best.offer(agent, res)

    best.restore(agent)
    result = TrainResult(agent=agent, log_rows=log_rows)
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "train_log.csv"), "w",
                  encoding="utf-8", newline="") as fh:
            fh.write(result.log_csv)
        agent.save(os.path.join(out_dir, "agent.ckpt"))
    return result


def _replay_training(agent: HRLAgent, store: PrioritizedStore,
                     run: RunConfig, lr_scale: float = 1.0) -> None:
    k = run.replay.batch_size
    if len(store) < k:
        return
    for _ in range(run.train_steps_per_epoch):
        # Option-level mini-batch: weighted step on the option net only.
        sampled = store.sample(k, Level.OPTION)
        batch = [(t, w, 0.0) for _, t, w in sampled]
        td_o, td_a = agent.train_batch(batch, lr_scale)
        store.update_priorities([i for i, _, _ in sampled],
                                td_o.tolist(), td_a.tolist())
        # Action-level mini-batch, sampled independently.
        sampled = store.sample(k, Level.ACTION)
        batch = [(t, 0.0, w) for _, t, w in sampled]
        td_o, td_a = agent.train_batch(batch, lr_scale)
        store.update_priorities([i for i, _, _ in sampled],
                                td_o.tolist(), td_a.tolist())


def train_flat(run: RunConfig, out_dir=None) -> TrainResult:
    """The non-hierarchical double-DQN baseline on the task reward."""
    run.validate()
    agent = FlatDDQNAgent(run.resolved_agent(), seed=run.run_seed)
    store = PrioritizedStore(run.replay.capacity, alpha=run.replay.alpha,
                             beta=run.replay.beta,
                             epsilon_priority=run.replay.epsilon_priority,
                             mode=ReplayMode.SINGLE, seed=run.run_seed)
    env = DrivingEnv(run.env)
    log_rows: list[str] = []
    best = _BestCheckpoint()

    for epoch in range(run.epochs):
        eps = agent.epsilon_at(epoch)
        state = env.reset(_episode_seed(run.run_seed, epoch))
        while True:
            action = agent.select_action(state, eps)
            outcome = env.step(agent.accel_of(action))
            r_t = task_reward(outcome.state, outcome, run.reward)
            store.push(Transition(state=state, option=OptionId.SSL,
                                  action=action, r_option=r_t, r_action=r_t,
                                  next_state=outcome.state,
                                  terminal=outcome.terminal))
            state = outcome.state
            if outcome.terminal:
                break

        k = run.replay.batch_size
        if len(store) >= k:
            lr_scale = agent.lr_scale_at(epoch)
            for _ in range(run.train_steps_per_epoch):
                sampled = store.sample(k, Level.OPTION)
                td = agent.train_batch([(t, w) for _, t, w in sampled],
                                       lr_scale)
                store.update_priorities([i for i, _, _ in sampled],
                                        td.tolist(), td.tolist())
        agent.sync_targets()

        if (epoch + 1) % run.eval_every == 0 or epoch + 1 == run.epochs:
            res = evaluate(agent, run.env, run.reward, run.eval_episodes,
                           run.eval_seed_base)
            log_rows.append(_log_row(epoch + 1, res))
            best.offer(agent, res)

    best.restore(agent)
    result = TrainResult(agent=agent, log_rows=log_rows)
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "train_log.csv"), "w",
                  encoding="utf-8", newline="") as fh:
            fh.write(result.log_csv)
        agent.save(os.path.join(out_dir, "agent.ckpt"))
    return result


ATTENTION_HEADER = ("step," + ",".join(f"w_{i}" for i in range(11))
                    + ",d_f,d_d,option")


def export_attention_trace(agent: HRLAgent, env_cfg: EnvConfig,
                           episode_seed: int,
                           profiles: list[FrontVehicleProfile] | None = None
                           ) -> str:
    """Per-step CSV of attention weights plus the distances needed to
    re-plot weight-vs-distance curves."""
    env = DrivingEnv(env_cfg)
    state = env.reset(episode_seed, profiles=profiles)
    lines = [ATTENTION_HEADER]
    step = 0
    while True:
        option, action, weights = agent.act_greedy(state)
        outcome = env.step(agent.accel_of(action))
        step += 1
        w_txt = ",".join(f"{w:.9f}" for w in weights)
        lines.append(f"{step},{w_txt},{state.d_f:.6f},{state.d_d:.6f},"
                     f"{int(option)}")
        state = outcome.state
        if outcome.terminal:
            break
    return "\n".join(lines) + "\n"


def make_policy(name: str, run: RunConfig, checkpoint=None):
    """Build an evaluable policy by name: rule1..rule4 need no training;
    HRL variants and flat-ddqn load from a checkpoint when given."""
    if name in RULE_POLICIES:
        return RulePolicy(RULE_POLICIES[name], run.env,
                          tuple(run.agent.action_table))
    agent_cfg = run.resolved_agent()
    if name == "flat-ddqn":
        if checkpoint is None:
            raise ValueError("flat-ddqn needs a checkpoint")
        return FlatDDQNAgent.load(checkpoint, agent_cfg, seed=run.run_seed)
    if name in VARIANTS:
        if checkpoint is None:
            raise ValueError(f"{name} needs a checkpoint")
        return HRLAgent.load(checkpoint, agent_cfg, seed=run.run_seed)
    raise ValueError(f"unknown policy '{name}'")


def ablate(run: RunConfig, variant_names: list[str],
           seeds: tuple[int, ...] = (0, 1, 2)) -> dict[str, list[TrainResult]]:
    """Train each named variant once per seed; returns results keyed by
    variant name, in seed order."""
    out: dict[str, list[TrainResult]] = {}
    for name in variant_names:
        variant = VARIANTS[name]
        results = []
        for seed in seeds:
            cfg = dataclasses.replace(run, run_seed=seed)
            results.append(train(cfg, variant))
        out[name] = results
    return out
