"""Rule-based option policies and the flat (non-hierarchical) DDQN.

The rules pick a sub-goal from simple geometric conditions; a shared
proportional longitudinal controller turns the chosen sub-goal into an
acceleration, snapped to the discrete action table.  The flat agent
learns a single Q network over the same actions from the task reward.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .env import NO_FRONT_SENTINEL, EnvConfig, StateVector
from .agent import TD_GRAD_CLIP, AgentConfig, normalize_state
from .nets import DenseNet
from .replay import Transition
from .rewards import OptionId


class RuleId(enum.Enum):
    RULE1 = "rule1"   # always follow the front vehicle
    RULE2 = "rule2"   # always stop at the stop-line
    RULE3 = "rule3"   # FFV while a front vehicle sits before the line
    RULE4 = "rule4"   # FFV while the front vehicle is the binding margin


def rule_option(state: StateVector, rule_id: RuleId,
                config: EnvConfig) -> OptionId:
    if rule_id is RuleId.RULE1:
        return OptionId.FFV
    if rule_id is RuleId.RULE2:
        return OptionId.SSL
    if rule_id is RuleId.RULE3:
        return (OptionId.FFV if state.d_d > state.d_f + config.car_length
                else OptionId.SSL)
    # RULE4: follow the front vehicle while its chaseable margin is the
    # tighter one (smaller than the stop-line margin), otherwise brake
    # for the line.
    return OptionId.FFV if state.d_fc < state.d_dc else OptionId.SSL


# Proportional controller gains: distance error (s^-2) and speed error
# (s^-1).  Pure proportional control glides exponentially and never
# quite stops, so a small near-field capture regime finishes the stop.
_K_DIST = 0.5
_K_SPEED = 1.0


def _stop_command(v: float, dist: float, v_limit: float, a_max: float) -> float:
    """Acceleration to bring speed to zero `dist` ahead of a fixed
    target: proportional in the far field, capture brake / creep cycle
    within the last meter."""
    if dist <= 0.05:
        return -a_max
    if v <= 0.2:
        return 0.0 if dist <= 0.45 else 1.0   # parked / creep closer
    if v <= 1.2 and dist <= 2.5:
        return -1.0                            # final capture
    return _K_DIST * dist - _K_SPEED * v


def _follow_command(v: float, v_f: float, d_f: float,
                    config: EnvConfig) -> float:
    """Acceleration to settle d0 behind a (moving) front vehicle."""
    gap = d_f - config.d0
    if gap <= 0.05:
        return -config.a_max
    closing = v - v_f
    if closing > -0.1 and v <= 0.7 and gap <= 1.2:
        return -1.0 if v > 0.2 else 0.0        # settled behind the target
    return _K_DIST * gap - _K_SPEED * closing


def rule_action(state: StateVector, option: OptionId,
                config: EnvConfig,
                action_table: tuple[float, ...]) -> int:
    """Longitudinal controller tracking the selected target: stop at the
    line (SSL) or hold d0 behind the front vehicle (FFV).  Returns the
    index of the nearest action-table entry."""
    table = np.asarray(action_table)
    v = state.v_e
    # Part of a control step of reaction lag: brake hard a little before
    # the kinematic margin actually runs out.
    lag = 0.25 * config.dt * v
    if option is OptionId.SSL:
        if state.d_dc < lag:
            return 0  # braking margin (almost) gone: hardest braking
        a_cmd = _stop_command(v, state.d_d, config.v_limit, config.a_max)
    else:
        if state.d_fc < lag:
            return 0
        if state.d_f >= NO_FRONT_SENTINEL:
            a_cmd = config.v_limit - v
        else:
            a_cmd = _follow_command(v, state.v_f, state.d_f, config)
    return int(np.argmin(np.abs(table - a_cmd)))


@dataclass
class RulePolicy:
    rule_id: RuleId
    env_config: EnvConfig
    action_table: tuple[float, ...] = (-4.0, -2.0, -1.0, 0.0, 1.0, 2.0)

    def act_greedy(self, state: StateVector):
        option = rule_option(state, self.rule_id, self.env_config)
        action = rule_action(state, option, self.env_config, self.action_table)
        return option, action, None

    def accel_of(self, action: int) -> float:
        return float(self.action_table[action])


class FlatDDQNAgent:
    """Single-network double DQN over the same action table, trained on
    the flat task reward with ordinary (single-priority) PER."""

    def __init__(self, config: AgentConfig, seed: int = 0):
        config.validate()
        self.config = config
        self.n_actions = len(config.action_table)
        self._action_table = np.array(config.action_table)
        init_rng = np.random.default_rng(
            np.random.SeedSequence(entropy=(seed, 0xF1A7)))
        from .env import STATE_DIM
        hid = list(config.hidden_sizes)
        self.q = DenseNet.create([STATE_DIM] + hid + [self.n_actions], init_rng)
        self.q_target = self.q.clone()
        self._rng = np.random.default_rng(
            np.random.SeedSequence(entropy=(seed, 0xE9)))

    def epsilon_at(self, epoch: int) -> float:
        c = self.config
        if c.epsilon_decay_epochs == 0:
            return c.epsilon_end
        frac = min(epoch / c.epsilon_decay_epochs, 1.0)
        return c.epsilon_start + frac * (c.epsilon_end - c.epsilon_start)

    def select_action(self, state: StateVector, epsilon: float) -> int:
        if self._rng.uniform() < epsilon:
            return int(self._rng.integers(0, self.n_actions))
        q = self.q.forward(normalize_state(state.as_array()))
        return int(np.argmax(q))

    def accel_of(self, action: int) -> float:
        return float(self._action_table[action])

    def target_value(self, t: Transition) -> float:
        """Double-Q target on the task reward (stored in r_option)."""
        if t.terminal:
            return t.r_option
        s2 = normalize_state(t.next_state.as_array())
        a_star = int(np.argmax(self.q.forward(s2)))
        return t.r_option + self.config.gamma * float(
            self.q_target.forward(s2)[a_star])

    def lr_scale_at(self, epoch: int) -> float:
        c = self.config
        if c.lr_decay_epochs == 0:
            return 1.0
        frac = min(max(epoch - c.lr_decay_start, 0) / c.lr_decay_epochs, 1.0)
        return 1.0 + frac * (c.lr_final_frac - 1.0)

    def train_batch(self, batch: list[tuple[Transition, float]],
                    lr_scale: float = 1.0) -> np.ndarray:
        if not batch:
            raise ValueError("batch must be non-empty")
        k = len(batch)
        g = self.config.gamma
        trans = [b[0] for b in batch]
        w = np.array([b[1] for b in batch])
        S = np.stack([normalize_state(t.state.as_array()) for t in trans])
        S2 = np.stack([normalize_state(t.next_state.as_array()) for t in trans])
        act = np.array([t.action for t in trans])
        r = np.array([t.r_option for t in trans])
        live = np.array([0.0 if t.terminal else 1.0 for t in trans])
        rows = np.arange(k)

        a_star = np.argmax(self.q.forward(S2), axis=1)
        y = r + g * self.q_target.forward(S2)[rows, a_star] * live
        q1 = self.q.forward(S)
        pred = q1[rows, act]
        td = y - pred

        err = np.clip(pred - y, -TD_GRAD_CLIP, TD_GRAD_CLIP)
        grad = np.zeros_like(q1)
        grad[rows, act] = 2.0 * err * w / k
        tape, _ = self.q.backward(grad)
        self.q.sgd_step(tape, self.config.lr_action * lr_scale)
        return np.minimum(np.abs(td), TD_GRAD_CLIP)

    def sync_targets(self) -> None:
        self.q_target.copy_weights_from(self.q)

    def act_greedy(self, state: StateVector):
        return None, self.select_action(state, epsilon=0.0), None

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(b"HRLF v1 nets=q,q_target\n")
            fh.write(self.q.to_bytes())
            fh.write(self.q_target.to_bytes())

    @classmethod
    def load(cls, path, config: AgentConfig, seed: int = 0) -> "FlatDDQNAgent":
        with open(path, "rb") as fh:
            blob = fh.read()
        nl = blob.index(b"\n")
        if not blob[:nl].decode().startswith("HRLF v1 "):
            raise ValueError("not a flat-agent checkpoint")
        agent = cls(config, seed=seed)
        agent.q, offset = DenseNet.from_bytes(blob, nl + 1)
        agent.q_target, _ = DenseNet.from_bytes(blob, offset)
        return agent
