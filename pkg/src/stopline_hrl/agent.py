"""Two-level option/action agent with state attention.

The option network scores the two sub-goals on the raw (normalized)
state.  An attention head, conditioned on state and selected option,
produces softmax weights over the 11 state elements; the weighted state
feeds the action network.  Both levels use double-Q targets with lagged
target copies and epsilon-greedy exploration.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .env import STATE_DIM, StateVector
from .nets import Activation, DenseNet, Layer
from .replay import Transition
from .rewards import OptionId

N_OPTIONS = 2

# Per-sample TD error clip (Huber-style) applied both in the loss
# gradient and to the absolute TD errors handed back for priorities:
# the occasional huge timeout target (~1e4) would otherwise blow up
# plain SGD and monopolise prioritized sampling.
TD_GRAD_CLIP = 300.0

# Fixed elementwise scaling applied to state vectors before any network
# sees them (the raw elements span several orders of magnitude, ratios
# especially).  Values are clipped after scaling.
_STATE_SCALES = np.array([15.0, 4.0, 40.0,      # v_e, a_e, j_e
                          100.0, 15.0, 4.0,     # d_f, v_f, a_f
                          100.0, 1.0,           # d_fc, fr
                          100.0, 100.0, 1.0])   # d_d, d_dc, dr
# The safety ratios pass through at scale 1: they are already
# dimensionless O(1) quantities in the interaction regime, and shrinking
# them any further makes the nets lean on the raw distances instead
# (the clip soaks up their no-front / standstill blow-ups).
_STATE_CLIP = 5.0

_BUNDLE_NETS = ("option", "option_target", "action", "action_target",
                "attention")


def normalize_state(s: np.ndarray) -> np.ndarray:
    return np.clip(np.asarray(s, dtype=float) / _STATE_SCALES,
                   -_STATE_CLIP, _STATE_CLIP)


def _one_hot(idx: np.ndarray | int, n: int) -> np.ndarray:
    idx = np.atleast_1d(np.asarray(idx, dtype=int))
    out = np.zeros((len(idx), n))
    out[np.arange(len(idx)), idx] = 1.0
    return out


@dataclass(frozen=True)
class AgentConfig:
    gamma: float = 0.995
    lr_option: float = 3e-4
    lr_action: float = 3e-4
    # The attention head feeds multiplicative weights into the action
    # net; training it at the action net's pace keeps shifting that
    # net's input distribution and the joint system never settles, so
    # the head learns at a much smaller rate.
    lr_attention: float = 1e-4
    # Linear learning-rate anneal: scale from 1 down to lr_final_frac
    # over lr_decay_epochs, starting at epoch lr_decay_start
    # (lr_decay_epochs = 0 keeps the rate constant).  Late-training
    # policy collapse under plain SGD is otherwise common here, but
    # annealing from the start freezes the policy before it is found.
    lr_decay_start: int = 2000
    lr_decay_epochs: int = 1000
    lr_final_frac: float = 0.2
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    epsilon_decay_epochs: int = 800  # 0 = derive from the run length
    action_table: tuple[float, ...] = (-4.0, -2.0, -1.0, 0.0, 1.0, 2.0)
    hidden_sizes: tuple[int, ...] = (64, 64)
    attention_hidden: int = 32

    def validate(self) -> None:
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must be in (0, 1)")
        if not 0.0 <= self.epsilon_end <= self.epsilon_start <= 1.0:
            raise ValueError("need 0 <= epsilon_end <= epsilon_start <= 1")
        if list(self.action_table) != sorted(set(self.action_table)):
            raise ValueError("action_table must be strictly increasing")
        if self.epsilon_decay_epochs < 0:
            raise ValueError("epsilon_decay_epochs must be >= 0")
        if self.lr_decay_epochs < 0 or self.lr_decay_start < 0:
            raise ValueError("lr decay schedule must be >= 0")
        if not 0.0 < self.lr_final_frac <= 1.0:
            raise ValueError("lr_final_frac must be in (0, 1]")


class HRLAgent:
    """Option-value + action-value networks with a shared attention head."""

    def __init__(self, config: AgentConfig, seed: int = 0,
                 use_attention: bool = True):
        config.validate()
        self.config = config
        self.use_attention = use_attention
        self.n_actions = len(config.action_table)
        self._action_table = np.array(config.action_table)

        init_rng = np.random.default_rng(
            np.random.SeedSequence(entropy=(seed, 0xA6E)))
        hid = list(config.hidden_sizes)
        self.q_option = DenseNet.create([STATE_DIM] + hid + [N_OPTIONS], init_rng)
        self.q_action = DenseNet.create(
            [STATE_DIM + N_OPTIONS] + hid + [self.n_actions], init_rng)
        self.attention = DenseNet.create(
            [STATE_DIM + N_OPTIONS, config.attention_hidden, STATE_DIM],
            init_rng, output_activation=Activation.SOFTMAX)
        self.q_option_target = self.q_option.clone()
        self.q_action_target = self.q_action.clone()

        self._rng = np.random.default_rng(
            np.random.SeedSequence(entropy=(seed, 0xE9)))

    # -- exploration schedule -----------------------------------------

    def epsilon_at(self, epoch: int) -> float:
        c = self.config
        if c.epsilon_decay_epochs == 0:
            return c.epsilon_end
        frac = min(epoch / c.epsilon_decay_epochs, 1.0)
        return c.epsilon_start + frac * (c.epsilon_end - c.epsilon_start)

    def lr_scale_at(self, epoch: int) -> float:
        c = self.config
        if c.lr_decay_epochs == 0:
            return 1.0
        frac = min(max(epoch - c.lr_decay_start, 0) / c.lr_decay_epochs, 1.0)
        return 1.0 + frac * (c.lr_final_frac - 1.0)

    # -- selection ----------------------------------------------------

    def option_values(self, state: StateVector) -> np.ndarray:
        return self.q_option.forward(normalize_state(state.as_array()))

    def select_option(self, state: StateVector, epsilon: float) -> OptionId:
        if self._rng.uniform() < epsilon:
            return OptionId(int(self._rng.integers(0, N_OPTIONS)))
        return OptionId(int(np.argmax(self.option_values(state))))

    def apply_attention(self, state: StateVector,
                        option: OptionId) -> tuple[np.ndarray, np.ndarray]:
        """Returns (weighted normalized state, attention weights).

        With attention disabled the state passes through unweighted and
        the reported weights are uniform.
        """
        s = normalize_state(state.as_array())
        if not self.use_attention:
            return s, np.full(STATE_DIM, 1.0 / STATE_DIM)
        x = np.concatenate([s, _one_hot(int(option), N_OPTIONS)[0]])
        w = self.attention.forward(x)
        return w * s, w

    def action_values(self, weighted_state: np.ndarray,
                      option: OptionId) -> np.ndarray:
        x = np.concatenate([weighted_state, _one_hot(int(option), N_OPTIONS)[0]])
        return self.q_action.forward(x)

    def select_action(self, weighted_state: np.ndarray, option: OptionId,
                      epsilon: float) -> int:
        if self._rng.uniform() < epsilon:
            return int(self._rng.integers(0, self.n_actions))
        return int(np.argmax(self.action_values(weighted_state, option)))

    def accel_of(self, action: int) -> float:
        return float(self._action_table[action])

    # -- targets ------------------------------------------------------

    def option_target(self, t: Transition, gamma: float | None = None) -> float:
        if t.terminal:
            return t.r_option
        g = self.config.gamma if gamma is None else gamma
        s2 = normalize_state(t.next_state.as_array())
        o_star = int(np.argmax(self.q_option.forward(s2)))
        return t.r_option + g * float(self.q_option_target.forward(s2)[o_star])

    def action_target(self, t: Transition, gamma: float | None = None) -> float:
        if t.terminal:
            return t.r_action
        g = self.config.gamma if gamma is None else gamma
        s2 = normalize_state(t.next_state.as_array())
        o_star = OptionId(int(np.argmax(self.q_option.forward(s2))))
        s2_w, _ = self.apply_attention(t.next_state, o_star)
        x2 = np.concatenate([s2_w, _one_hot(int(o_star), N_OPTIONS)[0]])
        a_star = int(np.argmax(self.q_action.forward(x2)))
        return t.r_action + g * float(self.q_action_target.forward(x2)[a_star])

    # -- training -----------------------------------------------------

    def train_batch(self, batch: list[tuple[Transition, float, float]],
                    lr_scale: float = 1.0
                    ) -> tuple[np.ndarray, np.ndarray]:
        """One importance-weighted SGD step on both networks.

        batch entries are (transition, is_weight_option, is_weight_action).
        Returns per-transition absolute TD errors (option, action) for
        priority updates.
        """
        if not batch:
            raise ValueError("batch must be non-empty")
        k = len(batch)
        g = self.config.gamma
        trans = [b[0] for b in batch]
        w_o = np.array([b[1] for b in batch])
        w_a = np.array([b[2] for b in batch])

        S = np.stack([normalize_state(t.state.as_array()) for t in trans])
        S2 = np.stack([normalize_state(t.next_state.as_array()) for t in trans])
        opt = np.array([int(t.option) for t in trans])
        act = np.array([t.action for t in trans])
        r_o = np.array([t.r_option for t in trans])
        r_a = np.array([t.r_action for t in trans])
        live = np.array([0.0 if t.terminal else 1.0 for t in trans])
        rows = np.arange(k)

        # Option-level double-Q targets.
        q2 = self.q_option.forward(S2)
        o_star = np.argmax(q2, axis=1)
        q2_t = self.q_option_target.forward(S2)
        y_o = r_o + g * q2_t[rows, o_star] * live

        # Action-level targets: next-state attention under o*, argmax by
        # the online action net, value from the target copy.
        x2 = self._action_input(S2, o_star)
        qa2 = self.q_action.forward(x2)
        a_star = np.argmax(qa2, axis=1)
        qa2_t = self.q_action_target.forward(x2)
        y_a = r_a + g * qa2_t[rows, a_star] * live

        # Current-state forwards last, so the caches backward() uses
        # belong to the prediction pass.
        q1 = self.q_option.forward(S)
        pred_o = q1[rows, opt]
        td_o = y_o - pred_o

        x1, w1 = self._action_input(S, opt, return_weights=True)
        qa1 = self.q_action.forward(x1)
        pred_a = qa1[rows, act]
        td_a = y_a - pred_a

        err_o = np.clip(pred_o - y_o, -TD_GRAD_CLIP, TD_GRAD_CLIP)
        err_a = np.clip(pred_a - y_a, -TD_GRAD_CLIP, TD_GRAD_CLIP)

        grad_o = np.zeros_like(q1)
        grad_o[rows, opt] = 2.0 * err_o * w_o / k
        tape_o, _ = self.q_option.backward(grad_o)
        self.q_option.sgd_step(tape_o, self.config.lr_option * lr_scale)

        grad_a = np.zeros_like(qa1)
        grad_a[rows, act] = 2.0 * err_a * w_a / k
        tape_a, in_grad = self.q_action.backward(grad_a)
        self.q_action.sgd_step(tape_a, self.config.lr_action * lr_scale)

        if self.use_attention:
            # Chain through the multiplicative weighting: the head saw
            # x = state (+) onehot as its cached forward input.
            d_weights = in_grad[:, :STATE_DIM] * S
            tape_att, _ = self.attention.backward(d_weights)
            self.attention.sgd_step(tape_att,
                                    self.config.lr_attention * lr_scale)

        return (np.minimum(np.abs(td_o), TD_GRAD_CLIP),
                np.minimum(np.abs(td_a), TD_GRAD_CLIP))

    def _action_input(self, S: np.ndarray, options: np.ndarray,
                      return_weights: bool = False):
        oh = _one_hot(options, N_OPTIONS)
        if self.use_attention:
            w = self.attention.forward(np.concatenate([S, oh], axis=1))
            weighted = w * S
        else:
            w = np.full_like(S, 1.0 / STATE_DIM)
            weighted = S
        x = np.concatenate([weighted, oh], axis=1)
        return (x, w) if return_weights else x

    def sync_targets(self) -> None:
        self.q_option_target.copy_weights_from(self.q_option)
        self.q_action_target.copy_weights_from(self.q_action)

    # -- episode interface used by the evaluation harness -------------

    def act_greedy(self, state: StateVector) -> tuple[OptionId, int, np.ndarray]:
        option = self.select_option(state, epsilon=0.0)
        weighted, weights = self.apply_attention(state, option)
        action = int(np.argmax(self.action_values(weighted, option)))
        return option, action, weights

    # -- checkpointing ------------------------------------------------

    def save(self, path) -> None:
        header = ("HRLA v1 attention={} nets={}\n"
                  .format(1 if self.use_attention else 0,
                          ",".join(_BUNDLE_NETS))).encode()
        nets = (self.q_option, self.q_option_target,
                self.q_action, self.q_action_target, self.attention)
        with open(path, "wb") as fh:
            fh.write(header)
            for net in nets:
                fh.write(net.to_bytes())

    @classmethod
    def load(cls, path, config: AgentConfig, seed: int = 0) -> "HRLAgent":
        with open(path, "rb") as fh:
            blob = fh.read()
        nl = blob.index(b"\n")
        header = blob[:nl].decode()
        if not header.startswith("HRLA v1 "):
            raise ValueError("not an agent checkpoint bundle")
        use_attention = "attention=1" in header
        agent = cls(config, seed=seed, use_attention=use_attention)
        offset = nl + 1
        nets = []
        for _ in _BUNDLE_NETS:
            net, offset = DenseNet.from_bytes(blob, offset)
            nets.append(net)
        (agent.q_option, agent.q_option_target,
         agent.q_action, agent.q_action_target, agent.attention) = nets
        return agent
