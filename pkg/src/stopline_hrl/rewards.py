"""Hybrid reward pair (r_option, r_action) plus the flat task reward.

Each step carries a shared component sr (time penalty, timeout penalty,
success reward).  Failures of the currently selected sub-goal are charged
to the action level; failures of the other sub-goal are charged to the
option level.  The flat r_task collects everything for the
non-hierarchical baseline.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

from .env import StateVector, StepOutcome, TerminalKind


# Option identifiers live here to keep this module free of agent deps.
class OptionId(enum.IntEnum):
    SSL = 0   # stop at stop-line (sub-goal target: the line, "d")
    FFV = 1   # follow front vehicle (sub-goal target: the vehicle, "f")


@dataclass(frozen=True)
class RewardConfig:
    sigma1: float = 0.05        # per-step time penalty
    sigma2: float = 0.5         # unsmoothness penalty
    sigma3: float = 100.0       # collision-class penalty
    sigma4: float = 50.0        # success reward
    jerk_threshold: float = 1.0  # m/s^3

    def validate(self) -> None:
        for name in ("sigma1", "sigma2", "sigma3", "sigma4"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass
class RewardBreakdown:
    r_option: float
    r_action: float
    r_task: float
    # component name -> (option_part, action_part, task_part)
    components: dict[str, tuple[float, float, float]] = field(default_factory=dict)

    @property
    def sr(self) -> float:
        shared = ("time", "timeout", "success")
        return sum(self.components[k][0] for k in shared if k in self.components)


def _unsafe_penalty(d_c: float, d_s: float) -> float:
    """exp(-d_c/d_s) charged only when the chaseable margin is negative."""
    if d_c >= 0.0:
        return 0.0
    return math.exp(-d_c / max(d_s, 1e-9))


def _indicators(outcome: StepOutcome) -> tuple[bool, bool, bool, bool]:
    k = outcome.terminal_kind
    collided = k is TerminalKind.COLLISION
    crossed = k is TerminalKind.NOT_STOP
    timeout = k is TerminalKind.TIMEOUT
    success = k is TerminalKind.SUCCESS
    return collided, crossed, timeout, success


def hybrid_reward(state: StateVector, option: OptionId, outcome: StepOutcome,
                  cfg: RewardConfig) -> RewardBreakdown:
    """Reward pair for one executed step.

    `state` is the post-step observation (it carries this step's jerk and
    gap margins); `outcome` is the StepOutcome that produced it.  The
    "distance reached zero" indicators fire on the environment's terminal
    classification rather than on exact zeros.
    """
    collided, crossed, timeout, success = _indicators(outcome)

    d_fs = state.d_f - state.d_fc
    d_ds = state.d_d - state.d_dc

    comp: dict[str, tuple[float, float, float]] = {}

    def put(name: str, o: float, a: float, t: float) -> None:
        if o != 0.0 or a != 0.0 or t != 0.0:
            comp[name] = (o, a, t)

    # Shared component sr.
    time_pen = -cfg.sigma1
    put("time", time_pen, time_pen, time_pen)
    if timeout:
        pen = -state.d_d * state.d_d
        put("timeout", pen, pen, pen)
    if success:
        put("success", cfg.sigma4, cfg.sigma4, cfg.sigma4)

    # Sub-goal specific terms.  o is the selected target, o- the other.
    unsafe_front = -_unsafe_penalty(state.d_fc, d_fs)
    unsafe_stop = -_unsafe_penalty(state.d_dc, d_ds)
    smooth = -cfg.sigma2 if state.j_e > cfg.jerk_threshold else 0.0

    if option is OptionId.SSL:
        # Selected: stop-line.  Unselected: front vehicle.
        put("unsafe_front", unsafe_front, 0.0, unsafe_front)
        put("unsafe_stop", 0.0, unsafe_stop, unsafe_stop)
        if collided:   # unselected target's distance reached zero
            put("collision", -state.v_e * state.v_e, 0.0, -cfg.sigma3)
        if crossed:    # selected target's distance reached zero
            put("not_stop", 0.0, -cfg.sigma3, -state.v_e * state.v_e)
    else:
        put("unsafe_stop", unsafe_stop, 0.0, unsafe_stop)
        put("unsafe_front", 0.0, unsafe_front, unsafe_front)
        if crossed:
            put("not_stop", -state.v_e * state.v_e, 0.0, -state.v_e * state.v_e)
        if collided:
            put("collision", 0.0, -cfg.sigma3, -cfg.sigma3)
    put("unsmoothness", 0.0, smooth, smooth)

    r_o = sum(v[0] for v in comp.values())
    r_a = sum(v[1] for v in comp.values())
    r_t = sum(v[2] for v in comp.values())
    return RewardBreakdown(r_option=r_o, r_action=r_a, r_task=r_t,
                           components=comp)


def task_reward(state: StateVector, outcome: StepOutcome,
                cfg: RewardConfig) -> float:
    """Flat reward for the non-hierarchical baseline."""
    collided, crossed, timeout, success = _indicators(outcome)
    d_fs = state.d_f - state.d_fc
    d_ds = state.d_d - state.d_dc

    r = -cfg.sigma1
    if timeout:
        r -= state.d_d * state.d_d
    if success:
        r += cfg.sigma4
    r -= _unsafe_penalty(state.d_dc, d_ds)
    r -= _unsafe_penalty(state.d_fc, d_fs)
    if state.j_e > cfg.jerk_threshold:
        r -= cfg.sigma2
    if collided:
        r -= cfg.sigma3
    if crossed:
        r -= state.v_e * state.v_e
    return r
