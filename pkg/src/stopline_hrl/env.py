"""Longitudinal stop-line approach environment.

A single-lane, 1-D world: the ego vehicle starts some distance before a
stop-line with up to a few front vehicles queued ahead of it.  Front
vehicles follow scripted behavior profiles; the ego is driven by an
externally chosen acceleration each step.  Everything is deterministic
given (config, episode_seed).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

# Gap reported when no front vehicle is ahead of the ego.
NO_FRONT_SENTINEL = 1000.0

# Success thresholds: the ego counts as stopped at the line when slower
# than V_STOP_EPS and within D_STOP_EPS of it.
V_STOP_EPS = 0.1
D_STOP_EPS = 0.5

# Floor for the braking distance before the stop-line when forming the
# d_dc/d_ds ratio (the ratio is undefined for a stationary ego).
_D_DS_RATIO_FLOOR = 1e-3

# Names of the 11 state elements, in wire order.
STATE_FIELDS = (
    "v_e", "a_e", "j_e",
    "d_f", "v_f", "a_f", "d_fc", "fr",
    "d_d", "d_dc", "dr",
)
STATE_DIM = len(STATE_FIELDS)

TRACE_HEADER = "step,x_e,v_e,a_e,j_e,d_f,v_f,d_d,option,action,r_o,r_a,terminal"


class TerminalKind(enum.Enum):
    NONE = "none"
    COLLISION = "collision"
    NOT_STOP = "not_stop"
    TIMEOUT = "timeout"
    SUCCESS = "success"


class ProfileKind(enum.Enum):
    STOPS_AT_LINE = "stops_at_line"
    ROLLS_THROUGH = "rolls_through"
    STOP_THEN_GO = "stop_then_go"


@dataclass(frozen=True)
class EnvConfig:
    dt: float = 0.1
    lane_length: float = 200.0
    stop_line_pos: float = 150.0
    max_front_vehicles: int = 3
    car_length: float = 4.5
    a_max: float = 4.0          # positive magnitude of max deceleration
    d0: float = 5.0             # minimum allowable gap
    v_limit: float = 15.0
    timeout_steps: int = 600
    seed: int = 0

    def validate(self) -> None:
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.a_max <= 0 or self.d0 <= 0:
            raise ValueError("a_max and d0 must be positive")
        if self.timeout_steps <= 0:
            raise ValueError("timeout_steps must be positive")
        if not self.stop_line_pos < self.lane_length:
            raise ValueError("stop_line_pos must lie inside the lane")
        if self.max_front_vehicles < 0:
            raise ValueError("max_front_vehicles must be >= 0")


@dataclass
class VehicleState:
    position: float           # front bumper along the lane (m)
    velocity: float
    acceleration: float = 0.0
    prev_acceleration: float = 0.0


@dataclass(frozen=True)
class FrontVehicleProfile:
    profile_kind: ProfileKind
    cruise_speed: float
    decel_onset_dist: float = 25.0
    pause_steps: int = 30
    brake_rate: float = 1.5   # m/s^2 decel of the stop-line approach


@dataclass(frozen=True)
class StateVector:
    v_e: float
    a_e: float
    j_e: float
    d_f: float
    v_f: float
    a_f: float
    d_fc: float
    fr: float
    d_d: float
    d_dc: float
    dr: float

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, name) for name in STATE_FIELDS])


@dataclass(frozen=True)
class StepOutcome:
    state: StateVector
    terminal_kind: TerminalKind
    step_index: int

    @property
    def terminal(self) -> bool:
        return self.terminal_kind is not TerminalKind.NONE


def safety_distances(v_e: float, v_f: float, d_f: float, d_d: float,
                     config: EnvConfig) -> tuple[float, float, float, float]:
    """Braking margins and chaseable distances w.r.t. the front vehicle
    and the stop-line.  Returns (d_fs, d_fc, d_ds, d_dc)."""
    d_fs = max((v_e * v_e - v_f * v_f) / (2.0 * config.a_max), config.d0)
    d_fc = d_f - d_fs
    d_ds = v_e * v_e / (2.0 * config.a_max)
    d_dc = d_d - d_ds
    return d_fs, d_fc, d_ds, d_dc


class EpisodeFinishedError(RuntimeError):
    """Raised when step() is called after a terminal state."""


# Default mix for randomly drawn front-vehicle profiles.  STOPS_AT_LINE
# parks at the line forever, which makes an episode unwinnable for the
# ego, so it is not part of the random draw; construct it explicitly via
# the `profiles` override when needed.
_PROFILE_DRAW = (
    (ProfileKind.STOP_THEN_GO, 0.6),
    (ProfileKind.ROLLS_THROUGH, 0.4),
)

# Distribution of the drawn front-vehicle count (index = count); counts
# above max_front_vehicles are clipped by renormalizing over the prefix.
_COUNT_DRAW = (0.2, 0.35, 0.25, 0.2)

_FRONT_ACCEL = 2.0        # m/s^2, used by STOP_THEN_GO when departing
_FRONT_HEADWAY = 0.8      # s, car-following headway for scripted vehicles
_FRONT_BRAKE_MAX = 6.0    # m/s^2, scripted vehicles can out-brake the ego


class _FrontVehicle:
    def __init__(self, profile: FrontVehicleProfile, position: float):
        self.profile = profile
        self.state = VehicleState(position=position, velocity=profile.cruise_speed)
        self.pause_remaining = profile.pause_steps
        self.departing = profile.profile_kind is ProfileKind.ROLLS_THROUGH

    def command(self, cfg: EnvConfig, leader: "_FrontVehicle | None") -> float:
        p = self.profile
        v = self.state.velocity
        dist_to_line = cfg.stop_line_pos - self.state.position

        if self.departing:
            a = _FRONT_ACCEL if v < p.cruise_speed else 0.0
        elif dist_to_line <= p.decel_onset_dist:
            if v <= 0.05 and dist_to_line <= 2.0:
                # Holding at the line.
                if p.profile_kind is ProfileKind.STOP_THEN_GO:
                    self.pause_remaining -= 1
                    if self.pause_remaining <= 0:
                        self.departing = True
                a = _FRONT_ACCEL if self.departing else 0.0
            elif dist_to_line <= 2.0:
                # Final braking: come to a crisp stop before the line.
                a = -max(v * v / (2.0 * max(dist_to_line - 0.5, 0.2)), 1.0)
                a = max(a, -_FRONT_BRAKE_MAX)
            else:
                # Brake at the rate needed to stop ~1 m short of the
                # line once that reaches the profile's decel; below it,
                # keep cruising (also covers re-approach after queueing).
                needed = v * v / (2.0 * max(dist_to_line - 1.0, 0.1))
                if needed >= p.brake_rate:
                    a = -min(needed, _FRONT_BRAKE_MAX)
                else:
                    a = min(max(p.cruise_speed - v, 0.0), _FRONT_ACCEL)
        else:
            a = _FRONT_ACCEL if v < p.cruise_speed else 0.0

        # Never run into the own leader: brake hard once the gap falls
        # under the minimum plus the relative stopping distance (the
        # leader may be braking too).
        if leader is not None:
            gap = (leader.state.position - cfg.car_length) - self.state.position
            v_l = leader.state.velocity
            rel_stop = max((v * v - v_l * v_l) / (2.0 * _FRONT_BRAKE_MAX), 0.0)
            if gap < cfg.d0 + rel_stop:
                a = -_FRONT_BRAKE_MAX
            elif gap < cfg.d0 + rel_stop + 2.0 * _FRONT_HEADWAY * v:
                a = min(a, 0.0)
        return a

    def advance(self, cfg: EnvConfig, accel: float) -> None:
        s = self.state
        s.prev_acceleration = s.acceleration
        s.acceleration = accel
        s.velocity = min(max(s.velocity + accel * cfg.dt, 0.0), cfg.v_limit)
        s.position += s.velocity * cfg.dt


class DrivingEnv:
    """Deterministic, seedable stop-line approach simulation.

    One instance runs one episode at a time; call reset() to start a new
    one.  Instances share no mutable state, so independently seeded
    copies may run in parallel.
    """

    def __init__(self, config: EnvConfig):
        config.validate()
        self.config = config
        self.ego: VehicleState | None = None
        self.fronts: list[_FrontVehicle] = []
        self.step_index = 0
        self.finished = True
        self.last_terminal = TerminalKind.NONE

    # -- episode setup ------------------------------------------------

    def reset(self, episode_seed: int,
              profiles: list[FrontVehicleProfile] | None = None) -> StateVector:
        cfg = self.config
        rng = np.random.default_rng(
            np.random.SeedSequence(entropy=(cfg.seed, int(episode_seed))))

        start_gap = rng.uniform(60.0, 120.0)
        ego_x = cfg.stop_line_pos - start_gap
        ego_v = rng.uniform(0.5, 1.0) * cfg.v_limit
        self.ego = VehicleState(position=ego_x, velocity=ego_v)

        drawn = profiles is None
        if drawn:
            probs = np.array(_COUNT_DRAW[:cfg.max_front_vehicles + 1])
            n = int(rng.choice(len(probs), p=probs / probs.sum()))
            profiles = [self._draw_profile(rng, cfg) for _ in range(n)]
        elif len(profiles) > cfg.max_front_vehicles:
            raise ValueError("more profiles than max_front_vehicles")

        self.fronts = []
        pos = ego_x
        min_gap = cfg.d0 + cfg.car_length
        for prof in profiles:
            pos += cfg.car_length + rng.uniform(min_gap + 5.0, 45.0)
            if pos >= cfg.lane_length:
                if drawn:
                    break  # no room left in the lane, drop the rest
                raise ValueError("cannot place front vehicles without overlap "
                                 "inside the lane")
            fv = _FrontVehicle(prof, pos)
            if pos > cfg.stop_line_pos:
                fv.departing = True  # spawned past the line, just drives on
            self.fronts.append(fv)

        self.step_index = 0
        self.finished = False
        self.last_terminal = TerminalKind.NONE
        return self._observe()

    @staticmethod
    def _draw_profile(rng: np.random.Generator, cfg: EnvConfig) -> FrontVehicleProfile:
        u = rng.uniform()
        acc = 0.0
        kind = _PROFILE_DRAW[-1][0]
        for k, p in _PROFILE_DRAW:
            acc += p
            if u < acc:
                kind = k
                break
        cruise = rng.uniform(0.4, 0.85) * cfg.v_limit
        onset = rng.uniform(20.0, 35.0)
        brake = rng.uniform(2.0, 6.0)
        # Leave room to actually reach the profile: a late onset at high
        # speed would carry the vehicle past the line.
        onset = max(onset, cruise * cruise / (2.0 * brake) + 4.0)
        return FrontVehicleProfile(
            profile_kind=kind,
            cruise_speed=cruise,
            decel_onset_dist=onset,
            pause_steps=int(rng.integers(30, 81)),
            brake_rate=brake,
        )

    # -- stepping -----------------------------------------------------

    def step(self, action_accel: float) -> StepOutcome:
        if self.finished:
            raise EpisodeFinishedError("episode already terminal; call reset()")
        cfg = self.config
        ego = self.ego
        assert ego is not None

        ego.prev_acceleration = ego.acceleration
        ego.acceleration = float(action_accel)
        ego.velocity = min(max(ego.velocity + ego.acceleration * cfg.dt, 0.0),
                           cfg.v_limit)
        ego.position += ego.velocity * cfg.dt

        # Front vehicles, front-most first so each sees its leader's
        # already-known position from this decision instant.
        ordered = sorted(self.fronts, key=lambda f: f.state.position, reverse=True)
        for i, fv in enumerate(ordered):
            leader = ordered[i - 1] if i > 0 else None
            fv.advance(cfg, fv.command(cfg, leader))

        self.step_index += 1
        state = self._observe()
        terminal = self._terminal_kind(state)
        if terminal is not TerminalKind.NONE:
            self.finished = True
            self.last_terminal = terminal
        return StepOutcome(state=state, terminal_kind=terminal,
                           step_index=self.step_index)

    def _terminal_kind(self, state: StateVector) -> TerminalKind:
        cfg = self.config
        ego = self.ego
        if state.d_f <= 0.0:
            return TerminalKind.COLLISION
        raw_d_d = cfg.stop_line_pos - ego.position
        if raw_d_d <= 0.0:
            return (TerminalKind.SUCCESS if ego.velocity <= V_STOP_EPS
                    else TerminalKind.NOT_STOP)
        if ego.velocity <= V_STOP_EPS and raw_d_d <= D_STOP_EPS:
            return TerminalKind.SUCCESS
        if self.step_index >= cfg.timeout_steps:
            return TerminalKind.TIMEOUT
        return TerminalKind.NONE

    # -- observation --------------------------------------------------

    def _nearest_front(self) -> _FrontVehicle | None:
        ego_x = self.ego.position
        line = self.config.stop_line_pos
        best = None
        best_gap = math.inf
        for fv in self.fronts:
            rear = fv.state.position - self.config.car_length
            if rear >= line:
                # A vehicle fully past the stop-line has left the approach
                # problem: the ego can never reach it without crossing the
                # line first, so it no longer constrains the ego.
                continue
            gap = rear - ego_x
            if gap < best_gap:
                best_gap = gap
                best = fv
        return best

    def _observe(self) -> StateVector:
        cfg = self.config
        ego = self.ego
        front = self._nearest_front()
        if front is None:
            d_f, v_f, a_f = NO_FRONT_SENTINEL, 0.0, 0.0
        else:
            d_f = (front.state.position - cfg.car_length) - ego.position
            d_f = max(d_f, 0.0)
            v_f = front.state.velocity
            a_f = front.state.acceleration
        d_d = max(cfg.stop_line_pos - ego.position, 0.0)

        d_fs, d_fc, d_ds, d_dc = safety_distances(ego.velocity, v_f, d_f, d_d, cfg)
        j_e = (ego.acceleration - ego.prev_acceleration) / cfg.dt
        return StateVector(
            v_e=ego.velocity,
            a_e=ego.acceleration,
            j_e=j_e,
            d_f=d_f, v_f=v_f, a_f=a_f,
            d_fc=d_fc, fr=d_fc / d_fs,
            d_d=d_d, d_dc=d_dc,
            dr=d_dc / max(d_ds, _D_DS_RATIO_FLOOR),
        )

    # -- helpers ------------------------------------------------------

    @property
    def n_front_vehicles(self) -> int:
        return len(self.fronts)

    def front_profiles(self) -> list[FrontVehicleProfile]:
        return [fv.profile for fv in self.fronts]
