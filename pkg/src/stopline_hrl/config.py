"""Flat key = value run configuration.

One text file configures a whole run: environment, rewards, agent,
replay and loop settings all share a single flat namespace.  Lines are
`key = value`, `#` starts a comment, list values are comma-separated.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

from .agent import AgentConfig
from .env import EnvConfig
from .replay import ReplayMode
from .rewards import RewardConfig


@dataclass(frozen=True)
class ReplayConfig:
    capacity: int = 500_000
    alpha: float = 0.3
    beta: float = 0.4
    epsilon_priority: float = 1e-3
    batch_size: int = 128


@dataclass(frozen=True)
class RunConfig:
    env: EnvConfig = dataclasses.field(default_factory=EnvConfig)
    reward: RewardConfig = dataclasses.field(default_factory=RewardConfig)
    agent: AgentConfig = dataclasses.field(default_factory=AgentConfig)
    replay: ReplayConfig = dataclasses.field(default_factory=ReplayConfig)
    epochs: int = 3000
    eval_every: int = 150
    eval_episodes: int = 100
    train_steps_per_epoch: int = 32
    run_seed: int = 0
    eval_seed_base: int = 1_000_000_000

    def validate(self) -> None:
        self.env.validate()
        self.reward.validate()
        self.agent.validate()
        if self.eval_every < 1:
            raise ValueError("eval_every must be >= 1")
        if self.epochs < 0 or self.eval_episodes < 1:
            raise ValueError("bad run sizes")

    def resolved_agent(self) -> AgentConfig:
        """Agent config with the epsilon decay horizon tied to the run
        length when left at zero."""
        if self.agent.epsilon_decay_epochs > 0:
            return self.agent
        decay = max(1, int(0.6 * self.epochs))
        return dataclasses.replace(self.agent, epsilon_decay_epochs=decay)


_SECTIONS = {
    "env": (EnvConfig, ("dt", "lane_length", "stop_line_pos",
                        "max_front_vehicles", "car_length", "a_max", "d0",
                        "v_limit", "timeout_steps", "seed")),
    "reward": (RewardConfig, ("sigma1", "sigma2", "sigma3", "sigma4",
                              "jerk_threshold")),
    "agent": (AgentConfig, ("gamma", "lr_option", "lr_action",
                            "lr_attention", "lr_decay_start",
                            "lr_decay_epochs", "lr_final_frac",
                            "epsilon_start", "epsilon_end",
                            "epsilon_decay_epochs", "action_table",
                            "hidden_sizes", "attention_hidden")),
    "replay": (ReplayConfig, ("capacity", "alpha", "beta",
                              "epsilon_priority", "batch_size")),
    "run": (RunConfig, ("epochs", "eval_every", "eval_episodes",
                        "train_steps_per_epoch", "run_seed",
                        "eval_seed_base")),
}


def _coerce(raw: str, like) -> object:
    if isinstance(like, bool):
        return raw.strip().lower() in ("1", "true", "yes")
    if isinstance(like, int):
        return int(raw)
    if isinstance(like, float):
        return float(raw)
    if isinstance(like, tuple):
        inner = like[0] if like else 0.0
        return tuple(type(inner)(_coerce(p, inner)) for p in raw.split(","))
    return raw


def parse_flat(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value'")
        key, val = (p.strip() for p in line.split("=", 1))
        if key in out:
            raise ValueError(f"line {lineno}: duplicate key '{key}'")
        out[key] = val
    return out


def run_config_from_text(text: str) -> RunConfig:
    pairs = parse_flat(text)
    values: dict[str, dict[str, object]] = {name: {} for name in _SECTIONS}
    known: dict[str, tuple[str, object]] = {}
    for section, (cls, keys) in _SECTIONS.items():
        defaults = cls()
        for key in keys:
            known[key] = (section, getattr(defaults, key))
    for key, raw in pairs.items():
        if key not in known:
            raise ValueError(f"unknown config key '{key}'")
        section, default = known[key]
        values[section][key] = _coerce(raw, default)

    run_kwargs = values.pop("run")
    cfg = RunConfig(
        env=EnvConfig(**values["env"]),
        reward=RewardConfig(**values["reward"]),
        agent=AgentConfig(**values["agent"]),
        replay=ReplayConfig(**values["replay"]),
        **run_kwargs,
    )
    cfg.validate()
    return cfg


def load_run_config(path) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return run_config_from_text(fh.read())


def dump_run_config(cfg: RunConfig) -> str:
    """Serialize back to the flat format (round-trips via load)."""
    lines = []
    for section, (cls, keys) in _SECTIONS.items():
        obj = cfg if section == "run" else getattr(cfg, section)
        for key in keys:
            val = getattr(obj, key)
            if isinstance(val, tuple):
                val = ",".join(repr(v) for v in val)
            lines.append(f"{key} = {val}")
    return "\n".join(lines) + "\n"
