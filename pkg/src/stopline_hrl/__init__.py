"""Hierarchical DDQN behavior planner for stop-line approach scenarios."""

from .agent import AgentConfig, HRLAgent, normalize_state
from .baselines import FlatDDQNAgent, RuleId, RulePolicy, rule_action, rule_option
from .config import ReplayConfig, RunConfig, load_run_config
from .env import (DrivingEnv, EnvConfig, FrontVehicleProfile, ProfileKind,
                  StateVector, StepOutcome, TerminalKind, safety_distances)
from .harness import (VARIANTS, EpisodeReport, Variant, ablate, evaluate,
                      export_attention_trace, run_episode, train, train_flat)
from .nets import Activation, DenseNet, GradientTape, Layer
from .replay import Level, PrioritizedStore, ReplayMode, SumTree, Transition
from .rewards import (OptionId, RewardBreakdown, RewardConfig, hybrid_reward,
                      task_reward)

__all__ = [name for name in dir() if not name.startswith("_")]
