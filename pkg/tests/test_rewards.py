"""Hybrid reward decomposition and the flat task reward."""

import math

import numpy as np
import pytest

from stopline_hrl.env import StateVector, StepOutcome, TerminalKind
from stopline_hrl.rewards import (OptionId, RewardConfig, hybrid_reward,
                                  task_reward)

CFG = RewardConfig()


def _state(**kw):
    base = dict(v_e=5.0, a_e=0.0, j_e=0.0, d_f=40.0, v_f=3.0, a_f=0.0,
                d_fc=35.0, fr=7.0, d_d=60.0, d_dc=55.0, dr=11.0)
    base.update(kw)
    return StateVector(**base)


def _outcome(state, kind=TerminalKind.NONE, step=10):
    return StepOutcome(state=state, terminal_kind=kind, step_index=step)


def _random_state(rng):
    v_e = rng.uniform(0.0, 15.0)
    v_f = rng.uniform(0.0, 15.0)
    d_f = rng.uniform(0.0, 120.0)
    d_d = rng.uniform(0.0, 120.0)
    d_fs = max((v_e * v_e - v_f * v_f) / 8.0, 5.0)
    d_ds = v_e * v_e / 8.0
    return StateVector(
        v_e=v_e, a_e=rng.uniform(-4.0, 2.0), j_e=rng.uniform(-40.0, 40.0),
        d_f=d_f, v_f=v_f, a_f=rng.uniform(-4.0, 2.0),
        d_fc=d_f - d_fs, fr=(d_f - d_fs) / d_fs,
        d_d=d_d, d_dc=d_d - d_ds, dr=(d_d - d_ds) / max(d_ds, 1e-3),
    )


def test_decomposition_identity_over_random_triples():
    rng = np.random.default_rng(42)
    kinds = list(TerminalKind)
    for _ in range(10_000):
        state = _random_state(rng)
        option = OptionId(int(rng.integers(0, 2)))
        kind = kinds[rng.integers(0, len(kinds))]
        bd = hybrid_reward(state, option, _outcome(state, kind), CFG)

        shared = {"time", "timeout", "success"}
        unshared = sum(v[0] + v[1] for k, v in bd.components.items()
                       if k not in shared)
        # Scale-aware 1e-12 bound: the timeout term can push the sums to
        # ~1e4, where a fixed absolute tolerance is below float64 ulp.
        scale = max(1.0, abs(bd.r_option) + abs(bd.r_action))
        assert abs((bd.r_option + bd.r_action - 2.0 * bd.sr)
                   - unshared) < 1e-12 * scale
        # Per-level sums reproduce the reported rewards.
        assert abs(bd.r_option
                   - sum(v[0] for v in bd.components.values())) < 1e-12
        assert abs(bd.r_action
                   - sum(v[1] for v in bd.components.values())) < 1e-12


def test_task_reward_components_are_union_of_hybrid_components():
    rng = np.random.default_rng(43)
    kinds = list(TerminalKind)
    for _ in range(10_000):
        state = _random_state(rng)
        option = OptionId(int(rng.integers(0, 2)))
        kind = kinds[rng.integers(0, len(kinds))]
        outcome = _outcome(state, kind)
        bd = hybrid_reward(state, option, outcome, CFG)
        r_t = task_reward(state, outcome, CFG)
        assert abs(r_t - sum(v[2] for v in bd.components.values())) < 1e-12
        # Every component charged at either level also shows up in the
        # flat reward attribution.
        for name, (o, a, t) in bd.components.items():
            if o != 0.0 or a != 0.0:
                assert t != 0.0 or name in ("collision", "not_stop"), name


def test_time_penalty_always_present():
    state = _state()
    bd = hybrid_reward(state, OptionId.SSL, _outcome(state), CFG)
    assert bd.components["time"] == (-CFG.sigma1, -CFG.sigma1, -CFG.sigma1)
    assert bd.sr == pytest.approx(-CFG.sigma1)


def test_success_reward_is_shared():
    state = _state(v_e=0.0, d_d=0.3, d_dc=0.3, dr=300.0)
    bd = hybrid_reward(state, OptionId.SSL,
                       _outcome(state, TerminalKind.SUCCESS), CFG)
    assert bd.components["success"] == (CFG.sigma4, CFG.sigma4, CFG.sigma4)
    assert bd.sr == pytest.approx(-CFG.sigma1 + CFG.sigma4)


def test_timeout_penalty_scales_with_remaining_distance():
    state = _state(d_d=30.0)
    bd = hybrid_reward(state, OptionId.FFV,
                       _outcome(state, TerminalKind.TIMEOUT, step=600), CFG)
    assert bd.components["timeout"][0] == pytest.approx(-900.0)
    assert bd.r_option == pytest.approx(-CFG.sigma1 - 900.0)


def test_collision_charged_to_option_level_under_ssl():
    # SSL selected: hitting the (unselected) front vehicle is the option
    # level's mistake; the flat reward takes the sigma3 hit instead.
    state = _state(v_e=4.0, d_f=0.0, d_fc=-5.0, fr=-1.0)
    bd = hybrid_reward(state, OptionId.SSL,
                       _outcome(state, TerminalKind.COLLISION), CFG)
    o, a, t = bd.components["collision"]
    assert o == pytest.approx(-16.0)
    assert a == 0.0
    assert t == pytest.approx(-CFG.sigma3)


def test_collision_charged_to_action_level_under_ffv():
    state = _state(v_e=4.0, d_f=0.0, d_fc=-5.0, fr=-1.0)
    bd = hybrid_reward(state, OptionId.FFV,
                       _outcome(state, TerminalKind.COLLISION), CFG)
    o, a, t = bd.components["collision"]
    assert o == 0.0
    assert a == pytest.approx(-CFG.sigma3)
    assert t == pytest.approx(-CFG.sigma3)


def test_line_crossing_charged_to_action_level_under_ssl():
    state = _state(v_e=6.0, d_d=0.0, d_dc=-4.5, dr=-1.0)
    bd = hybrid_reward(state, OptionId.SSL,
                       _outcome(state, TerminalKind.NOT_STOP), CFG)
    o, a, t = bd.components["not_stop"]
    assert o == 0.0
    assert a == pytest.approx(-CFG.sigma3)
    assert t == pytest.approx(-36.0)


def test_line_crossing_charged_to_option_level_under_ffv():
    state = _state(v_e=6.0, d_d=0.0, d_dc=-4.5, dr=-1.0)
    bd = hybrid_reward(state, OptionId.FFV,
                       _outcome(state, TerminalKind.NOT_STOP), CFG)
    o, a, t = bd.components["not_stop"]
    assert o == pytest.approx(-36.0)
    assert a == 0.0
    assert t == pytest.approx(-36.0)


def test_unsafe_penalty_fires_only_on_negative_margin():
    safe = _state(d_fc=3.0)
    bd = hybrid_reward(safe, OptionId.FFV, _outcome(safe), CFG)
    assert "unsafe_front" not in bd.components

    unsafe = _state(d_f=4.0, d_fc=-2.0)   # d_fs = 6
    bd = hybrid_reward(unsafe, OptionId.FFV, _outcome(unsafe), CFG)
    o, a, t = bd.components["unsafe_front"]
    assert a == pytest.approx(-math.exp(2.0 / 6.0))
    assert o == 0.0 and t == a


def test_unsafe_attribution_swaps_with_the_option():
    state = _state(d_f=4.0, d_fc=-2.0, d_d=2.0, d_dc=-1.0)
    ssl = hybrid_reward(state, OptionId.SSL, _outcome(state), CFG)
    ffv = hybrid_reward(state, OptionId.FFV, _outcome(state), CFG)
    # Selected sub-goal's margin is the action level's business.
    assert ssl.components["unsafe_stop"][1] != 0.0
    assert ssl.components["unsafe_stop"][0] == 0.0
    assert ffv.components["unsafe_front"][1] != 0.0
    assert ffv.components["unsafe_front"][0] == 0.0


def test_jerk_penalty_only_above_threshold_and_only_positive():
    for j, hit in ((0.5, False), (1.0, False), (1.5, True), (-30.0, False)):
        state = _state(j_e=j)
        bd = hybrid_reward(state, OptionId.SSL, _outcome(state), CFG)
        if hit:
            assert bd.components["unsmoothness"][1] == pytest.approx(-CFG.sigma2)
            assert bd.components["unsmoothness"][0] == 0.0
        else:
            assert "unsmoothness" not in bd.components


def test_config_validation():
    with pytest.raises(ValueError):
        RewardConfig(sigma3=0.0).validate()
    RewardConfig().validate()
