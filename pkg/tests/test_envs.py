import math

import numpy as np
import pytest

from classic_control import ACROBOT_SPEC, CARTPOLE_SPEC, MOUNTAINCAR_SPEC, acrobot_observation
from envs import (
    ENVIRONMENT_DEFAULTS,
    control_features,
    make_acrobot,
    make_cartpole,
    make_control,
    make_mountaincar,
    random_mdp,
    resolve_config,
    tabular_bundle,
)
from errors import ConfigurationError, EnvironmentStateError
from mdp import validate_mdp, value_iteration
from schemas import ExperimentConfig


def test_w2w_bundle(w2w):
    np.testing.assert_array_equal(w2w.mdp.transition[:, 0, :], [[0.0, 1.0], [0.0, 1.0]])
    np.testing.assert_array_equal(w2w.mu.weights, [[0.5], [0.5]])
    assert w2w.mu.mu_min == 0.5
    assert (w2w.recommended_gamma, w2w.recommended_alpha) == (0.9, 1e-2)
    assert np.max(np.abs(value_iteration(w2w.mdp))) < 1e-8


def test_star_bundle(star):
    assert star.mdp.transition.shape == (6, 2, 6)
    np.testing.assert_array_equal(star.mdp.transition[:, 0, 5], 1.0)
    np.testing.assert_allclose(star.mdp.transition[:, 1, :5], 0.2)
    probabilities = star.mu.weights.sum(axis=0)
    np.testing.assert_allclose(probabilities, [1 / 6, 5 / 6])
    assert star.mu.mu_min == pytest.approx(1 / 36)
    assert star.mdp.discount == 0.995
    assert np.max(np.abs(value_iteration(star.mdp))) < 1e-8


def test_random_mdp_is_valid(rng):
    for deterministic in (False, True):
        mdp = random_mdp(rng, 5, 3, 0.9, deterministic=deterministic)
        assert validate_mdp(mdp).valid
        assert mdp.is_deterministic == deterministic


@pytest.mark.parametrize(
    "factory, spec, actions, dimension",
    [
        (make_cartpole, CARTPOLE_SPEC, 2, 4),
        (make_mountaincar, MOUNTAINCAR_SPEC, 3, 2),
        (make_acrobot, ACROBOT_SPEC, 3, 4),
    ],
)
def test_control_specs(factory, spec, actions, dimension):
    sim, returned = factory()
    assert returned is spec
    assert sim.action_count() == actions
    assert spec.state_dimension == dimension


def test_max_episode_steps():
    assert CARTPOLE_SPEC.max_episode_steps == 500
    assert MOUNTAINCAR_SPEC.max_episode_steps == 200
    assert ACROBOT_SPEC.max_episode_steps == 500


def test_acrobot_observation_has_six_entries():
    observation = acrobot_observation(np.array([0.0, math.pi / 2, 0.5, -0.5]))
    np.testing.assert_allclose(observation, [1.0, 0.0, 0.0, 1.0, 0.5, -0.5], atol=1e-12)


def test_cartpole_zero_state_round_trip():
    sim, _ = make_cartpole()
    sim.set_state(np.zeros(4))
    np.testing.assert_array_equal(sim.get_state(), np.zeros(4))


def test_mountaincar_left_bound_round_trip():
    sim, _ = make_mountaincar()
    sim.set_state(np.array([-1.2, 0.0]))
    np.testing.assert_array_equal(sim.get_state(), [-1.2, 0.0])


def test_get_state_is_a_copy():
    sim, _ = make_cartpole()
    sim.set_state(np.zeros(4))
    state = sim.get_state()
    state[0] = 1.0
    assert sim.get_state()[0] == 0.0


@pytest.mark.parametrize("factory", [make_cartpole, make_mountaincar, make_acrobot])
def test_restored_state_steps_reproducibly(factory):
    sim, spec = factory()
    start = sim.reset(np.random.default_rng(0))
    trajectories = []
    for _ in range(2):
        sim.set_state(start)
        rng = np.random.default_rng(5)
        actions = rng.integers(spec.action_count, size=20)
        trajectories.append([sim.step(int(a), rng)[1].tolist() for a in actions])
    assert trajectories[0] == trajectories[1]


def test_invalid_states_are_rejected():
    sim, _ = make_cartpole()
    with pytest.raises(EnvironmentStateError):
        sim.set_state(np.zeros(3))
    with pytest.raises(EnvironmentStateError):
        sim.set_state(np.array([0.0, np.nan, 0.0, 0.0]))
    car, _ = make_mountaincar()
    with pytest.raises(EnvironmentStateError):
        car.set_state(np.array([0.7, 0.0]))
    with pytest.raises(EnvironmentStateError):
        car.step(3, np.random.default_rng(0))


@pytest.mark.parametrize("factory", [make_cartpole, make_mountaincar, make_acrobot])
def test_reward_conventions_under_random_policy(factory):
    sim, spec = factory()
    rng = np.random.default_rng(1)
    for _ in range(50):
        sim.reset(rng)
        for _ in range(spec.max_episode_steps):
            reward, state, terminal = sim.step(int(rng.integers(spec.action_count)), rng)
            assert np.all(np.isfinite(state))
            if terminal:
                assert reward == spec.terminal_reward == 0.0
                break
            assert reward == spec.step_reward


def test_cartpole_falls_when_pushed_one_way():
    sim, _ = make_cartpole()
    rng = np.random.default_rng(0)
    sim.set_state(np.zeros(4))
    for step in range(500):
        reward, _, terminal = sim.step(1, rng)
        if terminal:
            break
    assert terminal
    assert reward == 0.0


def test_mountaincar_velocity_is_clipped():
    sim, _ = make_mountaincar()
    sim.set_state(np.array([-0.5, 0.07]))
    _, state, _ = sim.step(2, np.random.default_rng(0))
    assert abs(state[1]) <= 0.07


def test_control_features_for_acrobot_use_observation():
    _, spec = make_acrobot()
    features = control_features(spec, [2])
    assert features.dimension == 2**6 * 3
    phi = features.evaluate(np.zeros(4), 1)
    assert phi.shape == (features.dimension,)
    assert phi[: 2**6].sum() == 0.0
    assert phi[2**6: 2 * 2**6].sum() == pytest.approx(1.0)


def test_make_control_rejects_tabular_names():
    with pytest.raises(ConfigurationError):
        make_control("w2w")


def test_resolve_config_fills_defaults():
    resolved = resolve_config(ExperimentConfig(env="mountaincar"))
    defaults = ENVIRONMENT_DEFAULTS["mountaincar"]
    assert resolved.gamma == 0.99
    assert resolved.lr == 3e-3
    assert resolved.feature_grid == [16]
    assert resolved.data_regime == "epsilon_greedy_replay"
    assert resolved.total_steps == defaults.total_steps
    assert resolved.eval_interval == defaults.total_steps // 100
    assert resolved.divergence_ceiling == defaults.divergence_ceiling


def test_resolve_config_keeps_explicit_values():
    resolved = resolve_config(ExperimentConfig(env="w2w", gamma=0.5, lr=0.2, total_steps=300, eval_interval=7))
    assert (resolved.gamma, resolved.lr, resolved.total_steps, resolved.eval_interval) == (0.5, 0.2, 300, 7)
    assert resolved.data_regime == "iid_mu"
    assert resolved.divergence_ceiling == 1e3


def test_cartpole_starts_with_optimistic_weights():
    assert resolve_config(ExperimentConfig(env="cartpole")).init_weight == 100.0
    assert resolve_config(ExperimentConfig(env="w2w")).init_weight == 1.0
    assert resolve_config(ExperimentConfig(env="cartpole", init_weight=0.0)).init_weight == 0.0


def test_tabular_config_takes_discount_from_file(repo_root):
    resolved = resolve_config(ExperimentConfig(env="tabular", mdp_file="configs/two_state.mdp"))
    assert resolved.gamma == 0.5
    with pytest.raises(ConfigurationError):
        resolve_config(ExperimentConfig(env="tabular", mdp_file="configs/two_state.mdp", gamma=0.9))


def test_tabular_bundle_for_random_env():
    config = ExperimentConfig(env="random", mdp_seed=3, num_states=4, num_actions=2, feature_dim=3, gamma=0.7)
    bundle = tabular_bundle(config)
    again = tabular_bundle(config)
    np.testing.assert_array_equal(bundle.mdp.transition, again.mdp.transition)
    assert bundle.features.dimension == 3
    assert bundle.mdp.discount == 0.7


def test_tabular_bundle_discount_override():
    bundle = tabular_bundle(ExperimentConfig(env="w2w", gamma=0.5))
    assert bundle.mdp.discount == 0.5
    assert bundle.recommended_gamma == 0.9
