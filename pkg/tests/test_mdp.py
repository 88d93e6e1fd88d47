import numpy as np
import pytest

from errors import ConfigurationError, IterationLimitError
from mdp import (
    StateActionDistribution,
    TabularMdp,
    TabularSimulator,
    dump_mdp,
    greedy_policy,
    load_mdp,
    require_valid,
    sample_transition,
    uniform_distribution,
    validate_mdp,
    value_iteration,
)


def _loop_mdp(gamma=0.5):
    transition = np.array([[[0.0, 1.0]], [[1.0, 0.0]]])
    return TabularMdp(transition=transition, expected_reward=np.ones((2, 1)), discount=gamma)


def test_valid_mdp_has_no_violations():
    report = validate_mdp(_loop_mdp())
    assert report.valid
    assert report.violations == []


def test_row_sum_violation_is_reported():
    transition = np.array([[[0.5, 0.4]], [[1.0, 0.0]]])
    report = validate_mdp(TabularMdp(transition=transition, expected_reward=np.zeros((2, 1)), discount=0.9))
    assert not report.valid
    assert any(v.startswith("row-sum") for v in report.violations)


def test_negative_probability_and_bad_discount_are_reported():
    transition = np.array([[[1.5, -0.5]], [[1.0, 0.0]]])
    report = validate_mdp(TabularMdp(transition=transition, expected_reward=np.zeros((2, 1)), discount=1.0))
    kinds = {v.split(":")[0] for v in report.violations}
    assert {"negativity", "discount"} <= kinds


def test_terminal_state_must_self_loop():
    mdp = TabularMdp(
        transition=np.array([[[0.0, 1.0]], [[1.0, 0.0]]]),
        expected_reward=np.zeros((2, 1)),
        discount=0.9,
        terminal=frozenset({1}),
    )
    report = validate_mdp(mdp)
    assert any(v.startswith("terminal-self-loop") for v in report.violations)
    with pytest.raises(ConfigurationError):
        require_valid(mdp)


def test_shape_mismatch_is_rejected():
    with pytest.raises(ConfigurationError):
        TabularMdp(transition=np.ones((2, 1, 2)) / 2, expected_reward=np.zeros((2, 2)), discount=0.9)


def test_tables_are_read_only():
    mdp = _loop_mdp()
    with pytest.raises(ValueError):
        mdp.transition[0, 0, 0] = 1.0


def test_sample_transition_follows_deterministic_row(rng):
    sample = sample_transition(_loop_mdp(), 0, 0, rng)
    assert sample.next_state == 1
    assert sample.reward == 1.0
    assert not sample.terminal


def test_sample_transition_is_reproducible_from_seed():
    transition = np.array([[[0.2, 0.3, 0.5], [0.6, 0.2, 0.2]]] * 3)
    mdp = TabularMdp(
        transition=transition,
        expected_reward=np.arange(6.0).reshape(3, 2),
        discount=0.9,
        reward_noise=np.full((3, 2), 0.1),
    )

    def draw(seed):
        generator = np.random.default_rng(seed)
        return [sample_transition(mdp, s % 3, s % 2, generator) for s in range(200)]

    assert draw(7) == draw(7)
    assert draw(7) != draw(8)


def test_sample_transition_rejects_bad_indices(rng):
    mdp = _loop_mdp()
    with pytest.raises(IndexError):
        sample_transition(mdp, 2, 0, rng)
    with pytest.raises(IndexError):
        sample_transition(mdp, 0, 1, rng)


def test_sample_transition_frequencies_match_row(rng):
    transition = np.array([[[0.25, 0.75]], [[0.5, 0.5]]])
    mdp = TabularMdp(transition=transition, expected_reward=np.zeros((2, 1)), discount=0.9)
    draws = [sample_transition(mdp, 0, 0, rng).next_state for _ in range(20_000)]
    assert abs(np.mean(draws) - 0.75) < 0.02


def test_reward_noise_is_two_point_and_centered(rng):
    mdp = TabularMdp(
        transition=np.array([[[1.0]]]),
        expected_reward=np.array([[2.0]]),
        discount=0.5,
        reward_noise=np.array([[0.5]]),
    )
    rewards = np.array([sample_transition(mdp, 0, 0, rng).reward for _ in range(10_000)])
    assert set(np.unique(rewards)) == {1.5, 2.5}
    assert abs(rewards.mean() - 2.0) < 0.03


def test_value_iteration_on_loop_mdp():
    q = value_iteration(_loop_mdp(0.5), tolerance=1e-12)
    np.testing.assert_allclose(q, 2.0, atol=1e-10)


def test_value_iteration_gamma_zero_returns_rewards():
    mdp = TabularMdp(
        transition=np.array([[[1.0, 0.0], [0.0, 1.0]], [[1.0, 0.0], [0.0, 1.0]]]),
        expected_reward=np.array([[1.0, 3.0], [-1.0, 0.5]]),
        discount=0.0,
    )
    np.testing.assert_allclose(value_iteration(mdp), mdp.expected_reward)


def test_value_iteration_iteration_limit():
    with pytest.raises(IterationLimitError) as info:
        value_iteration(_loop_mdp(0.99), tolerance=1e-12, max_iters=3)
    assert info.value.iterations == 3
    assert info.value.residual > 0.0


def test_greedy_policy_breaks_ties_low():
    q = np.array([[1.0, 1.0], [0.0, 2.0]])
    assert greedy_policy(q).tolist() == [0, 1]


def test_distribution_validates_and_samples(rng):
    with pytest.raises(ConfigurationError):
        StateActionDistribution(np.array([[0.5, 0.6]]))
    mu = StateActionDistribution(np.array([[0.1, 0.2], [0.3, 0.4]]))
    assert mu.mu_min == pytest.approx(0.1)
    assert mu.full_support
    counts = np.zeros((2, 2))
    for _ in range(100_000):
        state, action = mu.sample(rng)
        counts[state, action] += 1
    np.testing.assert_allclose(counts / counts.sum(), mu.weights, atol=0.01)


def test_uniform_distribution():
    mu = uniform_distribution(3, 2)
    assert mu.mu_min == pytest.approx(1 / 6)


def test_tabular_simulator_round_trip(rng):
    sim = TabularSimulator(_loop_mdp())
    sim.set_state(1)
    assert sim.get_state() == 1
    reward, next_state, terminal = sim.step(0, rng)
    assert (reward, next_state, terminal) == (1.0, 0, False)
    with pytest.raises(IndexError):
        sim.set_state(5)


def test_mdp_file_round_trip(tmp_path):
    mdp = TabularMdp(
        transition=np.array([[[0.25, 0.75], [1.0, 0.0]], [[0.0, 1.0], [0.0, 1.0]]]),
        expected_reward=np.array([[0.5, -1.0], [0.0, 0.0]]),
        discount=0.8,
        terminal=frozenset({1}),
        reward_noise=np.array([[0.0, 0.25], [0.0, 0.0]]),
    )
    path = tmp_path / "model.mdp"
    dump_mdp(mdp, path)
    loaded = load_mdp(path)
    np.testing.assert_array_equal(loaded.transition, mdp.transition)
    np.testing.assert_array_equal(loaded.expected_reward, mdp.expected_reward)
    np.testing.assert_array_equal(loaded.reward_noise, mdp.reward_noise)
    assert loaded.discount == 0.8
    assert loaded.terminal == frozenset({1})


def test_load_mdp_rejects_missing_pairs(tmp_path):
    path = tmp_path / "partial.mdp"
    path.write_text("2 1 0.9\n0 0 0.0 0.0 1.0\n", encoding="utf-8")
    with pytest.raises(ConfigurationError):
        load_mdp(path)


def test_shipped_two_state_model(repo_root):
    mdp = load_mdp("configs/two_state.mdp")
    assert mdp.discount == 0.5
    np.testing.assert_allclose(value_iteration(mdp, tolerance=1e-12), 2.0, atol=1e-10)
