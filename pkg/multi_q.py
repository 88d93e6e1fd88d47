import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Optional, Protocol, Sequence

import numpy as np

from errors import DivergenceError, EnumerationLimitError
from features import FeatureMap, TabularFeatureMap
from mdp import SimulatorContract, TabularMdp, TransitionSample
from schemas import LearnerConfig, RunStatus

logger = logging.getLogger(__name__)

ENUMERATION_LIMIT = 10**7

Row = tuple[int, str, float]


@dataclass(frozen=True)
class SampledTarget:
    value: float
    nodes_expanded: int
    depth: int


class TransitionSource(Protocol):
    def next_transition(self, step: int, weights: np.ndarray, rng: np.random.Generator) -> TransitionSample:
        ...


def _tree_value(
    sim: SimulatorContract,
    features: FeatureMap,
    weights: np.ndarray,
    state: Any,
    depth: int,
    gamma: float,
    rng: np.random.Generator,
    counter: list[int],
) -> float:
    num_actions = sim.action_count()
    if depth == 1:
        counter[0] += num_actions
        return float(np.max(features.action_values(state, weights)))
    best = -np.inf
    for action in range(num_actions):
        counter[0] += 1
        sim.set_state(state)
        reward, next_state, terminal = sim.step(action, rng)
        value = reward
        if not terminal:
            value += gamma * _tree_value(sim, features, weights, next_state, depth - 1, gamma, rng, counter)
        best = max(best, value)
    return best


def sample_target(
    sim: SimulatorContract,
    features: FeatureMap,
    weights: np.ndarray,
    transition: TransitionSample,
    n: int,
    rng: np.random.Generator,
    *,
    gamma: float,
) -> SampledTarget:
    """Full-breadth depth-n target: every action tried at every node, one sampled successor each."""
    if n < 1:
        raise ValueError("target depth must be >= 1")
    if transition.terminal:
        return SampledTarget(value=float(transition.reward), nodes_expanded=0, depth=n)
    counter = [0]
    leaf = _tree_value(sim, features, weights, transition.next_state, n, gamma, rng, counter)
    return SampledTarget(value=float(transition.reward + gamma * leaf), nodes_expanded=counter[0], depth=n)


def tree_size(num_actions: int, n: int) -> int:
    return sum(num_actions**level for level in range(1, n + 1))


def _merge(values: np.ndarray, probs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    support, inverse = np.unique(values, return_inverse=True)
    return support, np.bincount(inverse.ravel(), weights=probs, minlength=support.size)


def _max_of_independent(outcomes: Sequence[tuple[np.ndarray, np.ndarray]]) -> tuple[np.ndarray, np.ndarray]:
    support = np.unique(np.concatenate([values for values, _ in outcomes]))
    cdf = np.ones(support.size)
    for values, probs in outcomes:
        cumulative = np.concatenate(([0.0], np.cumsum(probs)))
        cdf *= cumulative[np.searchsorted(values, support, side="right")]
    pmf = np.clip(np.diff(cdf, prepend=0.0), 0.0, None)
    keep = pmf > 0.0
    return support[keep], pmf[keep]


@dataclass
class _ChanceTree:
    """Exact distribution of the sampled tree values on a tabular MDP."""

    mdp: TabularMdp
    leaf_values: np.ndarray
    memo: dict[tuple[int, int], tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)

    def _reward_outcomes(self, state: int, action: int) -> list[tuple[float, float]]:
        reward = float(self.mdp.expected_reward[state, action])
        if self.mdp.reward_noise is None or self.mdp.reward_noise[state, action] == 0.0:
            return [(reward, 1.0)]
        scale = float(self.mdp.reward_noise[state, action])
        return [(reward + scale, 0.5), (reward - scale, 0.5)]

    def value_distribution(self, state: int, depth: int) -> tuple[np.ndarray, np.ndarray]:
        if depth == 1:
            return np.array([self.leaf_values[state]]), np.array([1.0])
        key = (state, depth)
        if key not in self.memo:
            outcomes = [self._action_distribution(state, action, depth) for action in range(self.mdp.num_actions)]
            self.memo[key] = _max_of_independent(outcomes)
        return self.memo[key]

    def _action_distribution(self, state: int, action: int, depth: int) -> tuple[np.ndarray, np.ndarray]:
        gamma = self.mdp.discount
        values, probs = [], []
        for next_state in np.flatnonzero(self.mdp.transition[state, action] > 0.0):
            p_next = float(self.mdp.transition[state, action, next_state])
            if int(next_state) in self.mdp.terminal:
                tail_values, tail_probs = np.zeros(1), np.ones(1)
            else:
                tail_values, tail_probs = self.value_distribution(int(next_state), depth - 1)
            for reward, p_reward in self._reward_outcomes(state, action):
                values.append(reward + gamma * tail_values)
                probs.append(p_next * p_reward * tail_probs)
        return _merge(np.concatenate(values), np.concatenate(probs))

    def expected_value(self, state: int, depth: int) -> float:
        values, probs = self.value_distribution(state, depth)
        return float(values @ probs)

    def expected_target(self, state: int, action: int, n: int) -> float:
        total = float(self.mdp.expected_reward[state, action])
        for next_state in np.flatnonzero(self.mdp.transition[state, action] > 0.0):
            if int(next_state) not in self.mdp.terminal:
                total += (
                    self.mdp.discount
                    * float(self.mdp.transition[state, action, next_state])
                    * self.expected_value(int(next_state), n)
                )
        return total


def _chance_tree(mdp: TabularMdp, features: TabularFeatureMap, weights: np.ndarray, n: int) -> _ChanceTree:
    if n < 1:
        raise ValueError("target depth must be >= 1")
    paths = (mdp.num_states * mdp.num_actions) ** n
    if paths > ENUMERATION_LIMIT:
        raise EnumerationLimitError(
            f"depth {n} on {mdp.num_states} states x {mdp.num_actions} actions has {paths} outcome paths "
            f"(limit {ENUMERATION_LIMIT})"
        )
    return _ChanceTree(mdp=mdp, leaf_values=features.q_table(weights).max(axis=1))


def expected_sampled_target(
    mdp: TabularMdp, features: TabularFeatureMap, weights: np.ndarray, state: int, action: int, n: int
) -> float:
    """E[tau^n | x, a] over every successor realization of the sampled tree."""
    return _chance_tree(mdp, features, weights, n).expected_target(state, action, n)


def expected_target_table(mdp: TabularMdp, features: TabularFeatureMap, weights: np.ndarray, n: int) -> np.ndarray:
    tree = _chance_tree(mdp, features, weights, n)
    table = np.empty((mdp.num_states, mdp.num_actions))
    for state in range(mdp.num_states):
        for action in range(mdp.num_actions):
            table[state, action] = tree.expected_target(state, action, n)
    return table


def update_step(
    weights: np.ndarray,
    features: FeatureMap,
    transition: TransitionSample,
    target: SampledTarget,
    alpha: float,
    step: Optional[int] = None,
) -> np.ndarray:
    if alpha <= 0.0:
        raise ValueError("learning rate must be positive")
    phi = features.evaluate(transition.state, transition.action)
    with np.errstate(over="ignore", invalid="ignore"):
        updated = weights + alpha * (target.value - float(phi @ weights)) * phi
    if not np.all(np.isfinite(updated)):
        raise DivergenceError(step)
    return updated


@dataclass
class LearningResult:
    weights: np.ndarray
    status: RunStatus
    steps: int
    rows: list[Row]
    snapshots: dict[int, np.ndarray]


def run_learning(
    planner: SimulatorContract,
    features: FeatureMap,
    source: TransitionSource,
    config: LearnerConfig,
    rng: np.random.Generator,
    *,
    initial_weights: Optional[np.ndarray] = None,
    probes: Sequence[tuple[Any, int]] = (),
    snapshot_steps: Iterable[int] = (),
    record_interval: Optional[int] = None,
    on_record: Optional[Callable[[int, np.ndarray], dict[str, float]]] = None,
) -> LearningResult:
    """Run total_steps multi Q-learning updates and return the metric stream."""
    weights = (
        np.zeros(features.dimension)
        if initial_weights is None
        else features.check_weights(initial_weights).copy()
    )
    interval = record_interval or max(1, config.total_steps // 100)
    snapshot_at = set(snapshot_steps)
    snapshots: dict[int, np.ndarray] = {}
    rows: list[Row] = []
    epsilon = getattr(source, "epsilon", None)

    def record(step: int) -> None:
        rows.append((step, "weight_norm", float(np.linalg.norm(weights))))
        for index, (state, action) in enumerate(probes):
            rows.append((step, f"q_probe_{index}", float(features.evaluate(state, action) @ weights)))
        if callable(epsilon):
            rows.append((step, "epsilon", float(epsilon(step))))
        if on_record is not None:
            for name, value in on_record(step, weights).items():
                rows.append((step, name, float(value)))

    logger.info("learning start: depth=%d gamma=%s steps=%d", config.depth, config.gamma, config.total_steps)
    record(0)
    last_recorded = 0
    window_start = weights.copy()
    window_delta = np.inf
    status: RunStatus = "completed"
    step = 0
    for t in range(config.total_steps):
        transition = source.next_transition(t, weights, rng)
        target = sample_target(planner, features, weights, transition, config.depth, rng, gamma=config.gamma)
        try:
            weights = update_step(weights, features, transition, target, config.learning_rate(t), step=t + 1)
        except DivergenceError as exc:
            logger.warning("parameters became non-finite at step %s", exc.step)
            status = "divergent"
            step = t + 1
            break
        step = t + 1
        if step in snapshot_at:
            snapshots[step] = weights.copy()
        if np.linalg.norm(weights) > config.divergence_ceiling:
            logger.warning("weight norm passed the ceiling %s at step %d", config.divergence_ceiling, step)
            status = "divergent"
            break
        if step % interval == 0 or step == config.total_steps:
            window_delta = float(np.linalg.norm(weights - window_start))
            window_start = weights.copy()
            record(step)
            last_recorded = step

    if last_recorded != step:
        record(step)
    norm = float(np.linalg.norm(weights))
    if status == "completed" and window_delta <= config.convergence_tolerance * max(1.0, norm):
        status = "converged"
    rows.append((step, "divergent", 1.0 if status == "divergent" else 0.0))
    rows.append((step, "converged", 1.0 if status == "converged" else 0.0))
    logger.info("learning finished: status=%s steps=%d weight_norm=%.6g", status, step, norm)
    return LearningResult(weights=weights, status=status, steps=step, rows=rows, snapshots=snapshots)
