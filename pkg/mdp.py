import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Hashable, Optional

import numpy as np

from errors import ConfigurationError, IterationLimitError
from schemas import ValidationReport

logger = logging.getLogger(__name__)

ROW_SUM_TOLERANCE = 1e-12


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.array(array, dtype=float)
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class TabularMdp:
    """Finite MDP with explicit tables.

    transition has shape (S, A, S), expected_reward and reward_noise shape (S, A).
    reward_noise holds half-widths of a zero-mean two-point noise: the sampled
    reward is r(x, a) +/- scale with equal probability.
    """

    transition: np.ndarray
    expected_reward: np.ndarray
    discount: float
    terminal: frozenset[int] = frozenset()
    reward_noise: Optional[np.ndarray] = None
    _cumulative: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "transition", _frozen(self.transition))
        object.__setattr__(self, "expected_reward", _frozen(self.expected_reward))
        if self.reward_noise is not None:
            object.__setattr__(self, "reward_noise", _frozen(self.reward_noise))
        object.__setattr__(self, "terminal", frozenset(int(s) for s in self.terminal))
        if self.transition.ndim != 3 or self.transition.shape[0] != self.transition.shape[2]:
            raise ConfigurationError(f"transition must have shape (S, A, S), got {self.transition.shape}")
        if self.expected_reward.shape != self.transition.shape[:2]:
            raise ConfigurationError(
                f"expected_reward shape {self.expected_reward.shape} does not match {self.transition.shape[:2]}"
            )
        if self.reward_noise is not None and self.reward_noise.shape != self.expected_reward.shape:
            raise ConfigurationError("reward_noise must match the expected_reward shape")
        object.__setattr__(self, "_cumulative", _frozen(np.cumsum(self.transition, axis=2)))

    @property
    def num_states(self) -> int:
        return self.transition.shape[0]

    @property
    def num_actions(self) -> int:
        return self.transition.shape[1]

    @property
    def is_deterministic(self) -> bool:
        return bool(np.all(np.isclose(self.transition.max(axis=2), 1.0))) and not self.has_reward_noise

    @property
    def has_reward_noise(self) -> bool:
        return self.reward_noise is not None and bool(np.any(self.reward_noise != 0.0))

    def terminal_mask(self) -> np.ndarray:
        mask = np.zeros(self.num_states, dtype=bool)
        mask[list(self.terminal)] = True
        return mask


@dataclass(frozen=True)
class StateActionDistribution:
    weights: np.ndarray
    _cumulative: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "weights", _frozen(self.weights))
        if self.weights.ndim != 2:
            raise ConfigurationError("state-action weights must be a (S, A) table")
        if np.any(self.weights < 0.0) or abs(float(self.weights.sum()) - 1.0) > ROW_SUM_TOLERANCE:
            raise ConfigurationError("state-action weights must be non-negative and sum to 1")
        object.__setattr__(self, "_cumulative", np.cumsum(self.weights.ravel()))

    @property
    def mu_min(self) -> float:
        support = self.weights[self.weights > 0.0]
        return float(support.min())

    @property
    def full_support(self) -> bool:
        return bool(np.all(self.weights > 0.0))

    def sample(self, rng: np.random.Generator) -> tuple[int, int]:
        index = int(np.searchsorted(self._cumulative, rng.random(), side="right"))
        index = min(index, self.weights.size - 1)
        state, action = divmod(index, self.weights.shape[1])
        return state, action


def uniform_distribution(num_states: int, num_actions: int) -> StateActionDistribution:
    return StateActionDistribution(np.full((num_states, num_actions), 1.0 / (num_states * num_actions)))


@dataclass(frozen=True)
class TransitionSample:
    state: Any
    action: int
    reward: float
    next_state: Any
    terminal: bool


class SimulatorContract(ABC):
    """Resettable, state-settable environment used for acting and for planning."""

    @abstractmethod
    def reset(self, rng: np.random.Generator) -> Any:
        ...

    @abstractmethod
    def get_state(self) -> Any:
        ...

    @abstractmethod
    def set_state(self, state: Any) -> None:
        ...

    @abstractmethod
    def step(self, action: int, rng: np.random.Generator) -> tuple[float, Any, bool]:
        ...

    @abstractmethod
    def action_count(self) -> int:
        ...

    def state_key(self, state: Any) -> Hashable:
        return state


def validate_mdp(mdp: TabularMdp) -> ValidationReport:
    violations: list[str] = []
    row_sums = mdp.transition.sum(axis=2)
    for state, action in zip(*np.nonzero(np.abs(row_sums - 1.0) > ROW_SUM_TOLERANCE)):
        violations.append(f"row-sum: P(.|{state},{action}) sums to {row_sums[state, action]:.15g}")
    for state, action in zip(*np.nonzero(np.any(mdp.transition < 0.0, axis=2))):
        violations.append(f"negativity: P(.|{state},{action}) has negative entries")
    if not (0.0 <= mdp.discount < 1.0):
        violations.append(f"discount: {mdp.discount} is outside [0, 1)")
    if not np.all(np.isfinite(mdp.expected_reward)):
        violations.append("reward: expected rewards must be finite")
    for state in sorted(mdp.terminal):
        if not 0 <= state < mdp.num_states:
            violations.append(f"terminal: state {state} is out of range")
            continue
        if not np.allclose(mdp.transition[state, :, state], 1.0):
            violations.append(f"terminal-self-loop: state {state} does not self-loop")
        if np.any(mdp.expected_reward[state] != 0.0):
            violations.append(f"terminal-self-loop: state {state} has non-zero reward")
        if mdp.reward_noise is not None and np.any(mdp.reward_noise[state] != 0.0):
            violations.append(f"terminal-self-loop: state {state} has reward noise")
    return ValidationReport(valid=not violations, violations=violations)


def require_valid(mdp: TabularMdp) -> TabularMdp:
    report = validate_mdp(mdp)
    if not report.valid:
        raise ConfigurationError("Invalid MDP: " + "; ".join(report.violations))
    return mdp


def sample_transition(mdp: TabularMdp, state: int, action: int, rng: np.random.Generator) -> TransitionSample:
    if not 0 <= state < mdp.num_states:
        raise IndexError(f"state {state} out of range for {mdp.num_states} states")
    if not 0 <= action < mdp.num_actions:
        raise IndexError(f"action {action} out of range for {mdp.num_actions} actions")
    cumulative = mdp._cumulative[state, action]
    next_state = min(int(np.searchsorted(cumulative, rng.random(), side="right")), mdp.num_states - 1)
    reward = float(mdp.expected_reward[state, action])
    if mdp.reward_noise is not None:
        scale = float(mdp.reward_noise[state, action])
        reward += scale if rng.random() < 0.5 else -scale
    return TransitionSample(
        state=state,
        action=action,
        reward=reward,
        next_state=next_state,
        terminal=next_state in mdp.terminal,
    )


def bellman_backup(mdp: TabularMdp, q: np.ndarray) -> np.ndarray:
    return mdp.expected_reward + mdp.discount * (mdp.transition @ q.max(axis=1))


def value_iteration(mdp: TabularMdp, tolerance: float = 1e-10, max_iters: int = 100_000) -> np.ndarray:
    """Return q with ||Hq - q||_inf <= tolerance."""
    if tolerance <= 0.0:
        raise ValueError("tolerance must be positive")
    q = np.zeros((mdp.num_states, mdp.num_actions))
    residual = float("inf")
    for iteration in range(1, max_iters + 1):
        updated = bellman_backup(mdp, q)
        residual = float(np.max(np.abs(updated - q)))
        q = updated
        # ||H q_new - q_new|| <= gamma * ||q_new - q_old||
        if residual <= tolerance:
            logger.debug("value iteration converged after %d iterations", iteration)
            return q
    raise IterationLimitError(
        f"value iteration did not reach tolerance {tolerance} in {max_iters} iterations",
        iterations=max_iters,
        residual=residual,
    )


def greedy_policy(q: np.ndarray) -> np.ndarray:
    """Argmax per state; np.argmax already breaks ties toward the lowest index."""
    if not np.all(np.isfinite(q)):
        raise ValueError("q-table must be finite")
    return np.argmax(q, axis=1)


class TabularSimulator(SimulatorContract):
    def __init__(self, mdp: TabularMdp, initial_states: Optional[np.ndarray] = None):
        self.mdp = mdp
        self._initial = (
            np.full(mdp.num_states, 1.0 / mdp.num_states) if initial_states is None else np.asarray(initial_states)
        )
        self._state = 0

    def reset(self, rng: np.random.Generator) -> int:
        self._state = int(rng.choice(self.mdp.num_states, p=self._initial))
        return self._state

    def get_state(self) -> int:
        return self._state

    def set_state(self, state: int) -> None:
        if not 0 <= int(state) < self.mdp.num_states:
            raise IndexError(f"state {state} out of range for {self.mdp.num_states} states")
        self._state = int(state)

    def step(self, action: int, rng: np.random.Generator) -> tuple[float, int, bool]:
        sample = sample_transition(self.mdp, self._state, action, rng)
        self._state = sample.next_state
        return sample.reward, sample.next_state, sample.terminal

    def action_count(self) -> int:
        return self.mdp.num_actions


def _data_lines(path: Path) -> list[list[str]]:
    lines = []
    for raw in path.read_text(encoding="utf-8").splitlines():
        text = raw.split("#", 1)[0].strip()
        if text:
            lines.append(text.split())
    return lines


def load_mdp(path: str | Path) -> TabularMdp:
    """Read the plain-text MDP format described in README.md."""
    path = Path(path)
    lines = _data_lines(path)
    if not lines or len(lines[0]) != 3:
        raise ConfigurationError(f"{path}: header must be 'states actions gamma'")
    try:
        num_states, num_actions, gamma = int(lines[0][0]), int(lines[0][1]), float(lines[0][2])
    except ValueError as exc:
        raise ConfigurationError(f"{path}: malformed header: {exc}") from exc

    transition = np.full((num_states, num_actions, num_states), np.nan)
    reward = np.zeros((num_states, num_actions))
    noise = None
    terminal: set[int] = set()
    for tokens in lines[1:]:
        try:
            if tokens[0] == "terminal":
                terminal.update(int(token) for token in tokens[1:])
            elif tokens[0] == "noise":
                if noise is None:
                    noise = np.zeros((num_states, num_actions))
                noise[int(tokens[1]), int(tokens[2])] = float(tokens[3])
            else:
                if len(tokens) != 3 + num_states:
                    raise ConfigurationError(f"{path}: expected 's a r p_1..p_{num_states}', got {' '.join(tokens)}")
                state, action = int(tokens[0]), int(tokens[1])
                reward[state, action] = float(tokens[2])
                transition[state, action] = [float(token) for token in tokens[3:]]
        except (ValueError, IndexError) as exc:
            raise ConfigurationError(f"{path}: malformed line '{' '.join(tokens)}': {exc}") from exc
    if np.isnan(transition).any():
        raise ConfigurationError(f"{path}: every (state, action) pair needs a transition line")
    return require_valid(
        TabularMdp(transition=transition, expected_reward=reward, discount=gamma, terminal=frozenset(terminal), reward_noise=noise)
    )


def dump_mdp(mdp: TabularMdp, path: str | Path) -> None:
    lines = [f"{mdp.num_states} {mdp.num_actions} {mdp.discount!r}"]
    for state in range(mdp.num_states):
        for action in range(mdp.num_actions):
            probabilities = " ".join(repr(float(p)) for p in mdp.transition[state, action])
            lines.append(f"{state} {action} {float(mdp.expected_reward[state, action])!r} {probabilities}")
    if mdp.reward_noise is not None:
        for state, action in zip(*np.nonzero(mdp.reward_noise)):
            lines.append(f"noise {state} {action} {float(mdp.reward_noise[state, action])!r}")
    if mdp.terminal:
        lines.append("terminal " + " ".join(str(s) for s in sorted(mdp.terminal)))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
