"""Experiment orchestration: data regimes, evaluation, seed fan-out, aggregation and CSV I/O."""
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Optional, Sequence

import numpy as np
import pandas as pd

from config import Settings, load_settings
from envs import control_features, make_control, resolve_config, tabular_bundle
from errors import AggregationError, ConfigurationError, EmptyBufferError, ReportError
from features import FeatureMap
from mdp import SimulatorContract, StateActionDistribution, TabularMdp, TabularSimulator, TransitionSample, sample_transition
from multi_q import run_learning
from schemas import ExperimentConfig, RunRecord

logger = logging.getLogger(__name__)

RECORD_COLUMNS = ["seed", "step", "metric", "value"]
SWEEP_COLUMNS = ["n", *RECORD_COLUMNS]
CSV_FLOAT_FORMAT = "%.12g"

# Tabular chains have no natural episode end; acting restarts on this horizon.
TABULAR_EPISODE_STEPS = 100


class ReplayBuffer:
    """Fixed-capacity FIFO ring of transitions, sampled uniformly."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ConfigurationError("replay buffer capacity must be >= 1")
        self.capacity = int(capacity)
        self._storage: list[TransitionSample] = []
        self._next = 0

    @classmethod
    def for_budget(cls, total_steps: int, fraction: float = 0.2) -> "ReplayBuffer":
        return cls(max(1, math.floor(fraction * total_steps)))

    def __len__(self) -> int:
        return len(self._storage)

    @property
    def size(self) -> int:
        return len(self._storage)

    def push(self, sample: TransitionSample) -> None:
        if len(self._storage) < self.capacity:
            self._storage.append(sample)
        else:
            self._storage[self._next] = sample
        self._next = (self._next + 1) % self.capacity

    def sample(self, rng: np.random.Generator) -> TransitionSample:
        if not self._storage:
            raise EmptyBufferError("cannot sample from an empty replay buffer")
        return self._storage[int(rng.integers(len(self._storage)))]

    def contents(self) -> list[TransitionSample]:
        """Stored transitions, oldest first."""
        if len(self._storage) < self.capacity:
            return list(self._storage)
        return self._storage[self._next:] + self._storage[:self._next]


@dataclass(frozen=True)
class EpsilonSchedule:
    start: float = 1.0
    end: float = 0.05
    decay_horizon: float = 1.0

    @classmethod
    def for_budget(cls, total_steps: int, start: float = 1.0, end: float = 0.05) -> "EpsilonSchedule":
        return cls(start=start, end=end, decay_horizon=max(1.0, total_steps / 2))

    def value(self, t: int) -> float:
        if t >= self.decay_horizon:
            return self.end
        return self.start + (self.end - self.start) * (max(t, 0) / self.decay_horizon)


def epsilon(schedule: EpsilonSchedule, t: int) -> float:
    return schedule.value(t)


def greedy_action(features: FeatureMap, state: Any, weights: np.ndarray) -> int:
    return int(np.argmax(features.action_values(state, weights)))


class IidMuSource:
    """(x, a) drawn i.i.d. from mu, successor from the tabular model."""

    def __init__(self, mdp: TabularMdp, mu: StateActionDistribution):
        self.mdp = mdp
        self.mu = mu

    def next_transition(self, step: int, weights: np.ndarray, rng: np.random.Generator) -> TransitionSample:
        state, action = self.mu.sample(rng)
        return sample_transition(self.mdp, state, action, rng)


class _Actor:
    """Runs episodes on a single-owner simulator, truncating at max_episode_steps."""

    def __init__(self, sim: SimulatorContract, max_episode_steps: int):
        self.sim = sim
        self.max_episode_steps = max_episode_steps
        self._state: Any = None
        self._episode_steps = 0

    def act(self, action_for: Any, rng: np.random.Generator) -> TransitionSample:
        if self._state is None:
            self._state = self.sim.reset(rng)
            self._episode_steps = 0
        state = self._state
        action = action_for(state)
        reward, next_state, terminal = self.sim.step(action, rng)
        self._episode_steps += 1
        sample = TransitionSample(state=state, action=action, reward=reward, next_state=next_state, terminal=terminal)
        if terminal or self._episode_steps >= self.max_episode_steps:
            self._state = None
        else:
            self._state = next_state
        return sample


class EpsilonGreedyReplaySource:
    """Acts epsilon-greedily, pushes each transition, then samples one from the buffer."""

    def __init__(
        self,
        sim: SimulatorContract,
        features: FeatureMap,
        buffer: ReplayBuffer,
        schedule: EpsilonSchedule,
        max_episode_steps: int,
    ):
        self.features = features
        self.buffer = buffer
        self.schedule = schedule
        self._actor = _Actor(sim, max_episode_steps)

    def epsilon(self, step: int) -> float:
        return self.schedule.value(step)

    def next_transition(self, step: int, weights: np.ndarray, rng: np.random.Generator) -> TransitionSample:
        explore = self.epsilon(step)
        num_actions = self.features.num_actions

        def choose(state: Any) -> int:
            if rng.random() < explore:
                return int(rng.integers(num_actions))
            return greedy_action(self.features, state, weights)

        self.buffer.push(self._actor.act(choose, rng))
        return self.buffer.sample(rng)


class OfflineReplaySource:
    """Fills the buffer once with a uniformly random policy; learning only samples from it."""

    def __init__(self, sim: SimulatorContract, buffer: ReplayBuffer, max_episode_steps: int):
        self.buffer = buffer
        self._actor = _Actor(sim, max_episode_steps)
        self._num_actions = sim.action_count()

    def fill(self, rng: np.random.Generator) -> None:
        while self.buffer.size < self.buffer.capacity:
            self.buffer.push(self._actor.act(lambda _state: int(rng.integers(self._num_actions)), rng))
        logger.info("offline buffer filled with %d transitions", self.buffer.size)

    def next_transition(self, step: int, weights: np.ndarray, rng: np.random.Generator) -> TransitionSample:
        if self.buffer.size == 0:
            self.fill(rng)
        return self.buffer.sample(rng)


def evaluate(
    sim: SimulatorContract,
    features: FeatureMap,
    weights: np.ndarray,
    episodes: int,
    rng: np.random.Generator,
    *,
    max_steps: int,
) -> float:
    """Mean undiscounted return of the greedy policy over fresh episodes."""
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    returns = []
    for _ in range(episodes):
        state = sim.reset(rng)
        total = 0.0
        for _ in range(max_steps):
            reward, state, terminal = sim.step(greedy_action(features, state, weights), rng)
            total += reward
            if terminal:
                break
        returns.append(total)
    return float(np.mean(returns))


def _seed_streams(seed: int) -> tuple[np.random.Generator, np.random.Generator]:
    train, evaluation = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(train), np.random.default_rng(evaluation)


def _replay_source(
    config: ExperimentConfig, sim: SimulatorContract, features: FeatureMap, max_episode_steps: int
) -> Any:
    buffer = ReplayBuffer.for_budget(config.total_steps, config.buffer_fraction)
    if config.data_regime == "offline_replay":
        return OfflineReplaySource(sim, buffer, max_episode_steps)
    schedule = EpsilonSchedule.for_budget(config.total_steps, config.epsilon_start, config.epsilon_end)
    return EpsilonGreedyReplaySource(sim, features, buffer, schedule, max_episode_steps)


def run_single(config: ExperimentConfig, seed: int) -> RunRecord:
    """One seed of one depth: build the environment, learn, return the metric stream."""
    config = resolve_config(config)
    train_rng, eval_rng = _seed_streams(seed)
    learner = config.learner_config()

    if config.is_tabular:
        bundle = tabular_bundle(config)
        features = bundle.features
        planner = TabularSimulator(bundle.mdp)
        probes = [(s, a) for s in range(bundle.mdp.num_states) for a in range(bundle.mdp.num_actions)]
        if config.data_regime == "iid_mu":
            source = IidMuSource(bundle.mdp, bundle.mu)
        else:
            source = _replay_source(config, TabularSimulator(bundle.mdp), features, TABULAR_EPISODE_STEPS)

        def on_record(step: int, weights: np.ndarray) -> dict[str, float]:
            return {"max_abs_q": float(np.max(np.abs(features.q_table(weights))))}

    else:
        acting, spec = make_control(config.env)
        planner, _ = make_control(config.env)
        evaluator, _ = make_control(config.env)
        features = control_features(spec, config.feature_grid)
        probes = [(np.zeros(spec.state_dimension), a) for a in range(spec.action_count)]
        source = _replay_source(config, acting, features, spec.max_episode_steps)

        def on_record(step: int, weights: np.ndarray) -> dict[str, float]:
            value = evaluate(evaluator, features, weights, config.eval_episodes, eval_rng, max_steps=spec.max_episode_steps)
            return {"return_eval": value}

    if isinstance(source, OfflineReplaySource):
        source.fill(train_rng)
    logger.info("seed %d: env=%s n=%d regime=%s", seed, config.env, config.n, config.data_regime)
    result = run_learning(
        planner,
        features,
        source,
        learner,
        train_rng,
        initial_weights=np.full(features.dimension, config.init_weight),
        probes=probes,
        record_interval=config.eval_interval,
        on_record=on_record,
    )
    return RunRecord(seed=seed, n=config.n, status=result.status, total_steps=config.total_steps, rows=result.rows)


def experiment_seeds(config: ExperimentConfig, settings: Optional[Settings] = None) -> list[int]:
    settings = settings or load_settings()
    return [settings.seed_base + index for index in range(config.seeds)]


def run_experiment(config: ExperimentConfig, settings: Optional[Settings] = None) -> list[RunRecord]:
    """Fan seeds out to the task queue and gather the records in seed order."""
    from tasks import run_seed

    config = resolve_config(config)
    seeds = experiment_seeds(config, settings)
    payload = config.model_dump(mode="json")
    pending = [run_seed.delay(payload, seed) for seed in seeds]
    records = [RunRecord.model_validate(result.get()) for result in pending]
    divergent = sum(record.status == "divergent" for record in records)
    logger.info("env=%s n=%d: %d/%d seeds divergent", config.env, config.n, divergent, len(records))
    return records


def _trailing_mean(steps: np.ndarray, values: np.ndarray, window: float) -> np.ndarray:
    """Mean over the rows with step in (s - window, s] for every s."""
    totals = np.concatenate(([0.0], np.cumsum(values)))
    first = np.searchsorted(steps, steps - window, side="right")
    last = np.arange(1, steps.size + 1)
    return (totals[last] - totals[first]) / (last - first)


def _smoothed(records: Sequence[RunRecord], window_fraction: float) -> pd.DataFrame:
    if not records:
        raise AggregationError("aggregation needs at least one run record")
    metric_sets = {frozenset(metric for _, metric, _ in record.rows) for record in records}
    if len(metric_sets) > 1:
        raise AggregationError("run records carry different metric streams")
    frames = []
    for record in records:
        frame = pd.DataFrame(record.rows, columns=["step", "metric", "value"])
        window = max(1.0, window_fraction * record.total_steps)
        for metric, group in frame.groupby("metric", sort=False):
            steps = group["step"].to_numpy(dtype=float)
            values = group["value"].to_numpy(dtype=float)
            frames.append(
                pd.DataFrame(
                    {"seed": record.seed, "step": steps.astype(int), "metric": metric,
                     "value": _trailing_mean(steps, values, window)}
                )
            )
    return pd.concat(frames, ignore_index=True)


def aggregate(records: Sequence[RunRecord], window_fraction: float = 0.05) -> pd.DataFrame:
    """Per-metric mean and population std across seeds of the smoothed terminal value."""
    smoothed = _smoothed(records, window_fraction)
    terminal = smoothed.groupby(["metric", "seed"], sort=True).last().reset_index()
    summary = terminal.groupby("metric", sort=True)["value"].agg(
        mean="mean", std=lambda values: float(np.std(values.to_numpy(), ddof=0)), seeds="count"
    )
    return summary.reset_index()


def curves(records: Sequence[RunRecord], window_fraction: float = 0.05) -> pd.DataFrame:
    """Long-format smoothed curves: step, metric, mean, std over seeds."""
    smoothed = _smoothed(records, window_fraction)
    table = smoothed.groupby(["metric", "step"], sort=True)["value"].agg(
        mean="mean", std=lambda values: float(np.std(values.to_numpy(), ddof=0)), seeds="count"
    )
    return table.reset_index()


def records_frame(records: Iterable[RunRecord], tag_n: bool = False) -> pd.DataFrame:
    rows = [
        (record.n, record.seed, step, metric, value) if tag_n else (record.seed, step, metric, value)
        for record in records
        for step, metric, value in record.rows
    ]
    return pd.DataFrame(rows, columns=SWEEP_COLUMNS if tag_n else RECORD_COLUMNS)


def write_records(records: Iterable[RunRecord], path: str | Path, tag_n: bool = False) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    records_frame(records, tag_n).to_csv(path, index=False, float_format=CSV_FLOAT_FORMAT, lineterminator="\n")
    logger.info("wrote %s", path)
    return path


def read_records(paths: Sequence[str | Path]) -> dict[int | None, list[RunRecord]]:
    """Rebuild run records from CSV files, grouped by depth when the files carry an n column."""
    if not paths:
        raise ReportError("report needs at least one CSV file")
    frames = []
    schema: Optional[list[str]] = None
    for path in paths:
        try:
            frame = pd.read_csv(path)
        except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
            raise ReportError(f"{path}: unreadable CSV: {exc}") from exc
        columns = list(frame.columns)
        if columns not in (RECORD_COLUMNS, SWEEP_COLUMNS):
            raise ReportError(f"{path}: unexpected columns {columns}")
        if schema is not None and columns != schema:
            raise ReportError(f"{path}: columns {columns} do not match {schema}")
        schema = columns
        frames.append(frame)
    frame = pd.concat(frames, ignore_index=True)
    tagged = "n" in frame.columns
    groups: dict[int | None, list[RunRecord]] = {}
    keys = ["n", "seed"] if tagged else ["seed"]
    for key, group in frame.groupby(keys, sort=True):
        depth = int(key[0]) if tagged else None
        seed = int(key[-1]) if isinstance(key, tuple) else int(key)
        rows = [(int(s), str(m), float(v)) for s, m, v in group[["step", "metric", "value"]].itertuples(index=False)]
        divergent = [value for _, metric, value in rows if metric == "divergent"]
        converged = [value for _, metric, value in rows if metric == "converged"]
        if divergent and divergent[-1] > 0.5:
            status = "divergent"
        elif converged and converged[-1] > 0.5:
            status = "converged"
        else:
            status = "completed"
        record = RunRecord(
            seed=seed, n=depth or 0, status=status, total_steps=max(1, int(group["step"].max())), rows=rows
        )
        groups.setdefault(depth, []).append(record)
    return groups


def report(
    paths: Sequence[str | Path], window_fraction: float = 0.05
) -> tuple[pd.DataFrame, pd.DataFrame]:
    """Summary and plot-ready curve tables for every depth group in the CSV files."""
    summaries, curve_tables = [], []
    for depth, records in read_records(paths).items():
        try:
            summary = aggregate(records, window_fraction)
            curve = curves(records, window_fraction)
        except AggregationError as exc:
            raise ReportError(f"group n={depth}: {exc}") from exc
        if depth is not None:
            summary.insert(0, "n", depth)
            curve.insert(0, "n", depth)
        summaries.append(summary)
        curve_tables.append(curve)
    return pd.concat(summaries, ignore_index=True), pd.concat(curve_tables, ignore_index=True)
