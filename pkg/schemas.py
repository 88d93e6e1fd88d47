import math
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


EnvName = Literal["w2w", "star", "cartpole", "mountaincar", "acrobot", "tabular", "random"]
DataRegime = Literal["iid_mu", "epsilon_greedy_replay", "offline_replay"]
LrSchedule = Literal["constant", "robbins_monro"]
RunStatus = Literal["converged", "divergent", "completed"]

TABULAR_ENVS = frozenset({"w2w", "star", "tabular", "random"})
CONTROL_ENVS = frozenset({"cartpole", "mountaincar", "acrobot"})


def _split_ints(value: object) -> object:
    if isinstance(value, str):
        parts = [part.strip() for part in value.replace(";", ",").split(",")]
        return [int(part) for part in parts if part]
    if isinstance(value, int):
        return [value]
    return value


class LearnerConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    depth: int = Field(ge=1)
    gamma: float = Field(ge=0.0, lt=1.0)
    schedule: LrSchedule = "constant"
    alpha: float = Field(gt=0.0)
    exponent: float = 0.8
    total_steps: int = Field(gt=0)
    divergence_ceiling: float = Field(default=1e3, gt=0.0)
    convergence_tolerance: float = Field(default=1e-6, ge=0.0)

    @model_validator(mode="after")
    def _check_schedule(self) -> "LearnerConfig":
        # Sum of steps diverges and sum of squares converges only for p in (0.5, 1].
        if self.schedule == "robbins_monro" and not (0.5 < self.exponent <= 1.0):
            raise ValueError("robbins_monro exponent must lie in (0.5, 1]")
        return self

    def learning_rate(self, t: int) -> float:
        if self.schedule == "constant":
            return self.alpha
        return self.alpha / float(t + 1) ** self.exponent


class ExperimentConfig(BaseModel):
    """Declarative experiment description; unset fields take environment defaults."""

    model_config = ConfigDict(extra="forbid")

    env: EnvName
    n: int = Field(default=1, ge=1)
    gamma: Optional[float] = Field(default=None, ge=0.0, lt=1.0)
    lr_schedule: LrSchedule = "constant"
    lr: Optional[float] = Field(default=None, gt=0.0)
    lr_exponent: float = 0.8
    total_steps: Optional[int] = Field(default=None, gt=0)
    seeds: int = Field(default=5, gt=0)
    eval_episodes: int = Field(default=30, gt=0)
    eval_interval: Optional[int] = Field(default=None, gt=0)
    buffer_fraction: float = Field(default=0.2, gt=0.0, le=1.0)
    epsilon_start: float = Field(default=1.0, ge=0.0, le=1.0)
    epsilon_end: float = Field(default=0.05, ge=0.0, le=1.0)
    data_regime: Optional[DataRegime] = None
    feature_grid: Optional[list[int]] = None
    divergence_ceiling: Optional[float] = Field(default=None, gt=0.0)
    out: Optional[str] = None

    init_weight: Optional[float] = None
    n_list: Optional[list[int]] = None
    num_pairs: int = Field(default=200, gt=0)
    num_probes: int = Field(default=100, gt=0)
    convergence_tolerance: float = Field(default=1e-6, ge=0.0)
    window_fraction: float = Field(default=0.05, gt=0.0, le=1.0)

    mdp_file: Optional[str] = None
    features_file: Optional[str] = None
    mdp_seed: int = 0
    num_states: int = Field(default=5, gt=0)
    num_actions: int = Field(default=2, gt=0)
    feature_dim: Optional[int] = Field(default=None, gt=0)

    @field_validator("feature_grid", "n_list", mode="before")
    @classmethod
    def _parse_int_list(cls, value: object) -> object:
        return _split_ints(value)

    @field_validator("feature_grid")
    @classmethod
    def _check_grid(cls, value: Optional[list[int]]) -> Optional[list[int]]:
        if value is not None and (not value or any(cells <= 0 for cells in value)):
            raise ValueError("feature_grid needs positive cell counts")
        return value

    @field_validator("n_list")
    @classmethod
    def _check_n_list(cls, value: Optional[list[int]]) -> Optional[list[int]]:
        if value is not None:
            if not value:
                raise ValueError("n_list must name at least one depth")
            if any(depth < 1 for depth in value):
                raise ValueError("every depth in n_list must be >= 1")
        return value

    @model_validator(mode="after")
    def _check_consistency(self) -> "ExperimentConfig":
        if self.data_regime == "iid_mu" and self.env not in TABULAR_ENVS:
            raise ValueError(f"data_regime iid_mu needs a tabular environment with explicit mu, got {self.env}")
        if self.env == "tabular" and not self.mdp_file:
            raise ValueError("env=tabular needs mdp_file")
        if self.features_file and self.env != "tabular":
            raise ValueError("features_file is only read for env=tabular")
        if self.lr_schedule == "robbins_monro" and not (0.5 < self.lr_exponent <= 1.0):
            raise ValueError("lr_exponent must lie in (0.5, 1] for robbins_monro")
        if self.epsilon_end > self.epsilon_start:
            raise ValueError("epsilon_end must not exceed epsilon_start")
        return self

    @property
    def is_tabular(self) -> bool:
        return self.env in TABULAR_ENVS

    def depths(self) -> list[int]:
        return list(self.n_list) if self.n_list else [self.n]

    def learner_config(self, depth: Optional[int] = None) -> LearnerConfig:
        if self.gamma is None or self.lr is None or self.total_steps is None or self.divergence_ceiling is None:
            raise ValueError("experiment config must be resolved before building a learner config")
        return LearnerConfig(
            depth=depth or self.n,
            gamma=self.gamma,
            schedule=self.lr_schedule,
            alpha=self.lr,
            exponent=self.lr_exponent,
            total_steps=self.total_steps,
            divergence_ceiling=self.divergence_ceiling,
            convergence_tolerance=self.convergence_tolerance,
        )


class ValidationReport(BaseModel):
    valid: bool
    violations: list[str] = []


class ContractionReport(BaseModel):
    n: int
    gamma: float
    sigma_max: float
    phi_max: float
    mu_min: float
    modulus_constant: float
    lambda_n: float
    threshold_n: int
    sharp_lambda_n: float
    empirical_lipschitz: Optional[float] = None
    pair_count: int = 0

    @property
    def contracts(self) -> bool:
        return self.lambda_n < 1.0


class LyapunovReport(BaseModel):
    n: int
    num_probes: int
    max_ldot: float
    ldot_at_equilibrium: float
    below_threshold: bool
    passed: bool


class StabilityReport(BaseModel):
    lambda_min: float
    lambda_max: float
    stable: bool


class DriftLipschitzReport(BaseModel):
    n: int
    pair_count: int
    estimate: float
    analytic: float

    @property
    def within_bound(self) -> bool:
        return self.estimate <= self.analytic + 1e-9


class QLearningBoundReport(BaseModel):
    constant: float
    factor: Optional[float] = None


class RunRecord(BaseModel):
    seed: int
    n: int
    status: RunStatus
    total_steps: int
    rows: list[tuple[int, str, float]]

    @model_validator(mode="after")
    def _check_monotone(self) -> "RunRecord":
        steps = [row[0] for row in self.rows]
        if any(later < earlier for earlier, later in zip(steps, steps[1:])):
            raise ValueError("run record steps must be non-decreasing")
        return self

    def metric(self, name: str) -> list[tuple[int, float]]:
        return [(step, value) for step, metric, value in self.rows if metric == name]

    def final(self, name: str) -> float:
        values = self.metric(name)
        if not values:
            return math.nan
        return values[-1][1]
