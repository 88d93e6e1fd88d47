import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from classic_control import (
    ACROBOT_SPEC,
    CARTPOLE_SPEC,
    MOUNTAINCAR_SPEC,
    Acrobot,
    CartPole,
    ControlEnvSpec,
    ControlSimulator,
    MountainCar,
)
from errors import ConfigurationError
from features import (
    GaussianFeatureMap,
    TabularFeatureMap,
    build_gaussian_features,
    counterexample_features,
    load_feature_table,
    onehot_features,
    random_features,
)
from mdp import StateActionDistribution, TabularMdp, load_mdp, require_valid, uniform_distribution
from schemas import DataRegime, ExperimentConfig

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CounterexampleBundle:
    """A tabular problem ready for exact analysis: MDP, features, data distribution.

    Also produced for loaded and randomly generated tabular problems.
    """

    name: str
    mdp: TabularMdp
    features: TabularFeatureMap
    mu: StateActionDistribution
    recommended_gamma: float
    recommended_alpha: float


def make_w2w() -> CounterexampleBundle:
    transition = np.zeros((2, 1, 2))
    transition[:, 0, 1] = 1.0
    mdp = require_valid(TabularMdp(transition=transition, expected_reward=np.zeros((2, 1)), discount=0.9))
    return CounterexampleBundle(
        name="w2w",
        mdp=mdp,
        features=counterexample_features("w2w"),
        mu=uniform_distribution(2, 1),
        recommended_gamma=0.9,
        recommended_alpha=1e-2,
    )


def make_star() -> CounterexampleBundle:
    transition = np.zeros((6, 2, 6))
    transition[:, 0, 5] = 1.0
    transition[:, 1, :5] = 0.2
    mdp = require_valid(TabularMdp(transition=transition, expected_reward=np.zeros((6, 2)), discount=0.995))
    # States swept uniformly; first action one sixth of the time.
    weights = np.empty((6, 2))
    weights[:, 0] = 1.0 / 36.0
    weights[:, 1] = 5.0 / 36.0
    return CounterexampleBundle(
        name="star",
        mdp=mdp,
        features=counterexample_features("star"),
        mu=StateActionDistribution(weights),
        recommended_gamma=0.995,
        recommended_alpha=1e-2,
    )


def random_mdp(
    rng: np.random.Generator,
    num_states: int,
    num_actions: int,
    gamma: float,
    reward_scale: float = 1.0,
    deterministic: bool = False,
) -> TabularMdp:
    """Dirichlet transition rows (or one random successor each) and uniform rewards in [-scale, scale]."""
    if deterministic:
        transition = np.zeros((num_states, num_actions, num_states))
        successors = rng.integers(num_states, size=(num_states, num_actions))
        for state in range(num_states):
            transition[state, np.arange(num_actions), successors[state]] = 1.0
    else:
        transition = rng.dirichlet(np.ones(num_states), size=(num_states, num_actions))
        transition /= transition.sum(axis=2, keepdims=True)
    reward = rng.uniform(-reward_scale, reward_scale, size=(num_states, num_actions))
    return require_valid(TabularMdp(transition=transition, expected_reward=reward, discount=gamma))


def make_cartpole() -> tuple[ControlSimulator, ControlEnvSpec]:
    return CartPole(), CARTPOLE_SPEC


def make_mountaincar() -> tuple[ControlSimulator, ControlEnvSpec]:
    return MountainCar(), MOUNTAINCAR_SPEC


def make_acrobot() -> tuple[ControlSimulator, ControlEnvSpec]:
    return Acrobot(), ACROBOT_SPEC


CONTROL_FACTORIES = {
    "cartpole": make_cartpole,
    "mountaincar": make_mountaincar,
    "acrobot": make_acrobot,
}


def make_control(name: str) -> tuple[ControlSimulator, ControlEnvSpec]:
    try:
        return CONTROL_FACTORIES[name]()
    except KeyError:
        raise ConfigurationError(f"{name} is not a classic-control environment") from None


def control_features(spec: ControlEnvSpec, grid: list[int]) -> GaussianFeatureMap:
    return build_gaussian_features(grid, spec.feature_bounds, spec.action_count, transform=spec.observation)


@dataclass(frozen=True)
class EnvironmentDefaults:
    gamma: Optional[float]
    lr: float
    total_steps: int
    data_regime: DataRegime
    feature_grid: Optional[list[int]] = None
    divergence_ceiling: float = 1e3
    init_weight: float = 1.0


ENVIRONMENT_DEFAULTS: dict[str, EnvironmentDefaults] = {
    "w2w": EnvironmentDefaults(gamma=0.9, lr=1e-2, total_steps=20_000, data_regime="iid_mu"),
    "star": EnvironmentDefaults(gamma=0.995, lr=1e-2, total_steps=100_000, data_regime="iid_mu"),
    "tabular": EnvironmentDefaults(gamma=None, lr=1e-2, total_steps=100_000, data_regime="iid_mu"),
    "random": EnvironmentDefaults(gamma=0.9, lr=1e-2, total_steps=100_000, data_regime="iid_mu"),
    # Cartpole starts optimistic: 1/(1 - gamma) bounds the return at +1 per step.
    "cartpole": EnvironmentDefaults(
        gamma=0.99, lr=3e-2, total_steps=100_000, data_regime="epsilon_greedy_replay", feature_grid=[2],
        divergence_ceiling=1e4, init_weight=100.0,
    ),
    "mountaincar": EnvironmentDefaults(
        gamma=0.99, lr=3e-3, total_steps=200_000, data_regime="epsilon_greedy_replay", feature_grid=[16],
        divergence_ceiling=1e5,
    ),
    "acrobot": EnvironmentDefaults(
        gamma=0.99, lr=3e-3, total_steps=200_000, data_regime="epsilon_greedy_replay", feature_grid=[4],
        divergence_ceiling=1e5,
    ),
}


def resolve_config(config: ExperimentConfig) -> ExperimentConfig:
    """Fill every unset key from the environment's defaults."""
    defaults = ENVIRONMENT_DEFAULTS[config.env]
    gamma = config.gamma if config.gamma is not None else defaults.gamma
    if config.env == "tabular":
        file_gamma = load_mdp(config.mdp_file).discount
        if config.gamma is not None and config.gamma != file_gamma:
            raise ConfigurationError(f"gamma={config.gamma} conflicts with {config.mdp_file} (gamma={file_gamma})")
        gamma = file_gamma
    total_steps = config.total_steps or defaults.total_steps
    resolved = config.model_copy(
        update={
            "gamma": gamma,
            "lr": config.lr if config.lr is not None else defaults.lr,
            "total_steps": total_steps,
            "data_regime": config.data_regime or defaults.data_regime,
            "feature_grid": config.feature_grid or defaults.feature_grid,
            "eval_interval": config.eval_interval or max(1, total_steps // 100),
            "divergence_ceiling": config.divergence_ceiling or defaults.divergence_ceiling,
            "init_weight": config.init_weight if config.init_weight is not None else defaults.init_weight,
        }
    )
    if resolved.data_regime == "iid_mu" and not resolved.is_tabular:
        raise ConfigurationError(f"data_regime iid_mu needs a tabular environment, got {resolved.env}")
    return resolved


def tabular_bundle(config: ExperimentConfig) -> CounterexampleBundle:
    if config.env == "w2w":
        bundle = make_w2w()
    elif config.env == "star":
        bundle = make_star()
    elif config.env == "tabular":
        mdp = load_mdp(config.mdp_file)
        features = (
            load_feature_table(config.features_file)
            if config.features_file
            else onehot_features(mdp.num_states, mdp.num_actions)
        )
        if (features.num_states, features.num_actions) != (mdp.num_states, mdp.num_actions):
            raise ConfigurationError(f"{config.features_file} does not match the MDP's state-action shape")
        bundle = CounterexampleBundle(
            name="tabular",
            mdp=mdp,
            features=features,
            mu=uniform_distribution(mdp.num_states, mdp.num_actions),
            recommended_gamma=mdp.discount,
            recommended_alpha=ENVIRONMENT_DEFAULTS["tabular"].lr,
        )
    elif config.env == "random":
        rng = np.random.default_rng(config.mdp_seed)
        gamma = config.gamma if config.gamma is not None else ENVIRONMENT_DEFAULTS["random"].gamma
        mdp = random_mdp(rng, config.num_states, config.num_actions, gamma)
        features = (
            random_features(rng, config.num_states, config.num_actions, config.feature_dim)
            if config.feature_dim
            else onehot_features(config.num_states, config.num_actions)
        )
        bundle = CounterexampleBundle(
            name="random",
            mdp=mdp,
            features=features,
            mu=uniform_distribution(config.num_states, config.num_actions),
            recommended_gamma=gamma,
            recommended_alpha=ENVIRONMENT_DEFAULTS["random"].lr,
        )
    else:
        raise ConfigurationError(f"{config.env} has no tabular model")
    if config.gamma is not None and config.gamma != bundle.mdp.discount:
        logger.info("overriding %s discount %s with %s", bundle.name, bundle.mdp.discount, config.gamma)
        mdp = bundle.mdp
        bundle = CounterexampleBundle(
            name=bundle.name,
            mdp=TabularMdp(
                transition=mdp.transition,
                expected_reward=mdp.expected_reward,
                discount=config.gamma,
                terminal=mdp.terminal,
                reward_noise=mdp.reward_noise,
            ),
            features=bundle.features,
            mu=bundle.mu,
            recommended_gamma=bundle.recommended_gamma,
            recommended_alpha=bundle.recommended_alpha,
        )
    return bundle
