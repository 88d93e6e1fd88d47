import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Any, Callable, Literal, Optional, Sequence

import numpy as np
from scipy.stats import qmc

from errors import AssumptionViolation, ConfigurationError
from mdp import StateActionDistribution

logger = logging.getLogger(__name__)

CONDITION_NUMBER_CAP = 1e12
PHI_MAX_SWEEP_LOG2 = 17
_SWEEP_BATCH = 1024


class FeatureMap(ABC):
    """phi: X x A -> R^k."""

    dimension: int
    num_actions: int

    @abstractmethod
    def evaluate(self, state: Any, action: int) -> np.ndarray:
        ...

    @property
    @abstractmethod
    def phi_max(self) -> float:
        ...

    @property
    def phi_max_method(self) -> str:
        return "exact"

    def evaluate_all(self, state: Any) -> np.ndarray:
        return np.stack([self.evaluate(state, action) for action in range(self.num_actions)])

    def action_values(self, state: Any, weights: np.ndarray) -> np.ndarray:
        return self.evaluate_all(state) @ weights

    def check_weights(self, weights: np.ndarray) -> np.ndarray:
        weights = np.asarray(weights, dtype=float)
        if weights.shape != (self.dimension,):
            raise ConfigurationError(
                f"weights have shape {weights.shape}, features expect ({self.dimension},)"
            )
        if not np.all(np.isfinite(weights)):
            raise ConfigurationError("weights must be finite")
        return weights


class TabularFeatureMap(FeatureMap):
    """Features given as an explicit (S, A, k) table."""

    def __init__(self, table: np.ndarray):
        table = np.array(table, dtype=float)
        if table.ndim != 3:
            raise ConfigurationError(f"feature table must have shape (S, A, k), got {table.shape}")
        if not np.all(np.isfinite(table)):
            raise ConfigurationError("feature table must be finite")
        table.setflags(write=False)
        self.table = table
        self.num_states, self.num_actions, self.dimension = table.shape

    @property
    def matrix(self) -> np.ndarray:
        return self.table.reshape(-1, self.dimension)

    @cached_property
    def phi_max(self) -> float:
        return float(np.max(np.linalg.norm(self.table, axis=2)))

    def evaluate(self, state: int, action: int) -> np.ndarray:
        return self.table[state, action]

    def evaluate_all(self, state: int) -> np.ndarray:
        return self.table[state]

    def q_table(self, weights: np.ndarray) -> np.ndarray:
        return self.table @ weights


class GaussianFeatureMap(FeatureMap):
    """Normalized Gaussian bumps on a regular grid, laid out in one block per action."""

    def __init__(
        self,
        centers: Sequence[np.ndarray],
        widths: Sequence[float],
        bounds: Sequence[tuple[float, float]],
        num_actions: int,
        transform: Optional[Callable[[Any], np.ndarray]] = None,
    ):
        self.centers = [np.asarray(c, dtype=float) for c in centers]
        self.widths = np.asarray(widths, dtype=float)
        self.bounds = [(float(low), float(high)) for low, high in bounds]
        self.num_actions = int(num_actions)
        self.transform = transform
        self.grid = [len(c) for c in self.centers]
        self.state_dimension = int(np.prod(self.grid))
        self.dimension = self.state_dimension * self.num_actions

    def _batch_features(self, points: np.ndarray) -> np.ndarray:
        psi = np.ones((points.shape[0], 1))
        for axis, (centers, width) in enumerate(zip(self.centers, self.widths)):
            bumps = np.exp(-0.5 * ((points[:, axis, None] - centers[None, :]) / width) ** 2)
            bumps /= bumps.sum(axis=1, keepdims=True)
            # First axis varies slowest.
            psi = (psi[:, :, None] * bumps[:, None, :]).reshape(points.shape[0], -1)
        return psi

    def state_features(self, state: Any) -> np.ndarray:
        point = np.asarray(self.transform(state) if self.transform else state, dtype=float)
        return self._batch_features(point[None, :])[0]

    def evaluate(self, state: Any, action: int) -> np.ndarray:
        phi = np.zeros(self.dimension)
        start = action * self.state_dimension
        phi[start:start + self.state_dimension] = self.state_features(state)
        return phi

    def evaluate_all(self, state: Any) -> np.ndarray:
        psi = self.state_features(state)
        return np.kron(np.eye(self.num_actions), psi[None, :])

    def action_values(self, state: Any, weights: np.ndarray) -> np.ndarray:
        return weights.reshape(self.num_actions, self.state_dimension) @ self.state_features(state)

    @property
    def phi_max_method(self) -> str:
        return f"sobol sweep of 2^{PHI_MAX_SWEEP_LOG2} points over the feature bounds"

    @cached_property
    def phi_max(self) -> float:
        sampler = qmc.Sobol(d=len(self.bounds), scramble=True, seed=0)
        lows, highs = zip(*self.bounds)
        points = qmc.scale(sampler.random_base2(m=PHI_MAX_SWEEP_LOG2), lows, highs)
        best = 0.0
        for start in range(0, points.shape[0], _SWEEP_BATCH):
            psi = self._batch_features(points[start:start + _SWEEP_BATCH])
            best = max(best, float(np.max(np.linalg.norm(psi, axis=1))))
        return best


@dataclass(frozen=True)
class CovarianceStats:
    sigma: np.ndarray
    sigma_inverse: np.ndarray
    sigma_max: float
    lambda_max: float
    lambda_min: float
    condition_number: float
    active: np.ndarray

    @property
    def dead_coordinates(self) -> np.ndarray:
        return np.flatnonzero(~self.active)


def q_value(features: FeatureMap, weights: np.ndarray, state: Any, action: int) -> float:
    weights = np.asarray(weights, dtype=float)
    if weights.shape != (features.dimension,):
        raise ConfigurationError(
            f"weights have shape {weights.shape}, features expect ({features.dimension},)"
        )
    return float(features.evaluate(state, action) @ weights)


def _require_tabular(features: FeatureMap, mu: StateActionDistribution) -> TabularFeatureMap:
    if not isinstance(features, TabularFeatureMap):
        raise ConfigurationError("exact expectations need tabular features")
    if mu.weights.shape != (features.num_states, features.num_actions):
        raise ConfigurationError(
            f"distribution shape {mu.weights.shape} does not match features "
            f"({features.num_states}, {features.num_actions})"
        )
    return features


def covariance(features: FeatureMap, mu: StateActionDistribution) -> CovarianceStats:
    """Exact E_mu[phi phi^T] by enumeration, inverted on the coordinates the features use.

    Coordinates that are zero for every (x, a) never receive an update and are
    excluded from the inversion; every other degeneracy is an assumption violation.
    """
    features = _require_tabular(features, mu)
    if not mu.full_support:
        raise AssumptionViolation("mu must put positive weight on every state-action pair (mu_min = 0)")
    phi = features.matrix
    weights = mu.weights.ravel()
    sigma = np.einsum("i,ij,ik->jk", weights, phi, phi)
    sigma = 0.5 * (sigma + sigma.T)

    active = np.any(phi != 0.0, axis=0)
    if not active.any():
        raise AssumptionViolation("feature covariance is singular: every feature is identically zero")
    if not active.all():
        logger.warning("features never use coordinates %s; they are left out of the inversion",
                       np.flatnonzero(~active).tolist())
    block = sigma[np.ix_(active, active)]
    eigenvalues = np.linalg.eigvalsh(block)
    lambda_min, lambda_max = float(eigenvalues[0]), float(eigenvalues[-1])
    if lambda_min <= 0.0 or lambda_max / lambda_min > CONDITION_NUMBER_CAP:
        raise AssumptionViolation(
            f"feature covariance is singular or ill-conditioned (lambda_min={lambda_min:.3e}, "
            f"lambda_max={lambda_max:.3e}, cap {CONDITION_NUMBER_CAP:.0e})"
        )
    inverse = np.zeros_like(sigma)
    inverse[np.ix_(active, active)] = np.linalg.inv(block)
    return CovarianceStats(
        sigma=sigma,
        sigma_inverse=inverse,
        sigma_max=1.0 / lambda_min,
        lambda_max=lambda_max,
        lambda_min=lambda_min,
        condition_number=lambda_max / lambda_min,
        active=active,
    )


def projection_matrix(
    features: FeatureMap, mu: StateActionDistribution, stats: Optional[CovarianceStats] = None
) -> np.ndarray:
    """Matrix mapping a flattened q-table to the projected weights."""
    features = _require_tabular(features, mu)
    stats = stats or covariance(features, mu)
    return stats.sigma_inverse @ (features.matrix.T * mu.weights.ravel())


def project(
    features: FeatureMap,
    mu: StateActionDistribution,
    q: np.ndarray,
    stats: Optional[CovarianceStats] = None,
) -> np.ndarray:
    return projection_matrix(features, mu, stats) @ np.asarray(q, dtype=float).ravel()


def mu_norm(mu: StateActionDistribution, q: np.ndarray) -> float:
    q = np.asarray(q, dtype=float)
    return float(np.sqrt(np.sum(mu.weights * q * q)))


def build_gaussian_features(
    grid: Sequence[int],
    bounds: Sequence[tuple[float, float]],
    num_actions: int,
    transform: Optional[Callable[[Any], np.ndarray]] = None,
) -> GaussianFeatureMap:
    grid = list(grid)
    if len(grid) == 1 and len(bounds) > 1:
        grid = grid * len(bounds)
    if len(grid) != len(bounds):
        raise ConfigurationError(f"feature grid has {len(grid)} entries for {len(bounds)} state dimensions")
    if any(cells <= 0 for cells in grid):
        raise ConfigurationError("feature grid needs positive cell counts")
    centers, widths = [], []
    for cells, (low, high) in zip(grid, bounds):
        if not (np.isfinite(low) and np.isfinite(high)) or high <= low:
            raise ConfigurationError(f"feature bounds ({low}, {high}) have zero volume")
        width = (high - low) / cells
        centers.append(low + width * (np.arange(cells) + 0.5))
        widths.append(width)
    return GaussianFeatureMap(centers, widths, bounds, num_actions, transform)


def counterexample_features(which: Literal["w2w", "star"]) -> TabularFeatureMap:
    if which == "w2w":
        return TabularFeatureMap(np.array([[[1.0]], [[2.0]]]))
    if which == "star":
        table = np.zeros((6, 2, 13))
        for state in range(6):
            table[state, 1, state + 1] = 1.0
        for state in range(5):
            table[state, 0, 0] = 1.0
            table[state, 0, state + 1] = 2.0
        table[5, 0, 0] = 2.0
        return TabularFeatureMap(table)
    raise ConfigurationError(f"unknown counter-example features: {which}")


def onehot_features(num_states: int, num_actions: int) -> TabularFeatureMap:
    pairs = num_states * num_actions
    return TabularFeatureMap(np.eye(pairs).reshape(num_states, num_actions, pairs))


def random_features(rng: np.random.Generator, num_states: int, num_actions: int, dimension: int) -> TabularFeatureMap:
    return TabularFeatureMap(rng.standard_normal((num_states, num_actions, dimension)))


def load_feature_table(path: str | Path) -> TabularFeatureMap:
    """Header 'states actions k', then one 's a f_1 .. f_k' line per pair."""
    path = Path(path)
    rows = []
    for raw in path.read_text(encoding="utf-8").splitlines():
        text = raw.split("#", 1)[0].strip()
        if text:
            rows.append(text.split())
    try:
        num_states, num_actions, dimension = (int(token) for token in rows[0])
        table = np.full((num_states, num_actions, dimension), np.nan)
        for tokens in rows[1:]:
            table[int(tokens[0]), int(tokens[1])] = [float(token) for token in tokens[2:]]
    except (ValueError, IndexError) as exc:
        raise ConfigurationError(f"{path}: malformed feature table: {exc}") from exc
    if np.isnan(table).any():
        raise ConfigurationError(f"{path}: every (state, action) pair needs a feature line")
    return TabularFeatureMap(table)
