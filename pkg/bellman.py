"""Exact projected multi-step Bellman analysis on tabular domains.

Everything here enumerates the MDP and the feature table; nothing samples
transitions. Random draws are only used to pick probe points for the
empirical checks, and always come from a caller-supplied generator.
"""
import logging
import math
from dataclasses import dataclass
from typing import Literal, Optional

import numpy as np

from errors import AssumptionViolation, IterationLimitError, PreconditionError
from features import (
    CovarianceStats,
    TabularFeatureMap,
    covariance,
    mu_norm,
    project,
    projection_matrix,
)
from mdp import StateActionDistribution, TabularMdp, bellman_backup, value_iteration
from multi_q import expected_target_table
from schemas import (
    ContractionReport,
    DriftLipschitzReport,
    LyapunovReport,
    QLearningBoundReport,
    StabilityReport,
)

logger = logging.getLogger(__name__)

Target = Literal["exact", "sampled"]

PROBE_RANGE = 10.0


@dataclass(frozen=True)
class FixedPointResult:
    weights: np.ndarray
    iterations: int
    residual: float
    converged: bool


def apply_bellman(mdp: TabularMdp, q: np.ndarray) -> np.ndarray:
    return bellman_backup(mdp, np.asarray(q, dtype=float))


def apply_multi_bellman(mdp: TabularMdp, q: np.ndarray, n: int) -> np.ndarray:
    if n < 1:
        raise ValueError("multi-step Bellman depth must be >= 1")
    q = np.asarray(q, dtype=float)
    for _ in range(n):
        q = bellman_backup(mdp, q)
    return q


def threshold_depth(constant: float, gamma: float) -> int:
    """Smallest depth with constant * gamma**n < 1, starting from the ceiling formula."""
    if constant * gamma < 1.0:
        return 1
    depth = max(1, math.ceil(math.log(constant) / -math.log(gamma)))
    while constant * gamma**depth >= 1.0:
        depth += 1
    return depth


def contraction_constants(
    features: TabularFeatureMap,
    mu: StateActionDistribution,
    gamma: float,
    n: int,
    stats: Optional[CovarianceStats] = None,
) -> ContractionReport:
    if not mu.full_support:
        raise AssumptionViolation("mu_min = 0: the data distribution misses some state-action pair")
    stats = stats or covariance(features, mu)
    phi_max, mu_min = features.phi_max, mu.mu_min
    constant = stats.sigma_max * phi_max**2 / mu_min
    return ContractionReport(
        n=n,
        gamma=gamma,
        sigma_max=stats.sigma_max,
        phi_max=phi_max,
        mu_min=mu_min,
        modulus_constant=constant,
        lambda_n=constant * gamma**n,
        threshold_n=threshold_depth(constant, gamma),
        # ||q||_inf <= ||q||_mu / sqrt(mu_min) is the sharp relation
        sharp_lambda_n=stats.sigma_max * phi_max**2 / math.sqrt(mu_min) * gamma**n,
    )


def q_learning_bound(features: TabularFeatureMap, mu: StateActionDistribution, gamma: float) -> QLearningBoundReport:
    """One-step projected bound: factor 1 / (1 - sigma_max phi_max^2 gamma) when it exists."""
    stats = covariance(features, mu)
    constant = stats.sigma_max * features.phi_max**2 * gamma
    return QLearningBoundReport(constant=constant, factor=1.0 / (1.0 - constant) if constant < 1.0 else None)


def _random_pair(rng: np.random.Generator, shape: tuple[int, ...]) -> tuple[np.ndarray, np.ndarray]:
    return rng.uniform(-PROBE_RANGE, PROBE_RANGE, shape), rng.uniform(-PROBE_RANGE, PROBE_RANGE, shape)


def empirical_lipschitz(
    mdp: TabularMdp,
    features: TabularFeatureMap,
    mu: StateActionDistribution,
    n: int,
    num_pairs: int,
    rng: np.random.Generator,
) -> float:
    """Largest observed ||PiH^n q - PiH^n p||_mu / ||q - p||_mu over random q-table pairs."""
    if num_pairs < 1:
        raise ValueError("num_pairs must be >= 1")
    projector = projection_matrix(features, mu)
    shape = (mdp.num_states, mdp.num_actions)

    def projected(q: np.ndarray) -> np.ndarray:
        return (features.matrix @ (projector @ apply_multi_bellman(mdp, q, n).ravel())).reshape(shape)

    best = 0.0
    drawn = 0
    while drawn < num_pairs:
        q, p = _random_pair(rng, shape)
        denominator = mu_norm(mu, q - p)
        if denominator == 0.0:
            continue
        drawn += 1
        best = max(best, mu_norm(mu, projected(q) - projected(p)) / denominator)
    return best


def _target_table(
    mdp: TabularMdp, features: TabularFeatureMap, weights: np.ndarray, n: int, target: Target
) -> np.ndarray:
    if target == "exact":
        return apply_multi_bellman(mdp, features.q_table(weights), n)
    return expected_target_table(mdp, features, weights, n)


def solve_fixed_point(
    mdp: TabularMdp,
    features: TabularFeatureMap,
    mu: StateActionDistribution,
    n: int,
    tolerance: float = 1e-10,
    max_iters: int = 10_000,
    initial: Optional[np.ndarray] = None,
    target: Target = "exact",
) -> FixedPointResult:
    """Picard iteration of w <- Sigma^-1 E_mu[phi T(q_w)] with T = H^n or the expected sampled target."""
    projector = projection_matrix(features, mu)
    weights = np.zeros(features.dimension) if initial is None else np.array(initial, dtype=float)
    residual = math.inf
    for iteration in range(1, max_iters + 1):
        with np.errstate(over="ignore", invalid="ignore"):
            updated = projector @ _target_table(mdp, features, weights, n, target).ravel()
        if not np.all(np.isfinite(updated)):
            logger.warning("fixed-point iteration at depth %d overflowed after %d iterations", n, iteration)
            return FixedPointResult(weights=weights, iterations=iteration, residual=math.inf, converged=False)
        residual = float(np.linalg.norm(updated - weights))
        weights = updated
        if residual <= tolerance:
            return FixedPointResult(weights=weights, iterations=iteration, residual=residual, converged=True)
    logger.info("fixed-point iteration at depth %d stopped at residual %.3e", n, residual)
    return FixedPointResult(weights=weights, iterations=max_iters, residual=residual, converged=False)


def _solved(result: FixedPointResult, n: int) -> np.ndarray:
    if not result.converged:
        raise IterationLimitError(
            f"fixed point at depth {n} not reached", iterations=result.iterations, residual=result.residual
        )
    return result.weights


def error_bound(
    mdp: TabularMdp,
    features: TabularFeatureMap,
    mu: StateActionDistribution,
    n: int,
    q_star: Optional[np.ndarray] = None,
) -> tuple[float, float]:
    """(||q* - q_w~n||_mu, ||q* - q_w*||_mu / (1 - lambda(n))) for n at or above the threshold."""
    stats = covariance(features, mu)
    report = contraction_constants(features, mu, mdp.discount, n, stats)
    if n < report.threshold_n:
        raise PreconditionError(f"depth {n} is below the contraction threshold {report.threshold_n}")
    q_star = value_iteration(mdp, tolerance=1e-12) if q_star is None else q_star
    fixed = _solved(solve_fixed_point(mdp, features, mu, n), n)
    projected = project(features, mu, q_star, stats)
    lhs = mu_norm(mu, q_star - features.q_table(fixed))
    rhs = mu_norm(mu, q_star - features.q_table(projected)) / (1.0 - report.lambda_n)
    return lhs, rhs


def weight_gap(
    mdp: TabularMdp,
    features: TabularFeatureMap,
    mu: StateActionDistribution,
    n: int,
    q_star: Optional[np.ndarray] = None,
) -> float:
    """||w* - w~n||_2, which vanishes as n grows."""
    q_star = value_iteration(mdp, tolerance=1e-12) if q_star is None else q_star
    fixed = _solved(solve_fixed_point(mdp, features, mu, n), n)
    return float(np.linalg.norm(project(features, mu, q_star) - fixed))


def ode_drift(
    mdp: TabularMdp,
    features: TabularFeatureMap,
    mu: StateActionDistribution,
    weights: np.ndarray,
    n: int,
    target: Target = "sampled",
) -> np.ndarray:
    """g(w) = E_mu[phi (tau^n(w) - q_w)]."""
    weights = np.asarray(weights, dtype=float)
    error = _target_table(mdp, features, weights, n, target) - features.q_table(weights)
    return features.matrix.T @ (mu.weights * error).ravel()


def lyapunov_check(
    mdp: TabularMdp,
    features: TabularFeatureMap,
    mu: StateActionDistribution,
    n: int,
    num_probes: int,
    rng: np.random.Generator,
    fixed_point: Optional[np.ndarray] = None,
) -> LyapunovReport:
    """Largest l'(w) = -(w~ - w)^T g(w) over random probes; negative everywhere means stable."""
    report = contraction_constants(features, mu, mdp.discount, n)
    below = n < report.threshold_n
    if below:
        logger.warning("Lyapunov check at depth %d is below the contraction threshold %d", n, report.threshold_n)
    if fixed_point is None:
        solved = solve_fixed_point(mdp, features, mu, n, target="sampled")
        if not solved.converged:
            raise PreconditionError(f"no equilibrium available at depth {n}")
        fixed_point = solved.weights

    def ldot(weights: np.ndarray) -> float:
        return float(-(fixed_point - weights) @ ode_drift(mdp, features, mu, weights, n))

    largest = -math.inf
    drawn = 0
    while drawn < num_probes:
        probe = rng.uniform(-PROBE_RANGE, PROBE_RANGE, features.dimension)
        if np.linalg.norm(probe - fixed_point) < 1e-12:
            continue
        drawn += 1
        largest = max(largest, ldot(probe))
    return LyapunovReport(
        n=n,
        num_probes=num_probes,
        max_ldot=largest,
        ldot_at_equilibrium=ldot(fixed_point),
        below_threshold=below,
        passed=largest < 0.0,
    )


def stability_at_infinity(features: TabularFeatureMap, mu: StateActionDistribution) -> StabilityReport:
    """The scaled limit dynamics w' = -Sigma w are stable exactly when Sigma is positive definite."""
    stats = covariance(features, mu)
    return StabilityReport(lambda_min=stats.lambda_min, lambda_max=stats.lambda_max, stable=stats.lambda_min > 0.0)


def drift_lipschitz_estimate(
    mdp: TabularMdp,
    features: TabularFeatureMap,
    mu: StateActionDistribution,
    n: int,
    num_pairs: int,
    rng: np.random.Generator,
) -> DriftLipschitzReport:
    if num_pairs < 1:
        raise ValueError("num_pairs must be >= 1")
    stats = covariance(features, mu)
    phi_max = features.phi_max
    analytic = (stats.sigma_max * phi_max**3 * mdp.discount**n + phi_max**2) / mu.mu_min
    best = 0.0
    drawn = 0
    while drawn < num_pairs:
        omega, theta = _random_pair(rng, (features.dimension,))
        distance = float(np.linalg.norm(omega - theta))
        if distance == 0.0:
            continue
        drawn += 1
        difference = ode_drift(mdp, features, mu, omega, n) - ode_drift(mdp, features, mu, theta, n)
        best = max(best, float(np.linalg.norm(difference)) / distance)
    return DriftLipschitzReport(n=n, pair_count=num_pairs, estimate=best, analytic=analytic)
