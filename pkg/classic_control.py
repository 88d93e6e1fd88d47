"""Cartpole, Mountaincar and Acrobot dynamics behind the simulator contract.

Constants and integrators follow the widely used canonical formulations:
Euler steps for Cartpole and Mountaincar, one fourth-order Runge-Kutta step
per interaction for Acrobot. Rewards are +1 (Cartpole) or -1 (Mountaincar,
Acrobot) per interaction and 0 on the transition that reaches a terminal
state. Episode truncation at max_episode_steps is left to the caller, since
a truncated episode is not a terminal state.
"""
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from errors import EnvironmentStateError
from mdp import SimulatorContract


@dataclass(frozen=True)
class ControlEnvSpec:
    name: str
    state_dimension: int
    action_count: int
    max_episode_steps: int
    step_reward: float
    terminal_reward: float
    feature_bounds: tuple[tuple[float, float], ...]
    observation: Optional[Callable[[np.ndarray], np.ndarray]] = None


class ControlSimulator(SimulatorContract):
    spec: ControlEnvSpec
    state_bounds: np.ndarray

    def __init__(self) -> None:
        self._state = np.zeros(self.spec.state_dimension)

    def action_count(self) -> int:
        return self.spec.action_count

    def get_state(self) -> np.ndarray:
        return self._state.copy()

    def set_state(self, state: np.ndarray) -> None:
        state = np.array(state, dtype=float)
        if state.shape != (self.spec.state_dimension,):
            raise EnvironmentStateError(
                f"{self.spec.name} state must have shape ({self.spec.state_dimension},), got {state.shape}"
            )
        if not np.all(np.isfinite(state)):
            raise EnvironmentStateError(f"{self.spec.name} state must be finite")
        low, high = self.state_bounds[:, 0], self.state_bounds[:, 1]
        if np.any(state < low) or np.any(state > high):
            raise EnvironmentStateError(f"{self.spec.name} state {state.tolist()} is outside {self.state_bounds.tolist()}")
        self._state = state

    def state_key(self, state: np.ndarray) -> bytes:
        return np.asarray(state, dtype=float).tobytes()

    def _check_action(self, action: int) -> None:
        if not 0 <= action < self.spec.action_count:
            raise EnvironmentStateError(f"{self.spec.name} has no action {action}")

    def _reward(self, terminal: bool) -> float:
        return self.spec.terminal_reward if terminal else self.spec.step_reward


CARTPOLE_SPEC = ControlEnvSpec(
    name="cartpole",
    state_dimension=4,
    action_count=2,
    max_episode_steps=500,
    step_reward=1.0,
    terminal_reward=0.0,
    feature_bounds=((-2.4, 2.4), (-3.0, 3.0), (-0.2095, 0.2095), (-3.5, 3.5)),
)


class CartPole(ControlSimulator):
    spec = CARTPOLE_SPEC
    gravity = 9.8
    mass_cart = 1.0
    mass_pole = 0.1
    total_mass = mass_cart + mass_pole
    half_length = 0.5
    pole_mass_length = mass_pole * half_length
    force_mag = 10.0
    tau = 0.02
    theta_threshold = 12 * 2 * math.pi / 360
    x_threshold = 2.4
    state_bounds = np.array([
        [-2 * x_threshold, 2 * x_threshold],
        [-np.inf, np.inf],
        [-2 * theta_threshold, 2 * theta_threshold],
        [-np.inf, np.inf],
    ])

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        self._state = rng.uniform(-0.05, 0.05, size=4)
        return self.get_state()

    def step(self, action: int, rng: np.random.Generator) -> tuple[float, np.ndarray, bool]:
        self._check_action(action)
        x, x_dot, theta, theta_dot = self._state
        force = self.force_mag if action == 1 else -self.force_mag
        cos_theta, sin_theta = math.cos(theta), math.sin(theta)
        temp = (force + self.pole_mass_length * theta_dot**2 * sin_theta) / self.total_mass
        theta_acc = (self.gravity * sin_theta - cos_theta * temp) / (
            self.half_length * (4.0 / 3.0 - self.mass_pole * cos_theta**2 / self.total_mass)
        )
        x_acc = temp - self.pole_mass_length * theta_acc * cos_theta / self.total_mass
        x = x + self.tau * x_dot
        x_dot = x_dot + self.tau * x_acc
        theta = theta + self.tau * theta_dot
        theta_dot = theta_dot + self.tau * theta_acc
        self._state = np.array([x, x_dot, theta, theta_dot])
        terminal = bool(abs(x) > self.x_threshold or abs(theta) > self.theta_threshold)
        return self._reward(terminal), self.get_state(), terminal


MOUNTAINCAR_SPEC = ControlEnvSpec(
    name="mountaincar",
    state_dimension=2,
    action_count=3,
    max_episode_steps=200,
    step_reward=-1.0,
    terminal_reward=0.0,
    feature_bounds=((-1.2, 0.6), (-0.07, 0.07)),
)


class MountainCar(ControlSimulator):
    spec = MOUNTAINCAR_SPEC
    min_position = -1.2
    max_position = 0.6
    max_speed = 0.07
    goal_position = 0.5
    force = 0.001
    gravity = 0.0025
    state_bounds = np.array([[min_position, max_position], [-max_speed, max_speed]])

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        self._state = np.array([rng.uniform(-0.6, -0.4), 0.0])
        return self.get_state()

    def step(self, action: int, rng: np.random.Generator) -> tuple[float, np.ndarray, bool]:
        self._check_action(action)
        position, velocity = self._state
        velocity += (action - 1) * self.force + math.cos(3 * position) * (-self.gravity)
        velocity = min(max(velocity, -self.max_speed), self.max_speed)
        position += velocity
        position = min(max(position, self.min_position), self.max_position)
        if position == self.min_position and velocity < 0:
            velocity = 0.0
        self._state = np.array([position, velocity])
        terminal = bool(position >= self.goal_position)
        return self._reward(terminal), self.get_state(), terminal


def acrobot_observation(state: np.ndarray) -> np.ndarray:
    theta1, theta2, dtheta1, dtheta2 = state
    return np.array([math.cos(theta1), math.sin(theta1), math.cos(theta2), math.sin(theta2), dtheta1, dtheta2])


ACROBOT_MAX_VEL_1 = 4 * math.pi
ACROBOT_MAX_VEL_2 = 9 * math.pi

ACROBOT_SPEC = ControlEnvSpec(
    name="acrobot",
    state_dimension=4,
    action_count=3,
    max_episode_steps=500,
    step_reward=-1.0,
    terminal_reward=0.0,
    feature_bounds=(
        (-1.0, 1.0),
        (-1.0, 1.0),
        (-1.0, 1.0),
        (-1.0, 1.0),
        (-ACROBOT_MAX_VEL_1, ACROBOT_MAX_VEL_1),
        (-ACROBOT_MAX_VEL_2, ACROBOT_MAX_VEL_2),
    ),
    observation=acrobot_observation,
)


def _wrap(angle: float) -> float:
    return (angle + math.pi) % (2 * math.pi) - math.pi


class Acrobot(ControlSimulator):
    spec = ACROBOT_SPEC
    dt = 0.2
    link_length_1 = 1.0
    link_mass_1 = 1.0
    link_mass_2 = 1.0
    link_com_1 = 0.5
    link_com_2 = 0.5
    link_moi = 1.0
    gravity = 9.8
    torques = (-1.0, 0.0, 1.0)
    state_bounds = np.array([
        [-math.pi, math.pi],
        [-math.pi, math.pi],
        [-ACROBOT_MAX_VEL_1, ACROBOT_MAX_VEL_1],
        [-ACROBOT_MAX_VEL_2, ACROBOT_MAX_VEL_2],
    ])

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        self._state = rng.uniform(-0.1, 0.1, size=4)
        return self.get_state()

    def _derivatives(self, s: np.ndarray, torque: float) -> np.ndarray:
        m1, m2 = self.link_mass_1, self.link_mass_2
        l1, lc1, lc2 = self.link_length_1, self.link_com_1, self.link_com_2
        i1 = i2 = self.link_moi
        g = self.gravity
        theta1, theta2, dtheta1, dtheta2 = s
        d1 = m1 * lc1**2 + m2 * (l1**2 + lc2**2 + 2 * l1 * lc2 * math.cos(theta2)) + i1 + i2
        d2 = m2 * (lc2**2 + l1 * lc2 * math.cos(theta2)) + i2
        phi2 = m2 * lc2 * g * math.cos(theta1 + theta2 - math.pi / 2.0)
        phi1 = (
            -m2 * l1 * lc2 * dtheta2**2 * math.sin(theta2)
            - 2 * m2 * l1 * lc2 * dtheta2 * dtheta1 * math.sin(theta2)
            + (m1 * lc1 + m2 * l1) * g * math.cos(theta1 - math.pi / 2)
            + phi2
        )
        ddtheta2 = (torque + d2 / d1 * phi1 - m2 * l1 * lc2 * dtheta1**2 * math.sin(theta2) - phi2) / (
            m2 * lc2**2 + i2 - d2**2 / d1
        )
        ddtheta1 = -(d2 * ddtheta2 + phi1) / d1
        return np.array([dtheta1, dtheta2, ddtheta1, ddtheta2])

    def step(self, action: int, rng: np.random.Generator) -> tuple[float, np.ndarray, bool]:
        self._check_action(action)
        torque = self.torques[action]
        s, h = self._state, self.dt
        k1 = self._derivatives(s, torque)
        k2 = self._derivatives(s + h / 2 * k1, torque)
        k3 = self._derivatives(s + h / 2 * k2, torque)
        k4 = self._derivatives(s + h * k3, torque)
        theta1, theta2, dtheta1, dtheta2 = s + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        self._state = np.array([
            _wrap(theta1),
            _wrap(theta2),
            min(max(dtheta1, -ACROBOT_MAX_VEL_1), ACROBOT_MAX_VEL_1),
            min(max(dtheta2, -ACROBOT_MAX_VEL_2), ACROBOT_MAX_VEL_2),
        ])
        terminal = bool(-math.cos(self._state[0]) - math.cos(self._state[1] + self._state[0]) > 1.0)
        return self._reward(terminal), self.get_state(), terminal
