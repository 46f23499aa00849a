"""Ground-truth simulated tasks: pendulum swing-up, cart-pole swing-up and a
kinematic planar 4-DOF arm, with their reward functions, state transforms and
action bounds.

Angle conventions: all angles are measured from the hanging/upright rest pose
given in each task, and every model-facing transform expands angles into
(cos, sin) pairs so that inputs are continuous across wrap-around.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

GRAVITY = 9.81
CONTROL_DT = 0.1
EPISODE_STEPS = 40  # 4 s at 10 Hz


def _rk4(deriv, x: np.ndarray, u, dt: float, substeps: int) -> np.ndarray:
    """Classic fixed-step Runge-Kutta 4 with zero-order-hold control."""
    h = dt / substeps
    x = np.asarray(x, dtype=float).copy()
    for _ in range(substeps):
        k1 = deriv(x, u)
        k2 = deriv(x + 0.5 * h * k1, u)
        k3 = deriv(x + 0.5 * h * k2, u)
        k4 = deriv(x + h * k3, u)
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return x


# ---------------------------------------------------------------- pendulum

PENDULUM_MASS = 1.0
PENDULUM_LENGTH = 1.0
PENDULUM_FRICTION = 0.01  # viscous, N*m*s
PENDULUM_UMAX = 2.5


def _pendulum_deriv(x, u, mass, length, friction, gravity):
    # rigid rod driven at the pivot, inertia m l^2 / 3, theta = 0 hanging down:
    #   theta_dd = (u - b*theta_d - m g (l/2) sin(theta)) / (m l^2 / 3)
    omega, theta = x
    inertia = mass * length * length / 3.0
    acc = (u - friction * omega - mass * gravity * (length / 2.0) * math.sin(theta)) / inertia
    return np.array([acc, omega])


def pendulum_step(
    x,
    u,
    dt: float = CONTROL_DT,
    *,
    mass: float = PENDULUM_MASS,
    length: float = PENDULUM_LENGTH,
    friction: float = PENDULUM_FRICTION,
    gravity: float = GRAVITY,
    substeps: int = 10,
) -> np.ndarray:
    """One control period of the torque-driven pendulum, state [theta_dot, theta]."""
    u = float(np.clip(np.asarray(u, dtype=float).ravel()[0], -PENDULUM_UMAX, PENDULUM_UMAX))
    deriv = functools.partial(
        _pendulum_deriv, mass=mass, length=length, friction=friction, gravity=gravity
    )
    return _rk4(lambda s, a: deriv(s, a), np.asarray(x, float), u, dt, substeps)


def pendulum_energy(x, *, mass=PENDULUM_MASS, length=PENDULUM_LENGTH, gravity=GRAVITY) -> float:
    """Mechanical energy of the rod: 0.5 I w^2 - m g (l/2) cos(theta)."""
    omega, theta = np.asarray(x, dtype=float)
    inertia = mass * length * length / 3.0
    return 0.5 * inertia * omega * omega - mass * gravity * (length / 2.0) * math.cos(theta)


def pendulum_transform(x) -> np.ndarray:
    omega, theta = np.asarray(x, dtype=float)
    return np.array([omega, math.cos(theta), math.sin(theta)])


# ---------------------------------------------------------------- cart-pole

CART_MASS = 0.5
POLE_MASS = 0.5
POLE_LENGTH = 0.5
CARTPOLE_UMAX = 10.0


def _cartpole_deriv(x, u, cart_mass, pole_mass, pole_length, gravity):
    # frictionless cart on a track, uniform pole of length l pivoting on it
    # (inertia m l^2 / 3 about the pivot), theta = 0 hanging down.  With
    # M = cart mass, m = pole mass, s/c = sin/cos(theta) the coupled ODEs are
    #   x_dd  = (2 m l w^2 s + 3 m g s c + 4 u) / (4(M+m) - 3 m c^2)
    #   th_dd = (-3 m l w^2 s c - 6(M+m) g s - 6 u c) / (l (4(M+m) - 3 m c^2))
    xd, _, w, theta = x
    M, m, l, g = cart_mass, pole_mass, pole_length, gravity
    s, c = math.sin(theta), math.cos(theta)
    denom = 4.0 * (M + m) - 3.0 * m * c * c
    x_acc = (2.0 * m * l * w * w * s + 3.0 * m * g * s * c + 4.0 * u) / denom
    th_acc = (-3.0 * m * l * w * w * s * c - 6.0 * (M + m) * g * s - 6.0 * u * c) / (l * denom)
    return np.array([x_acc, xd, th_acc, w])


def cartpole_step(
    x,
    u,
    dt: float = CONTROL_DT,
    *,
    cart_mass: float = CART_MASS,
    pole_mass: float = POLE_MASS,
    pole_length: float = POLE_LENGTH,
    gravity: float = GRAVITY,
    substeps: int = 10,
) -> np.ndarray:
    """One control period of the cart-pole, state [x_dot, x, theta_dot, theta]."""
    u = float(np.clip(np.asarray(u, dtype=float).ravel()[0], -CARTPOLE_UMAX, CARTPOLE_UMAX))
    deriv = functools.partial(
        _cartpole_deriv,
        cart_mass=cart_mass,
        pole_mass=pole_mass,
        pole_length=pole_length,
        gravity=gravity,
    )
    return _rk4(lambda s, a: deriv(s, a), np.asarray(x, float), u, dt, substeps)


def cartpole_energy(
    x, *, cart_mass=CART_MASS, pole_mass=POLE_MASS, pole_length=POLE_LENGTH, gravity=GRAVITY
) -> float:
    """Mechanical energy of the cart plus uniform pole (zero input, no friction)."""
    xd, _, w, theta = np.asarray(x, dtype=float)
    M, m, l = cart_mass, pole_mass, pole_length
    kinetic = (
        0.5 * (M + m) * xd * xd
        + 0.5 * m * l * xd * w * math.cos(theta)
        + (m * l * l / 6.0) * w * w
    )
    potential = -m * gravity * (l / 2.0) * math.cos(theta)
    return kinetic + potential


def cartpole_transform(x) -> np.ndarray:
    xd, pos, w, theta = np.asarray(x, dtype=float)
    return np.array([xd, pos, w, math.cos(theta), math.sin(theta)])


# ---------------------------------------------------------------- 4-DOF arm

ARM_LINKS = (0.2, 0.2, 0.2, 0.2)
ARM_VMAX = 1.0
ARM_GOAL = (0.4, 0.4)
ARM_REWARD_WIDTH = 0.1


def arm_step(x, u, dt: float = CONTROL_DT) -> np.ndarray:
    """Velocity-controlled joints integrated exactly: q' = q + clip(v) dt."""
    q = np.asarray(x, dtype=float).copy()
    v = np.clip(np.asarray(u, dtype=float).ravel(), -ARM_VMAX, ARM_VMAX)
    if v.size != q.size:
        raise ValueError(f"expected {q.size} joint velocities, got {v.size}")
    return q + v * dt


def arm_forward_kinematics(q, link_lengths=ARM_LINKS) -> np.ndarray:
    """End-effector position of the planar chain; q = 0 points straight up,
    positive angles rotate clockwise (toward +x), each relative to its parent."""
    q = np.asarray(q, dtype=float).ravel()
    if q.size != len(link_lengths):
        raise ValueError(f"expected {len(link_lengths)} joint angles, got {q.size}")
    angles = np.cumsum(q)
    x = float(np.sum(link_lengths * np.sin(angles)))
    y = float(np.sum(link_lengths * np.cos(angles)))
    return np.array([x, y])


def arm_transform(q) -> np.ndarray:
    q = np.asarray(q, dtype=float).ravel()
    out = np.empty(2 * q.size)
    out[0::2] = np.cos(q)
    out[1::2] = np.sin(q)
    return out


def arm_reward(q, goal=ARM_GOAL, sigma_c: float = ARM_REWARD_WIDTH, link_lengths=ARM_LINKS) -> float:
    """exp(-dist / (2 sigma_c^2)) where dist is the (unsquared) end-effector
    distance to the goal; equals 1 only at the goal itself."""
    p = arm_forward_kinematics(q, link_lengths)
    dist = float(np.linalg.norm(p - np.asarray(goal, dtype=float)))
    return math.exp(-dist / (2.0 * sigma_c * sigma_c))


# ---------------------------------------------------------------- rewards

@dataclass(frozen=True, eq=False)
class RewardSpec:
    """Saturating exponential reward on transformed states.

    reward = exp(-0.5 / sigma_c^2 * sum_i mask_i (z_i - target_i)^2), in (0, 1].
    Masked-out dimensions (mask 0) never affect the value.
    """

    target: np.ndarray
    sigma_c: float
    mask: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "target", np.asarray(self.target, dtype=float).ravel())
        object.__setattr__(self, "mask", np.asarray(self.mask, dtype=float).ravel())
        if self.target.size != self.mask.size:
            raise ValueError("target and mask sizes differ")
        if self.sigma_c <= 0:
            raise ValueError("sigma_c must be positive")


def saturating_reward(z, spec: RewardSpec) -> float:
    z = np.asarray(z, dtype=float).ravel()
    if z.size != spec.target.size:
        raise ValueError(f"input has {z.size} entries, expected {spec.target.size}")
    d = z - spec.target
    return math.exp(-0.5 / (spec.sigma_c**2) * float(np.sum(spec.mask * d * d)))


def _transformed_reward(x, transform, spec: RewardSpec) -> float:
    return saturating_reward(transform(x), spec)


def _arm_true_reward(x, goal, sigma_c, link_lengths) -> float:
    return arm_reward(x, goal=goal, sigma_c=sigma_c, link_lengths=link_lengths)


# ---------------------------------------------------------------- task specs

@dataclass(frozen=True, eq=False)
class TaskSpec:
    """Everything the learner needs to interact with one benchmark task."""

    name: str
    state_dim: int
    action_dim: int
    u_max: np.ndarray
    horizon: int
    dt: float
    x0: np.ndarray
    input_dim: int
    transform: Callable[[np.ndarray], np.ndarray]
    step: Callable[..., np.ndarray]
    true_reward: Callable[[np.ndarray], float]
    reward_spec: RewardSpec | None
    reward_learned: bool
    state_bounds: np.ndarray          # per-dimension magnitude scale; rollouts clamp at 10x
    policy_input_bounds: np.ndarray   # (input_dim, 2) box in transformed space
    pseudo_points: int
    success_kind: str = "cumulative"  # or "final_window"
    success_fraction: float = 0.6
    success_window: int = 10
    success_level: float = 0.9

    def __post_init__(self):
        object.__setattr__(self, "u_max", np.asarray(self.u_max, dtype=float).ravel())
        object.__setattr__(self, "x0", np.asarray(self.x0, dtype=float).ravel())
        object.__setattr__(self, "state_bounds", np.asarray(self.state_bounds, dtype=float).ravel())
        object.__setattr__(
            self, "policy_input_bounds", np.asarray(self.policy_input_bounds, dtype=float)
        )
        if abs(self.dt * self.horizon - 4.0) > 1e-9:
            raise ValueError("episode length must stay 4 s (dt * horizon)")

    def is_success(self, rewards) -> bool:
        """Episode-level success from its per-step true rewards."""
        rewards = np.asarray(rewards, dtype=float).ravel()
        if rewards.size == 0:
            return False
        if self.success_kind == "cumulative":
            return float(rewards.sum()) >= self.success_fraction * self.horizon
        window = min(self.success_window, rewards.size)
        return float(rewards[-window:].mean()) >= self.success_level


def _pendulum_task(**overrides) -> TaskSpec:
    spec = RewardSpec(target=[0.0, -1.0, 0.0], sigma_c=0.25, mask=[0.0, 1.0, 1.0])
    defaults = dict(
        name="pendulum",
        state_dim=2,
        action_dim=1,
        u_max=[PENDULUM_UMAX],
        horizon=EPISODE_STEPS,
        dt=CONTROL_DT,
        x0=[0.0, 0.0],
        input_dim=3,
        transform=pendulum_transform,
        step=pendulum_step,
        true_reward=functools.partial(_transformed_reward, transform=pendulum_transform, spec=spec),
        reward_spec=spec,
        reward_learned=False,
        state_bounds=[10.0, 2.0 * math.pi],
        policy_input_bounds=[[-10.0, 10.0], [-1.0, 1.0], [-1.0, 1.0]],
        pseudo_points=10,
    )
    defaults.update(overrides)
    return TaskSpec(**defaults)


def _cartpole_task(**overrides) -> TaskSpec:
    spec = RewardSpec(
        target=[0.0, 0.0, 0.0, -1.0, 0.0], sigma_c=0.25, mask=[0.0, 1.0, 0.0, 1.0, 1.0]
    )
    defaults = dict(
        name="cartpole",
        state_dim=4,
        action_dim=1,
        u_max=[CARTPOLE_UMAX],
        horizon=EPISODE_STEPS,
        dt=CONTROL_DT,
        x0=[0.0, 0.0, 0.0, 0.0],
        input_dim=5,
        transform=cartpole_transform,
        step=cartpole_step,
        true_reward=functools.partial(_transformed_reward, transform=cartpole_transform, spec=spec),
        reward_spec=spec,
        reward_learned=False,
        state_bounds=[10.0, 5.0, 15.0, 2.0 * math.pi],
        policy_input_bounds=[
            [-10.0, 10.0],
            [-5.0, 5.0],
            [-15.0, 15.0],
            [-1.0, 1.0],
            [-1.0, 1.0],
        ],
        pseudo_points=20,
    )
    defaults.update(overrides)
    return TaskSpec(**defaults)


def _arm_task(**overrides) -> TaskSpec:
    goal = overrides.pop("goal", ARM_GOAL)
    defaults = dict(
        name="arm4dof",
        state_dim=4,
        action_dim=4,
        u_max=[ARM_VMAX] * 4,
        horizon=EPISODE_STEPS,
        dt=CONTROL_DT,
        x0=[0.0, 0.0, 0.0, 0.0],
        input_dim=8,
        transform=arm_transform,
        step=arm_step,
        true_reward=functools.partial(
            _arm_true_reward, goal=goal, sigma_c=ARM_REWARD_WIDTH, link_lengths=ARM_LINKS
        ),
        reward_spec=None,
        reward_learned=True,
        state_bounds=[2.0 * math.pi] * 4,
        policy_input_bounds=[[-1.0, 1.0]] * 8,
        pseudo_points=10,
        success_kind="final_window",
    )
    defaults.update(overrides)
    return TaskSpec(**defaults)


_TASKS = {
    "pendulum": _pendulum_task,
    "cartpole": _cartpole_task,
    "arm4dof": _arm_task,
}


def task_names() -> list[str]:
    return sorted(_TASKS)


def make_task(name: str, **overrides) -> TaskSpec:
    """Build a task by registry name; overrides replace TaskSpec fields."""
    try:
        factory = _TASKS[name]
    except KeyError:
        raise ValueError(f"unknown task {name!r}; available: {', '.join(task_names())}") from None
    return factory(**overrides)
