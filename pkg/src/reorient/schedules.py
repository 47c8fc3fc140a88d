"""Gravity curriculum and domain-randomization schedules.

The curriculum starts gravity at +1 m/s^2 (pressing the object into a
downward-facing palm), and lowers it by 0.5 toward -9.81 whenever recent
evaluation success stays high: success rates are collected every
EVAL_INTERVAL training iterations into a FIFO window of length
WINDOW_CAPACITY, and gravity decreases when the window mean exceeds
SUCCESS_THRESHOLD and at least MIN_ITERS_BETWEEN_CHANGES iterations have
passed since the previous change.

Domain randomization draws one perturbation per episode: multiplicative
scales on mass, friction, joint damping/stiffness and tendon
damping/stiffness, additive Gaussian offsets on the joint limits, plus
uniform observation noise and Gaussian action noise applied per step.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

GRAVITY_INITIAL = 1.0
GRAVITY_STEP = 0.5
GRAVITY_FLOOR = -9.81
WINDOW_CAPACITY = 3
SUCCESS_THRESHOLD = 0.8
EVAL_INTERVAL = 20
MIN_ITERS_BETWEEN_CHANGES = 40

OBS_NOISE_BOUND = 0.001
ACTION_NOISE_STD = 0.01

MASS_SCALE_RANGE = (0.5, 1.5)
FRICTION_SCALE_RANGE = (0.7, 1.3)
JOINT_DAMPING_RANGE = (0.3, 3.0)
JOINT_STIFFNESS_RANGE = (0.75, 1.5)
TENDON_DAMPING_RANGE = (0.3, 3.0)
TENDON_STIFFNESS_RANGE = (0.75, 1.5)
JOINT_LIMIT_STD = 0.01


@dataclass
class CurriculumState:
    """Mutable gravity-curriculum bookkeeping owned by the training driver."""

    g: float = GRAVITY_INITIAL
    window: list = field(default_factory=list)
    iters_since_change: int = 0


def curriculum_step(state, iteration, eval_fn):
    """Advance the curriculum by one training iteration.

    ``iteration`` counts from 1.  ``eval_fn`` is invoked only on evaluation
    iterations (every EVAL_INTERVAL-th call) and must return a success rate
    in [0, 1].  Returns ``state`` (mutated in place).
    """
    state.iters_since_change += 1
    if iteration % EVAL_INTERVAL == 0:
        w = float(eval_fn())
        state.window.append(w)
        if len(state.window) > WINDOW_CAPACITY:
            state.window.pop(0)
        if (
            state.g > GRAVITY_FLOOR
            and np.mean(state.window) > SUCCESS_THRESHOLD
            and state.iters_since_change > MIN_ITERS_BETWEEN_CHANGES
        ):
            state.g = max(state.g - GRAVITY_STEP, GRAVITY_FLOOR)
            state.iters_since_change = 0
    return state


def log_uniform(rng, lo, hi):
    """Sample exp(U(log lo, log hi)); degenerate lo == hi returns lo exactly."""
    if lo <= 0 or hi <= 0:
        raise ValueError("log_uniform bounds must be positive")
    return float(np.exp(rng.uniform(np.log(lo), np.log(hi))))


@dataclass
class EnvPerturbation:
    """One episode's worth of dynamics randomization.

    ``friction_scale`` folds the object-surface and fingertip draws into a
    single multiplier on grip capacity, since both act on the same surrogate
    mechanism.  ``joint_limit_offsets`` has shape (n_joints, 2) holding the
    (lower, upper) endpoint offsets in radians.
    """

    mass_scale: float = 1.0
    friction_scale: float = 1.0
    joint_damping_scale: float = 1.0
    joint_stiffness_scale: float = 1.0
    tendon_damping_scale: float = 1.0
    tendon_stiffness_scale: float = 1.0
    joint_limit_offsets: np.ndarray = None
    obs_noise_bound: float = OBS_NOISE_BOUND
    action_noise_std: float = ACTION_NOISE_STD

    def __post_init__(self):
        if self.joint_limit_offsets is None:
            self.joint_limit_offsets = np.zeros((24, 2))
        self.joint_limit_offsets = np.asarray(self.joint_limit_offsets, dtype=np.float64)
        for name in (
            "mass_scale",
            "friction_scale",
            "joint_damping_scale",
            "joint_stiffness_scale",
            "tendon_damping_scale",
            "tendon_stiffness_scale",
        ):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


def identity_perturbation(n_joints=24):
    """Perturbation that leaves the dynamics untouched."""
    return EnvPerturbation(joint_limit_offsets=np.zeros((n_joints, 2)))


def sample_perturbation(rng, n_joints=24):
    """Draw one per-episode perturbation.  Draw order is fixed for determinism."""
    mass = rng.uniform(*MASS_SCALE_RANGE)
    friction = rng.uniform(*FRICTION_SCALE_RANGE) * rng.uniform(*FRICTION_SCALE_RANGE)
    jd = log_uniform(rng, *JOINT_DAMPING_RANGE)
    js = log_uniform(rng, *JOINT_STIFFNESS_RANGE)
    td = log_uniform(rng, *TENDON_DAMPING_RANGE)
    ts = log_uniform(rng, *TENDON_STIFFNESS_RANGE)
    offsets = rng.normal(0.0, JOINT_LIMIT_STD, (n_joints, 2))
    return EnvPerturbation(
        mass_scale=float(mass),
        friction_scale=float(friction),
        joint_damping_scale=jd,
        joint_stiffness_scale=js,
        tendon_damping_scale=td,
        tendon_stiffness_scale=ts,
        joint_limit_offsets=offsets,
    )


def apply_obs_noise(obs, rng, bound=OBS_NOISE_BOUND):
    """Additive per-component uniform noise on an observation array."""
    obs = np.asarray(obs, dtype=np.float64)
    return obs + rng.uniform(-bound, bound, obs.shape)


def apply_action_noise(action, rng, std=ACTION_NOISE_STD):
    """Additive per-component Gaussian noise on an action array."""
    action = np.asarray(action, dtype=np.float64)
    return action + rng.normal(0.0, std, action.shape)
