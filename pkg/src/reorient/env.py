"""Surrogate in-hand object reorientation environment.

A 24-joint actuated hand manipulates parameterized box objects, reduced to
the coordinates that matter for reorientation learning:

* joints track commanded targets with first-order dynamics,
* the object rotates rigidly under torques produced through a per-object
  contact map of the joint tracking error,
* a scalar grip-support model decides whether the object stays held, and
* scenario-dependent height dynamics move the object between table rest
  and the palm.

Scenarios: ``hand_up`` (palm up, the object rests in the palm and can never
drop), ``hand_down_table`` (palm down above a table; a lost grip re-rests
the object on the table and the episode continues), and ``hand_down_air``
(palm down in free space; a lost grip ends the episode).

Conventions: quaternions are scalar-first unit quaternions.  Gravity is the
signed z-acceleration: negative pulls the object away from a downward
facing palm, positive presses it in.  Heights are measured from the hand
base at z = 0; the support formula is support = sigmoid(u . q) where u is
the object's grip vector, and the object drops when
support * f_max < mass * |g_eff|.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass

import numpy as np

from . import rng as rngmod
from . import schedules
from .objects import contact_basis
from .rotation import (
    integrate_orientation,
    quat_angle_diff,
    quat_conj,
    quat_mul,
    sample_uniform_so3,
)

HAND_UP = "hand_up"
HAND_DOWN_TABLE = "hand_down_table"
HAND_DOWN_AIR = "hand_down_air"
SCENARIOS = (HAND_UP, HAND_DOWN_TABLE, HAND_DOWN_AIR)

TASK_REORIENT = "reorient"
TASK_LIFT = "lift"
TASKS = (TASK_REORIENT, TASK_LIFT)

INIT_DEFAULT = "default"
INIT_POSE_BANK = "pose_bank"
INIT_MODES = (INIT_DEFAULT, INIT_POSE_BANK)

DT = 1.0 / 60.0
EPISODE_LIMIT = 300
ACTION_MAX = 0.33  # rad/s per joint
JOINT_LIMIT = np.pi / 2
SUCCESS_ANGLE = 0.1  # rad; also the goal-resample threshold
LIFT_HEIGHT = 0.04  # m; height gap below which the object counts as lifted
LIFT_HOLD_STEPS = 30
GRIP_FORCE_MAX = 2.0  # N
GRAVITY_DEFAULT = -9.81

TABLE_Z = -0.12
HANDUP_Z = 0.13
HOLD_Z = -0.02
AIR_DEFAULT_Z = -0.07
INIT_SQUARE = 0.09  # side of the uniform xy placement square

TRACK_RATE = 25.0  # 1/s joint target tracking
STIFFNESS = 0.02  # N*m of contact torque per rad of projected tracking error
ROT_DAMPING = 3e-4  # N*m*s rotational damping on the object
RAISE_RATE = 6.0  # 1/s height relaxation toward equilibrium
RAMP_WIDTH = 0.3  # grip-capacity margin over which a held object reaches hold_z
TABLE_OPEN = 1.0  # how far the hand starts open, in grip-vector units
AIR_OPEN = 2.0
MAX_TRACK_PER_STEP = 0.95  # stability clamp on track_rate * dt under randomization


def reorient_reward(angle_err, action):
    """Dense inverse-angle reward with a success bonus and an action cost."""
    angle_err = np.asarray(angle_err, dtype=np.float64)
    action = np.asarray(action, dtype=np.float64)
    cost = 0.1 * np.sum(np.square(action), axis=-1)
    return 1.0 / (np.abs(angle_err) + 0.1) + 800.0 * (np.abs(angle_err) < 0.1) - cost


def lift_reward(height_gap, action):
    """Dense inverse-height-gap reward with a success bonus and an action cost."""
    height_gap = np.asarray(height_gap, dtype=np.float64)
    action = np.asarray(action, dtype=np.float64)
    cost = 0.1 * np.sum(np.square(action), axis=-1)
    return 0.05 / (np.abs(height_gap) + 0.02) + 800.0 * (np.abs(height_gap) < LIFT_HEIGHT) - cost


@dataclass
class EnvConfig:
    """Scenario/task selection plus every dynamics constant, all overridable."""

    scenario: str = HAND_DOWN_AIR
    task: str = TASK_REORIENT
    init_mode: str = INIT_DEFAULT
    gravity: float = GRAVITY_DEFAULT
    randomize: bool = False
    episode_len: int = EPISODE_LIMIT
    success_angle: float = SUCCESS_ANGLE
    action_max: float = ACTION_MAX
    dt: float = DT
    joint_limit: float = JOINT_LIMIT
    track_rate: float = TRACK_RATE
    stiffness: float = STIFFNESS
    rot_damping: float = ROT_DAMPING
    f_max: float = GRIP_FORCE_MAX
    raise_rate: float = RAISE_RATE
    ramp_width: float = RAMP_WIDTH
    table_z: float = TABLE_Z
    handup_z: float = HANDUP_Z
    hold_z: float = HOLD_Z
    air_default_z: float = AIR_DEFAULT_Z
    init_square: float = INIT_SQUARE
    table_open: float = TABLE_OPEN
    air_open: float = AIR_OPEN
    lift_height: float = LIFT_HEIGHT
    lift_hold_steps: int = LIFT_HOLD_STEPS

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ValueError(f"unknown scenario {self.scenario!r}")
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}")
        if self.init_mode not in INIT_MODES:
            raise ValueError(f"unknown init mode {self.init_mode!r}")
        if self.init_mode == INIT_POSE_BANK and self.scenario != HAND_DOWN_AIR:
            raise ValueError("pose-bank initialization applies to hand_down_air only")
        if self.dt <= 0 or self.episode_len <= 0:
            raise ValueError("dt and episode_len must be positive")


@dataclass
class StepResult:
    obs_full: np.ndarray
    obs_reduced: np.ndarray
    reward: float
    done: bool
    success: bool
    dropped: bool
    torque_proxy: np.ndarray


@dataclass
class EnvState:
    """Single-environment state; arrays are owned by the state (no aliasing)."""

    q_target: np.ndarray
    q: np.ndarray
    q_dot: np.ndarray
    obj_quat: np.ndarray
    obj_angvel: np.ndarray
    obj_pos: np.ndarray
    obj_linvel: np.ndarray
    goal_quat: np.ndarray
    prev_action: np.ndarray
    step: int
    gravity: float
    object: object
    perturbation: object
    scenario: str
    config: EnvConfig
    done: bool = False
    success: bool = False
    dropped: bool = False
    hold_count: int = 0


def obs_dims(n_joints):
    """(full, reduced) observation sizes: 2A+21 and A+7."""
    return 2 * n_joints + 21, n_joints + 7


def _stack_objects(specs):
    if not specs:
        raise ValueError("at least one object spec is required")
    n_joints = specs[0].contact_map.shape[0]
    for s in specs:
        if s.contact_map.shape != (n_joints, 3) or s.grip_vector.shape != (n_joints,):
            raise ValueError("all object specs must share the joint count")
    return {
        "ids": [s.id for s in specs],
        "specs": list(specs),
        "mass": np.array([s.mass for s in specs], dtype=np.float64),
        "inertia": np.stack([s.inertia_diag for s in specs]).astype(np.float64),
        "G": np.stack([s.contact_map for s in specs]).astype(np.float64),
        "u": np.stack([s.grip_vector for s in specs]).astype(np.float64),
        "n_joints": n_joints,
    }


def _alloc_state(n_envs, n_joints):
    z = lambda *shape: np.zeros(shape, dtype=np.float64)
    s = {
        "q_target": z(n_envs, n_joints),
        "q": z(n_envs, n_joints),
        "q_dot": z(n_envs, n_joints),
        "obj_quat": z(n_envs, 4),
        "obj_angvel": z(n_envs, 3),
        "obj_pos": z(n_envs, 3),
        "obj_linvel": z(n_envs, 3),
        "goal_quat": z(n_envs, 4),
        "prev_action": z(n_envs, n_joints),
        "step": np.zeros(n_envs, dtype=np.int64),
        "hold": np.zeros(n_envs, dtype=np.int64),
        "gravity": z(n_envs),
        "mass": z(n_envs),
        "inertia": z(n_envs, 3),
        "G": z(n_envs, n_joints, 3),
        "u": z(n_envs, n_joints),
        "f_max": z(n_envs),
        "lam": z(n_envs),
        "ks": z(n_envs),
        "damp": z(n_envs),
        "lim_lo": z(n_envs, n_joints),
        "lim_hi": z(n_envs, n_joints),
        "obj_idx": np.zeros(n_envs, dtype=np.int64),
        "done": np.zeros(n_envs, dtype=bool),
        "success": np.zeros(n_envs, dtype=bool),
        "dropped": np.zeros(n_envs, dtype=bool),
    }
    s["obj_quat"][:, 0] = 1.0
    s["goal_quat"][:, 0] = 1.0
    return s


def _fold_dynamics(S, rows, objs, idx, perturbations, cfg):
    """Bake object parameters and per-episode perturbations into step arrays."""
    n_joints = objs["n_joints"]
    for r, i, p in zip(rows, idx, perturbations):
        if p is None:
            m_s = fr_s = jd_s = js_s = td_s = ts_s = 1.0
            lim = np.zeros((n_joints, 2))
        else:
            m_s, fr_s = p.mass_scale, p.friction_scale
            jd_s, js_s = p.joint_damping_scale, p.joint_stiffness_scale
            td_s, ts_s = p.tendon_damping_scale, p.tendon_stiffness_scale
            lim = p.joint_limit_offsets
        S["mass"][r] = objs["mass"][i] * m_s
        S["inertia"][r] = objs["inertia"][i] * m_s
        S["G"][r] = objs["G"][i]
        S["u"][r] = objs["u"][i]
        S["f_max"][r] = cfg.f_max * fr_s
        S["lam"][r] = min(cfg.track_rate * ts_s / jd_s, MAX_TRACK_PER_STEP / cfg.dt)
        S["ks"][r] = cfg.stiffness * js_s
        S["damp"][r] = cfg.rot_damping * td_s
        S["lim_lo"][r] = -cfg.joint_limit + lim[:, 0]
        S["lim_hi"][r] = cfg.joint_limit + lim[:, 1]
        S["obj_idx"][r] = i


def _reset_rows(S, rows, objs, cfg, rng, gravity, pose_bank=None, object_index=None):
    """Re-initialize the given rows in place; returns the sampled perturbations."""
    rows = np.asarray(rows, dtype=np.int64)
    n_rows = len(rows)
    if n_rows == 0:
        return []
    n_joints = objs["n_joints"]
    n_objects = len(objs["ids"])

    if object_index is not None:
        idx = np.full(n_rows, int(object_index), dtype=np.int64)
    elif cfg.init_mode == INIT_POSE_BANK:
        usable = [k for k, oid in enumerate(objs["ids"]) if pose_bank.count(oid) > 0]
        if not usable:
            raise ValueError("pose bank has no entries for the provided objects")
        idx = rng.choice(np.asarray(usable, dtype=np.int64), size=n_rows)
    else:
        idx = rng.integers(0, n_objects, size=n_rows)

    perts = [
        schedules.sample_perturbation(rng, n_joints) if cfg.randomize else None
        for _ in range(n_rows)
    ]
    _fold_dynamics(S, rows, objs, idx, perts, cfg)

    u_base = contact_basis(n_joints)[1]
    if cfg.scenario == HAND_UP:
        q0 = np.zeros((n_rows, n_joints))
    elif cfg.scenario == HAND_DOWN_TABLE:
        q0 = np.tile(-cfg.table_open * u_base, (n_rows, 1))
    else:
        q0 = np.tile(-cfg.air_open * u_base, (n_rows, 1))
    q0 = np.clip(q0, S["lim_lo"][rows], S["lim_hi"][rows])

    xy = rng.uniform(-cfg.init_square / 2, cfg.init_square / 2, (n_rows, 2))
    if cfg.scenario == HAND_UP:
        z0 = cfg.handup_z
    elif cfg.scenario == HAND_DOWN_TABLE:
        z0 = cfg.table_z
    else:
        z0 = cfg.air_default_z
    pos = np.concatenate([xy, np.full((n_rows, 1), z0)], axis=1)
    quat = sample_uniform_so3(rng, n_rows)

    if cfg.init_mode == INIT_POSE_BANK:
        for k, (r, i) in enumerate(zip(rows, idx)):
            eq, equat, epos = pose_bank.sample(objs["ids"][i], rng)
            q0[k] = np.clip(eq, S["lim_lo"][r], S["lim_hi"][r])
            quat[k] = equat
            pos[k] = epos

    S["q"][rows] = q0
    S["q_target"][rows] = q0
    S["q_dot"][rows] = 0.0
    S["obj_quat"][rows] = quat
    S["obj_pos"][rows] = pos
    S["obj_angvel"][rows] = 0.0
    S["obj_linvel"][rows] = 0.0
    S["prev_action"][rows] = 0.0
    S["step"][rows] = 0
    S["hold"][rows] = 0
    S["gravity"][rows] = gravity
    S["done"][rows] = False
    S["success"][rows] = False
    S["dropped"][rows] = False

    goal = sample_uniform_so3(rng, n_rows)
    bad = quat_angle_diff(S["obj_quat"][rows], goal) <= cfg.success_angle
    while np.any(bad):
        goal[bad] = sample_uniform_so3(rng, int(bad.sum()))
        bad = quat_angle_diff(S["obj_quat"][rows], goal) <= cfg.success_angle
    S["goal_quat"][rows] = goal
    return perts


def _observe_arrays(S, cfg, noise_rng=None):
    beta = quat_mul(S["obj_quat"], quat_conj(S["goal_quat"]))
    full = np.concatenate(
        [
            S["q"],
            S["q_dot"],
            S["obj_pos"],
            S["obj_quat"],
            S["obj_linvel"],
            S["obj_angvel"],
            S["goal_quat"],
            beta,
        ],
        axis=1,
    )
    reduced = np.concatenate([S["q"], S["obj_pos"], beta], axis=1)
    if cfg.randomize and noise_rng is not None:
        full = schedules.apply_obs_noise(full, noise_rng)
        reduced = schedules.apply_obs_noise(reduced, noise_rng)
    return full, reduced


def _step_core(S, actions, cfg, noise_rng=None):
    """Advance every row one step.  Mutates S; returns per-row results."""
    actions = np.asarray(actions, dtype=np.float64)
    if actions.shape != S["q"].shape:
        raise ValueError(f"action shape {actions.shape} != {S['q'].shape}")
    if not np.all(np.isfinite(actions)):
        raise ValueError("action must be finite")
    raw = actions

    a = raw
    if cfg.randomize and noise_rng is not None:
        a = schedules.apply_action_noise(a, noise_rng)

    dq = np.clip(a, -cfg.action_max, cfg.action_max) * cfg.dt
    S["q_target"] = np.clip(S["q_target"] + dq, S["lim_lo"], S["lim_hi"])

    q_old = S["q"]
    alpha = (S["lam"] * cfg.dt)[:, None]
    q_new = q_old + alpha * (S["q_target"] - q_old)
    S["q"] = q_new
    S["q_dot"] = (q_new - q_old) / cfg.dt

    err = S["q_target"] - q_new
    torque = np.einsum("ba,bak->bk", err, S["G"]) * S["ks"][:, None]
    w = S["obj_angvel"]
    w = w + cfg.dt * (torque - S["damp"][:, None] * w) / S["inertia"]
    S["obj_angvel"] = w
    S["obj_quat"] = integrate_orientation(S["obj_quat"], w, cfg.dt)

    support = 1.0 / (1.0 + np.exp(-np.sum(S["u"] * q_new, axis=1)))
    if cfg.scenario == HAND_UP:
        g_eff = np.zeros_like(S["gravity"])
    else:
        g_eff = S["gravity"]
    need = S["mass"] * np.abs(g_eff)
    capacity = support * S["f_max"]
    drop = capacity < need

    pos_old = S["obj_pos"].copy()
    if cfg.scenario == HAND_DOWN_TABLE:
        ratio = np.where(need > 0, capacity / np.maximum(need, 1e-300), np.inf)
        ramp = np.clip((ratio - 1.0) / cfg.ramp_width, 0.0, 1.0)
        z_eq = cfg.table_z + (cfg.hold_z - cfg.table_z) * ramp
        z = S["obj_pos"][:, 2]
        z = z + cfg.raise_rate * support * cfg.dt * (z_eq - z)
        S["obj_pos"][:, 2] = np.where(drop, cfg.table_z, z)
        S["obj_angvel"][drop] = 0.0
    elif cfg.scenario == HAND_DOWN_AIR:
        z = S["obj_pos"][:, 2]
        z_new = z + cfg.raise_rate * support * cfg.dt * (cfg.hold_z - z)
        S["obj_pos"][:, 2] = np.where(drop, z, z_new)
    S["obj_linvel"] = (S["obj_pos"] - pos_old) / cfg.dt
    if cfg.scenario == HAND_DOWN_TABLE:
        S["obj_linvel"][drop] = 0.0

    S["step"] += 1
    if cfg.task == TASK_REORIENT:
        task_error = quat_angle_diff(S["obj_quat"], S["goal_quat"])
        reward = reorient_reward(task_error, raw)
        succ = task_error <= cfg.success_angle
    else:
        task_error = np.maximum(-S["obj_pos"][:, 2], 0.0)
        held = task_error < cfg.lift_height
        S["hold"] = np.where(held, S["hold"] + 1, 0)
        succ = S["hold"] >= cfg.lift_hold_steps
        reward = lift_reward(task_error, raw)

    dropped = drop & (cfg.scenario == HAND_DOWN_AIR)
    done = succ | dropped | (S["step"] >= cfg.episode_len)
    S["prev_action"] = raw.copy()
    # keep the returned flag arrays independent of S so that resetting rows
    # after a step cannot rewrite results the caller already holds
    S["done"] = done.copy()
    S["success"] = succ.copy()
    S["dropped"] = dropped.copy()

    obs_full, obs_reduced = _observe_arrays(S, cfg, noise_rng)
    return {
        "obs_full": obs_full,
        "obs_reduced": obs_reduced,
        "reward": reward,
        "done": done,
        "success": succ,
        "dropped": dropped,
        "torque_proxy": torque,
        "task_error": task_error,
    }


class ReorientVecEnv:
    """Batch of independent environments sharing one scenario/task config.

    ``step`` auto-resets finished rows after recording their terminal
    results unless ``auto_reset=False``, in which case finished rows must
    be reset through :meth:`reset_rows` before stepping again.
    """

    def __init__(
        self,
        specs,
        config,
        n_envs,
        seed=0,
        pose_bank=None,
        object_index=None,
        auto_reset=True,
    ):
        self.config = config
        self.objs = _stack_objects(specs)
        self.n_envs = int(n_envs)
        self.n_joints = self.objs["n_joints"]
        self.auto_reset = auto_reset
        self.pose_bank = pose_bank
        self.object_index = object_index
        if config.init_mode == INIT_POSE_BANK:
            if pose_bank is None:
                raise ValueError("pose-bank init requires a pose bank")
            ids = (
                [self.objs["ids"][object_index]]
                if object_index is not None
                else self.objs["ids"]
            )
            if not any(pose_bank.count(oid) > 0 for oid in ids):
                raise ValueError("pose bank has no entries for the provided objects")
        self._rng_reset = _env_stream(seed, "reset")
        self._rng_noise = _env_stream(seed, "noise")
        self._gravity = config.gravity
        self.S = _alloc_state(self.n_envs, self.n_joints)
        self.reset_all()

    def reset_all(self):
        self.reset_rows(np.arange(self.n_envs))

    def reset_rows(self, rows):
        _reset_rows(
            self.S,
            rows,
            self.objs,
            self.config,
            self._rng_reset,
            self._gravity,
            pose_bank=self.pose_bank,
            object_index=self.object_index,
        )

    def set_gravity(self, g):
        """Apply a new gravity to all current and future episodes."""
        self._gravity = float(g)
        self.S["gravity"][:] = self._gravity

    def state_arrays(self):
        """Copy of every mutable state array (checkpoint support)."""
        return {k: v.copy() for k, v in self.S.items()}

    def load_state_arrays(self, arrays):
        """Restore a `state_arrays` snapshot, casting to native dtypes."""
        missing = sorted(set(self.S) - set(arrays))
        if missing:
            raise ValueError(f"state snapshot missing arrays: {', '.join(missing)}")
        for k, cur in self.S.items():
            a = np.asarray(arrays[k])
            if a.shape != cur.shape:
                raise ValueError(
                    f"state array {k!r}: shape {a.shape} != {cur.shape}")
            self.S[k] = a.astype(cur.dtype).copy()

    def rng_states(self):
        return {
            "reset": self._rng_reset.bit_generator.state,
            "noise": self._rng_noise.bit_generator.state,
        }

    def set_rng_states(self, states):
        self._rng_reset.bit_generator.state = states["reset"]
        self._rng_noise.bit_generator.state = states["noise"]

    @property
    def gravity(self):
        return self._gravity

    @property
    def prev_action(self):
        return self.S["prev_action"].copy()

    @property
    def object_indices(self):
        return self.S["obj_idx"].copy()

    def observe(self):
        """(obs_full, obs_reduced) for the current state of every row."""
        noise = self._rng_noise if self.config.randomize else None
        return _observe_arrays(self.S, self.config, noise)

    def step(self, actions):
        noise = self._rng_noise if self.config.randomize else None
        res = _step_core(self.S, actions, self.config, noise)
        if self.auto_reset and np.any(res["done"]):
            self.reset_rows(np.flatnonzero(res["done"]))
        return res


def _env_stream(seed, name):
    return rngmod.stream(seed, "env", name)


def reset(spec, config, rng, pose_bank=None):
    """Start one episode with the given object; returns an EnvState."""
    if config.init_mode == INIT_POSE_BANK:
        if pose_bank is None:
            raise ValueError("pose-bank init requires a pose bank")
        if pose_bank.count(spec.id) == 0:
            raise ValueError(f"pose bank has no entries for object {spec.id!r}")
    objs = _stack_objects([spec])
    S = _alloc_state(1, objs["n_joints"])
    perts = _reset_rows(S, [0], objs, config, rng, config.gravity, pose_bank=pose_bank)
    return _state_from_arrays(S, spec, perts[0], config)


def _state_from_arrays(S, spec, perturbation, config):
    return EnvState(
        q_target=S["q_target"][0].copy(),
        q=S["q"][0].copy(),
        q_dot=S["q_dot"][0].copy(),
        obj_quat=S["obj_quat"][0].copy(),
        obj_angvel=S["obj_angvel"][0].copy(),
        obj_pos=S["obj_pos"][0].copy(),
        obj_linvel=S["obj_linvel"][0].copy(),
        goal_quat=S["goal_quat"][0].copy(),
        prev_action=S["prev_action"][0].copy(),
        step=int(S["step"][0]),
        gravity=float(S["gravity"][0]),
        object=spec,
        perturbation=perturbation,
        scenario=config.scenario,
        config=config,
        done=bool(S["done"][0]),
        success=bool(S["success"][0]),
        dropped=bool(S["dropped"][0]),
        hold_count=int(S["hold"][0]),
    )


def _arrays_from_state(state):
    spec = state.object
    objs = _stack_objects([spec])
    S = _alloc_state(1, objs["n_joints"])
    _fold_dynamics(S, [0], objs, [0], [state.perturbation], state.config)
    S["q_target"][0] = state.q_target
    S["q"][0] = state.q
    S["q_dot"][0] = state.q_dot
    S["obj_quat"][0] = state.obj_quat
    S["obj_angvel"][0] = state.obj_angvel
    S["obj_pos"][0] = state.obj_pos
    S["obj_linvel"][0] = state.obj_linvel
    S["goal_quat"][0] = state.goal_quat
    S["prev_action"][0] = state.prev_action
    S["step"][0] = state.step
    S["hold"][0] = state.hold_count
    S["gravity"][0] = state.gravity
    return S


def step(state, action, rng=None):
    """Advance one episode by one step; returns (new_state, StepResult).

    Stepping a finished episode is a contract violation.  ``rng`` supplies
    observation/action noise draws and is only consulted when the episode's
    config has randomization enabled.
    """
    if state.done:
        raise RuntimeError("cannot step a finished episode; reset first")
    action = np.asarray(action, dtype=np.float64)
    S = _arrays_from_state(state)
    res = _step_core(S, action[None, :], state.config, rng)
    new_state = _state_from_arrays(S, state.object, state.perturbation, state.config)
    result = StepResult(
        obs_full=res["obs_full"][0],
        obs_reduced=res["obs_reduced"][0],
        reward=float(res["reward"][0]),
        done=bool(res["done"][0]),
        success=bool(res["success"][0]),
        dropped=bool(res["dropped"][0]),
        torque_proxy=res["torque_proxy"][0],
    )
    return new_state, result


def observe(state, rng=None):
    """(obs_full, obs_reduced) for a single-environment state."""
    S = _arrays_from_state(state)
    full, reduced = _observe_arrays(S, state.config, rng)
    return full[0], reduced[0]


class PoseBank:
    """Per-object bank of stable grasp states (q, obj_quat, obj_pos)."""

    def __init__(self):
        self._entries = {}
        self._unusable = set()

    def add(self, obj_id, q, obj_quat, obj_pos):
        entry = (
            np.asarray(q, dtype=np.float64).copy(),
            np.asarray(obj_quat, dtype=np.float64).copy(),
            np.asarray(obj_pos, dtype=np.float64).copy(),
        )
        self._entries.setdefault(obj_id, []).append(entry)

    def count(self, obj_id):
        return len(self._entries.get(obj_id, []))

    def counts(self):
        return {k: len(v) for k, v in sorted(self._entries.items())}

    def __len__(self):
        return sum(len(v) for v in self._entries.values())

    def flag_unusable(self, obj_id):
        self._unusable.add(obj_id)

    @property
    def unusable(self):
        return set(self._unusable)

    def usable_ids(self):
        return sorted(k for k, v in self._entries.items() if v and k not in self._unusable)

    def sample(self, obj_id, rng):
        entries = self._entries.get(obj_id)
        if not entries:
            raise ValueError(f"pose bank has no entries for object {obj_id!r}")
        k = int(rng.integers(0, len(entries)))
        q, quat, pos = entries[k]
        return q.copy(), quat.copy(), pos.copy()

    def entries(self, obj_id):
        return [tuple(a.copy() for a in e) for e in self._entries.get(obj_id, [])]

    def save(self, path, meta=None):
        payload = {
            "schema": "pose_bank/1",
            "meta": meta or {},
            "unusable": sorted(self._unusable),
            "objects": {
                oid: [
                    {"q": e[0].tolist(), "obj_quat": e[1].tolist(), "obj_pos": e[2].tolist()}
                    for e in entries
                ]
                for oid, entries in sorted(self._entries.items())
            },
        }
        with open(path, "w") as f:
            json.dump(payload, f, sort_keys=True, indent=1)
            f.write("\n")

    @classmethod
    def load(cls, path):
        with open(path) as f:
            payload = json.load(f)
        if payload.get("schema") != "pose_bank/1":
            raise ValueError(f"{path}: not a pose bank file (schema={payload.get('schema')!r})")
        bank = cls()
        for oid, entries in payload["objects"].items():
            for e in entries:
                bank.add(oid, e["q"], e["obj_quat"], e["obj_pos"])
        for oid in payload["unusable"]:
            bank.flag_unusable(oid)
        return bank


def state_from_bank_entry(spec, entry, config, goal_quat=None, rng=None):
    """Build a fresh episode state from a stored grasp, zero velocities."""
    q, obj_quat, obj_pos = entry
    n_joints = spec.contact_map.shape[0]
    if goal_quat is None:
        if rng is None:
            raise ValueError("need either goal_quat or rng")
        goal_quat = sample_uniform_so3(rng)
        while quat_angle_diff(obj_quat, goal_quat) <= config.success_angle:
            goal_quat = sample_uniform_so3(rng)
    q = np.clip(np.asarray(q, dtype=np.float64), -config.joint_limit, config.joint_limit)
    return EnvState(
        q_target=q.copy(),
        q=q.copy(),
        q_dot=np.zeros(n_joints),
        obj_quat=np.asarray(obj_quat, dtype=np.float64).copy(),
        obj_angvel=np.zeros(3),
        obj_pos=np.asarray(obj_pos, dtype=np.float64).copy(),
        obj_linvel=np.zeros(3),
        goal_quat=np.asarray(goal_quat, dtype=np.float64).copy(),
        prev_action=np.zeros(n_joints),
        step=0,
        gravity=config.gravity,
        object=spec,
        perturbation=None,
        scenario=config.scenario,
        config=config,
    )


def collect_pose_bank(
    policy_fn,
    specs,
    n_per_object=250,
    seed=0,
    config=None,
    n_envs=64,
    attempt_factor=50,
):
    """Harvest stable lift grasps by running a lift policy per object.

    ``policy_fn`` maps a full-observation batch (n_envs, obs_full) and a
    previous-action batch to an action batch.  Episodes that reach lift
    success contribute their terminal (q, obj_quat, obj_pos); collection for
    an object stops after ``n_per_object`` successes or
    ``attempt_factor * n_per_object`` finished episodes, whichever is first.
    Objects with zero successes are flagged unusable.  Returns
    (bank, report).
    """
    if config is None:
        config = EnvConfig(scenario=HAND_DOWN_TABLE, task=TASK_LIFT)
    if config.task != TASK_LIFT:
        raise ValueError("pose-bank collection runs the lift task")
    bank = PoseBank()
    report = {}
    max_attempts = attempt_factor * n_per_object
    for spec in specs:
        env = ReorientVecEnv([spec], config, n_envs, seed=seed, auto_reset=False)
        got = attempts = 0
        while got < n_per_object and attempts < max_attempts:
            obs_full, _ = env.observe()
            acts = policy_fn(obs_full, env.prev_action)
            res = env.step(acts)
            done_rows = np.flatnonzero(res["done"])
            for r in done_rows:
                attempts += 1
                if res["success"][r] and got < n_per_object:
                    bank.add(
                        spec.id, env.S["q"][r], env.S["obj_quat"][r], env.S["obj_pos"][r]
                    )
                    got += 1
            if len(done_rows):
                env.reset_rows(done_rows)
        if got == 0:
            bank.flag_unusable(spec.id)
        report[spec.id] = {"entries": got, "attempts": attempts, "usable": got > 0}
    return bank, report


def replay_check(bank, specs, config=None, steps=30, seed=0):
    """Verify stored grasps persist: restore, step zero actions at g = 0.

    A grasp passes when the object never drops and its height gap stays
    below the lift threshold for ``steps`` steps.  Returns the fraction of
    checked entries that pass.
    """
    if config is None:
        config = EnvConfig(scenario=HAND_DOWN_AIR, task=TASK_LIFT, gravity=0.0)
    by_id = {s.id: s for s in specs}
    gen = _env_stream(seed, "replay")
    total = passed = 0
    for oid in bank.usable_ids():
        spec = by_id.get(oid)
        if spec is None:
            continue
        for entry in bank.entries(oid):
            total += 1
            state = state_from_bank_entry(spec, entry, config, rng=gen)
            ok = True
            zero = np.zeros(spec.contact_map.shape[0])
            for _ in range(steps):
                state, res = step(state, zero)
                if res.dropped or max(-state.obj_pos[2], 0.0) >= config.lift_height:
                    ok = False
                    break
                if res.done:
                    break
            passed += ok
    return passed / total if total else 0.0
