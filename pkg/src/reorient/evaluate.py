"""Batched policy evaluation with state- and vision-based success criteria.

Every object is evaluated for a fixed number of episodes under each seed;
episodes run greedily (mean actions) so a report is a pure function of
(policy parameters, object set, config, seeds).  The state criterion uses
the environment's own success signal (angle within 0.1 rad).  The vision
criterion follows the looser point-cloud test: an episode succeeds once
its angle error is within 0.2 rad OR the Chamfer distance between the
unit-sphere-scaled current and goal clouds is within 0.01, checked at
every step.
"""

from dataclasses import dataclass

import numpy as np

from . import env as E
from . import rng as rngmod
from .cloud import PointCloud, chamfer, scale_to_unit_sphere
from .objects import DEFAULT_JOINTS
from .rotation import quat_rotate

CRITERION_STATE = "state"
CRITERION_VISION = "vision"
STATE_ANGLE_THRESHOLD = 0.1
VISION_ANGLE_THRESHOLD = 0.2
VISION_CHAMFER_THRESHOLD = 0.01
DEFAULT_EPISODES_PER_OBJECT = 100
DEFAULT_SEEDS = 3
# per-step chamfer checks use a sparse, deterministic subsample of each
# object's stored surface points; current and goal clouds share it
# point-for-point
EVAL_CLOUD_POINTS = 64


@dataclass
class EvalReport:
    criterion: str
    thresholds: dict
    episodes_per_object: int
    seeds: list
    per_object: dict                 # object id -> success rate over all seeds
    episode_counts: dict             # object id -> episodes actually run
    per_seed: list                   # overall success rate per seed
    success_mean: float
    success_std: float               # across seeds, not episodes
    drop_rate: float
    chamfer_stats: dict | None = None
    train_set: str | None = None
    test_set: str | None = None

    def __post_init__(self):
        for r in list(self.per_object.values()) + list(self.per_seed):
            if not 0.0 <= r <= 1.0:
                raise ValueError(f"success rate {r} outside [0, 1]")

    def to_dict(self):
        return {
            "criterion": self.criterion,
            "thresholds": dict(self.thresholds),
            "episodes_per_object": self.episodes_per_object,
            "seeds": list(self.seeds),
            "per_object": dict(self.per_object),
            "episode_counts": dict(self.episode_counts),
            "per_seed": list(self.per_seed),
            "success_mean": self.success_mean,
            "success_std": self.success_std,
            "drop_rate": self.drop_rate,
            "chamfer_stats": self.chamfer_stats,
            "train_set": self.train_set,
            "test_set": self.test_set,
        }


class RandomPolicy:
    """Uniform actions over the rate-limit box; the Monte-Carlo baseline."""

    recurrent = False
    obs_dim = None

    def __init__(self, seed, act_dim=DEFAULT_JOINTS, scale=E.ACTION_MAX):
        self.act_dim = act_dim
        self.scale = float(scale)
        self._rng = rngmod.stream(seed, "random-policy")

    def initial_hidden(self, n):
        return None

    def forward(self, obs, prev_action, hidden=None):
        from .nets import PolicyOutput

        a = self._rng.uniform(-self.scale, self.scale,
                              size=(obs.shape[0], self.act_dim))
        return PolicyOutput(mean=a, log_std=np.zeros(self.act_dim))


def _obs_pick(policy, n_joints, obs_kind):
    if obs_kind is not None:
        if obs_kind not in ("full", "reduced"):
            raise ValueError(f"obs_kind must be 'full' or 'reduced', got {obs_kind!r}")
        return 0 if obs_kind == "full" else 1
    full, reduced = E.obs_dims(n_joints)
    dim = getattr(policy, "obs_dim", None)
    if dim is None:
        return 0
    if dim == full:
        return 0
    if dim == reduced:
        return 1
    raise ValueError(
        f"policy obs dim {dim} matches neither full ({full}) nor reduced "
        f"({reduced}) observations")


def _scaled_base_cloud(spec):
    pts = spec.surface_points
    if pts.shape[0] > EVAL_CLOUD_POINTS:
        stride = pts.shape[0] // EVAL_CLOUD_POINTS
        pts = pts[::stride][:EVAL_CLOUD_POINTS]
    return scale_to_unit_sphere(PointCloud(pts)).points


def _run_object(policy, spec, config, n_episodes, seed, criterion,
                pose_bank, pick):
    """All episodes for one (object, seed) pair, stepped as one batch."""
    venv = E.ReorientVecEnv([spec], config, n_envs=n_episodes, seed=seed,
                            pose_bank=pose_bank, auto_reset=False)
    n = n_episodes
    h = policy.initial_hidden(n) if policy.recurrent else None
    done = np.zeros(n, dtype=bool)
    succ = np.zeros(n, dtype=bool)
    dropped = np.zeros(n, dtype=bool)
    vision_hit = np.zeros(n, dtype=bool)
    best_dc = np.full(n, np.inf)
    if criterion == CRITERION_VISION:
        base = _scaled_base_cloud(spec)
        goal_clouds = [quat_rotate(venv.S["goal_quat"][i], base) for i in range(n)]

    for _ in range(config.episode_len):
        obs = venv.observe()[pick]
        prev_a = venv.prev_action
        if hasattr(policy, "act_env"):
            action = policy.act_env(venv, obs, prev_a, h)
        elif policy.recurrent:
            out = policy.forward(obs, prev_a, h)
            h = out.hidden
            action = out.mean
        else:
            action = policy.forward(obs, prev_a).mean
        res = venv.step(action)
        alive = ~done
        succ |= res["success"] & alive
        dropped |= res["dropped"] & alive
        if criterion == CRITERION_VISION:
            ang = res["task_error"]
            for i in np.flatnonzero(alive):
                cur = quat_rotate(venv.S["obj_quat"][i], base)
                dc = chamfer(cur, goal_clouds[i])
                best_dc[i] = min(best_dc[i], dc)
                if ang[i] <= VISION_ANGLE_THRESHOLD or dc <= VISION_CHAMFER_THRESHOLD:
                    vision_hit[i] = True
        done |= res["done"]
        if done.all():
            break

    if criterion == CRITERION_VISION:
        return vision_hit, dropped, best_dc
    return succ, dropped, best_dc


def evaluate(policy, specs, config, episodes_per_object=DEFAULT_EPISODES_PER_OBJECT,
             seeds=DEFAULT_SEEDS, criterion=CRITERION_STATE, pose_bank=None,
             base_seed=0, obs_kind=None, set_name=None):
    """Evaluate `policy` on every object in `specs`; see EvalReport.

    `seeds` may be an int (seeds base_seed..base_seed+n-1) or an explicit
    list.  Episodes use mean actions, so repeated calls are bit-identical.
    Objects a pose bank cannot initialize count as complete failures.
    """
    if episodes_per_object < 1:
        raise ValueError("episodes_per_object must be at least 1")
    if criterion not in (CRITERION_STATE, CRITERION_VISION):
        raise ValueError(f"unknown criterion {criterion!r}")
    if not specs:
        raise ValueError("no objects to evaluate")
    seed_list = (list(range(base_seed, base_seed + seeds))
                 if isinstance(seeds, int) else [int(s) for s in seeds])
    if not seed_list:
        raise ValueError("need at least one seed")
    pick = _obs_pick(policy, specs[0].contact_map.shape[0], obs_kind)

    succ_count = {s.id: 0 for s in specs}
    ep_count = {s.id: 0 for s in specs}
    per_seed = []
    drops = 0
    total = 0
    dcs = []
    for sd in seed_list:
        seed_succ = 0
        seed_total = 0
        for spec in specs:
            bankable = (pose_bank is None
                        or spec.id in pose_bank.usable_ids())
            if bankable:
                s, d, dc = _run_object(policy, spec, config,
                                       episodes_per_object, sd, criterion,
                                       pose_bank, pick)
            else:
                # no stored grasp ever succeeded for this object: the
                # pipeline cannot even start an episode, score it zero
                s = np.zeros(episodes_per_object, dtype=bool)
                d = np.ones(episodes_per_object, dtype=bool)
                dc = np.full(episodes_per_object, np.inf)
            succ_count[spec.id] += int(s.sum())
            ep_count[spec.id] += len(s)
            seed_succ += int(s.sum())
            seed_total += len(s)
            drops += int(d.sum())
            total += len(s)
            dcs.append(dc[np.isfinite(dc)])
        per_seed.append(seed_succ / seed_total)

    per_object = {oid: succ_count[oid] / ep_count[oid] for oid in succ_count}
    mean = float(np.mean(per_seed))
    std = float(np.std(per_seed, ddof=1)) if len(per_seed) > 1 else 0.0
    chamfer_stats = None
    if criterion == CRITERION_VISION:
        flat = np.concatenate(dcs) if dcs else np.array([])
        chamfer_stats = {
            "threshold": VISION_CHAMFER_THRESHOLD,
            "best_mean": float(flat.mean()) if flat.size else None,
            "best_min": float(flat.min()) if flat.size else None,
        }
    thresholds = ({"angle": STATE_ANGLE_THRESHOLD}
                  if criterion == CRITERION_STATE
                  else {"angle": VISION_ANGLE_THRESHOLD,
                        "chamfer": VISION_CHAMFER_THRESHOLD})
    return EvalReport(
        criterion=criterion,
        thresholds=thresholds,
        episodes_per_object=episodes_per_object,
        seeds=seed_list,
        per_object=per_object,
        episode_counts=ep_count,
        per_seed=per_seed,
        success_mean=mean,
        success_std=std,
        drop_rate=drops / total,
        chamfer_stats=chamfer_stats,
        test_set=set_name,
    )


def cross_eval(policy, train_set_name, test_set_name, specs, config, **kw):
    """Zero-shot evaluation on a foreign object set, same protocol as
    `evaluate`; the report carries both set names."""
    report = evaluate(policy, specs, config, **kw)
    report.train_set = train_set_name
    report.test_set = test_set_name
    return report
