"""Experiment orchestration: training loops, artifacts, and resume.

Every pipeline writes three kinds of artifact into its output directory:
schema-versioned metrics JSONL (first row is a header embedding the config
hash, seed, and package version), a rolling full-fidelity training-state
checkpoint, and a final lightweight policy checkpoint.  A training state
captures parameters, both optimizer moments, every environment state array,
all RNG states, recurrent hiddens, and in-flight episode accumulators, so a
killed run resumed from its last checkpoint reproduces the uninterrupted
run byte for byte.
"""

import dataclasses
import json
import os
from dataclasses import dataclass

import numpy as np

from . import __version__
from . import env as E
from . import rng as rngmod
from . import schedules
from .checkpoint import load_checkpoint, save_checkpoint
from .config import canonical_text, hash_config
from .distill import dagger_iteration, probe_success
from .evaluate import cross_eval, evaluate
from .metrics import MetricsWriter, read_metrics, truncate_to
from .nets import GruActor, GruCritic, MlpActor, MlpCritic
from .objects import generate_object_set, load_object_set, save_object_set
from .optim import Adam
from .ppo import PpoConfig, collect_rollouts, ppo_update

TRAIN_STATE_FILE = "train_state.ckpt"
POLICY_FILE = "policy.ckpt"
METRICS_FILE = "metrics.jsonl"
SUMMARY_FILE = "summary.json"

# per-replica fields: two runs differing only here are the *same* experiment,
# so they share a config hash (the seed is embedded beside the hash instead)
HASH_EXCLUDE = ("seed", "run_name", "out_dir", "out", "objects", "pose_bank",
                "checkpoint", "teacher")


def run_hash(cfg):
    return hash_config(cfg, exclude=HASH_EXCLUDE)


class MissingArtifactError(FileNotFoundError):
    """A referenced checkpoint / pose bank / object set does not exist."""


@dataclass
class RunConfig:
    """Flat, file-loadable description of one experiment run."""

    run_name: str = "run"
    out_dir: str = "runs/run"
    seed: int = 0
    # environment
    scenario: str = E.HAND_UP
    task: str = E.TASK_REORIENT
    init_mode: str = E.INIT_DEFAULT
    episode_len: int = 300
    randomize: bool = False
    gravity: float = E.GRAVITY_DEFAULT
    g_curriculum: bool = False
    objects: str = ""
    split: str = "train"
    pose_bank: str = ""
    # policy
    obs: str = "full"
    arch: str = "mlp"
    hidden: str = "64,64"
    gru_size: int = 64
    log_std_init: float = -1.0
    # optimization
    n_envs: int = 256
    iterations: int = 500
    rollout_steps: int = 8
    gamma: float = 0.99
    lam: float = 0.95
    clip_ratio: float = 0.1
    epochs: int = 8
    num_batches: int = 5
    value_loss_coeff: float = 5e-4
    entropy_coeff: float = 0.0
    actor_lr: float = 3e-4
    critic_lr: float = 1e-3
    # distillation
    teacher: str = ""
    distill_lr: float = 3e-4
    probe_episodes: int = 32
    report_interval: int = 50
    # pose-bank construction
    bank_entries: int = 100
    bank_attempt_factor: int = 50
    checkpoint: str = ""
    # evaluation
    eval_episodes: int = 100
    eval_seeds: int = 3
    criterion: str = "state"
    # bookkeeping
    log_interval: int = 10
    checkpoint_interval: int = 100

    def __post_init__(self):
        if self.obs not in ("full", "reduced"):
            raise ValueError(f"obs must be 'full' or 'reduced', got {self.obs!r}")
        if self.arch not in ("mlp", "rnn"):
            raise ValueError(f"arch must be 'mlp' or 'rnn', got {self.arch!r}")
        if self.log_interval < 1:
            raise ValueError("log_interval must be at least 1")
        if self.checkpoint_interval % self.log_interval != 0:
            raise ValueError(
                "checkpoint_interval must be a multiple of log_interval "
                "(checkpoints are cut at metrics-row boundaries)")

    def hidden_sizes(self):
        return tuple(int(s) for s in self.hidden.split(",") if s.strip())

    def ppo(self):
        return PpoConfig(
            gamma=self.gamma, lam=self.lam, clip_ratio=self.clip_ratio,
            epochs=self.epochs, num_batches=self.num_batches,
            value_loss_coeff=self.value_loss_coeff,
            entropy_coeff=self.entropy_coeff, actor_lr=self.actor_lr,
            critic_lr=self.critic_lr, n_envs=self.n_envs,
            rollout_steps=self.rollout_steps, episode_len=self.episode_len)


def artifact_meta(cfg):
    return {
        "config_hash": run_hash(cfg),
        "seed": cfg.seed,
        "version": __version__,
    }


@dataclass
class GenObjectsConfig:
    family: str = "EgadLike"
    n_base: int = 8
    variants: int = 4
    holdout_base: int = 0  # 0 picks the family default (n_base // 4, min 1)
    seed: int = 0
    out: str = "objects.json"


def gen_objects(cfg):
    """Generate and save a procedural object set."""
    n_hold = cfg.holdout_base if cfg.holdout_base > 0 else None
    obj_set = generate_object_set(cfg.family, cfg.n_base, cfg.variants,
                                  cfg.seed, n_holdout_base=n_hold)
    out_dir = os.path.dirname(cfg.out)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
    save_object_set(obj_set, cfg.out, meta=artifact_meta(cfg))
    return {
        "out": cfg.out,
        "name": obj_set.name,
        "train": len(obj_set.train),
        "holdout": len(obj_set.holdout),
        **artifact_meta(cfg),
    }


def _require(path, what):
    if not path:
        raise MissingArtifactError(f"no {what} was configured")
    if not os.path.exists(path):
        raise MissingArtifactError(f"{what} not found: {path}")
    return path


def load_specs(cfg):
    obj_set = load_object_set(_require(cfg.objects, "object set"))
    if cfg.split == "train":
        return obj_set.train, obj_set
    if cfg.split == "holdout":
        return obj_set.holdout, obj_set
    if cfg.split == "all":
        return list(obj_set.train) + list(obj_set.holdout), obj_set
    raise ValueError(f"unknown object split {cfg.split!r}")


def env_config(cfg):
    gravity = schedules.GRAVITY_INITIAL if cfg.g_curriculum else cfg.gravity
    return E.EnvConfig(scenario=cfg.scenario, task=cfg.task,
                       init_mode=cfg.init_mode, episode_len=cfg.episode_len,
                       randomize=cfg.randomize, gravity=gravity)


def _load_bank(cfg):
    if cfg.init_mode != E.INIT_POSE_BANK:
        return None
    return E.PoseBank.load(_require(cfg.pose_bank, "pose bank"))


def build_nets(cfg, obs_dim, act_dim):
    r = rngmod.stream(cfg.seed, "init")
    hidden = cfg.hidden_sizes()
    if cfg.arch == "mlp":
        actor = MlpActor(obs_dim, act_dim, hidden, r,
                         log_std_init=cfg.log_std_init)
        critic = MlpCritic(obs_dim, act_dim, hidden, r)
    else:
        actor = GruActor(obs_dim, act_dim, hidden, cfg.gru_size, r,
                         log_std_init=cfg.log_std_init)
        critic = GruCritic(obs_dim, act_dim, hidden, cfg.gru_size, r)
    return actor, critic


def _net_meta(cfg, obs_dim, act_dim):
    return {
        "arch": cfg.arch,
        "obs": cfg.obs,
        "obs_dim": obs_dim,
        "act_dim": act_dim,
        "hidden": list(cfg.hidden_sizes()),
        "gru_size": cfg.gru_size,
        "log_std_init": cfg.log_std_init,
    }


def save_policy(path, actor, net_meta, cfg, extra_meta=None):
    arrays = {f"actor/{k}": v for k, v in actor.params.arrays().items()}
    meta = {"kind": "policy", "net": net_meta, **artifact_meta(cfg)}
    if extra_meta:
        meta.update(extra_meta)
    save_checkpoint(path, arrays, meta, run_hash(cfg))


def load_policy(path):
    """Rebuild an actor from a policy or training-state checkpoint."""
    arrays, meta, cfg_hash = load_checkpoint(_require(path, "checkpoint"))
    net = meta.get("net")
    if net is None:
        raise ValueError(f"{path}: checkpoint carries no network description")
    r = rngmod.stream(0, "load")  # weights are overwritten below
    if net["arch"] == "mlp":
        actor = MlpActor(net["obs_dim"], net["act_dim"], tuple(net["hidden"]),
                         r, log_std_init=net["log_std_init"])
    else:
        actor = GruActor(net["obs_dim"], net["act_dim"], tuple(net["hidden"]),
                         net["gru_size"], r, log_std_init=net["log_std_init"])
    actor.params.load_arrays(
        {k[len("actor/"):]: v for k, v in arrays.items()
         if k.startswith("actor/")})
    return actor, meta, cfg_hash


def _bool_safe(arrays):
    return {k: (v.astype(np.int64) if v.dtype == np.bool_ else v)
            for k, v in arrays.items()}


class _TrainLoop:
    """Shared mechanics for PPO training runs (teacher, lift, downair)."""

    def __init__(self, cfg):
        self.cfg = cfg
        self.specs, self.obj_set = load_specs(cfg)
        self.bank = _load_bank(cfg)
        self.env_cfg = env_config(cfg)
        self.env = E.ReorientVecEnv(self.specs, self.env_cfg, cfg.n_envs,
                                    seed=cfg.seed, pose_bank=self.bank)
        full, reduced = E.obs_dims(self.env.n_joints)
        self.obs_dim = full if cfg.obs == "full" else reduced
        self.actor, self.critic = build_nets(cfg, self.obs_dim,
                                             self.env.n_joints)
        self.actor_opt = Adam(self.actor.params, cfg.actor_lr)
        self.critic_opt = Adam(self.critic.params, cfg.critic_lr)
        self.roll_rng = rngmod.stream(cfg.seed, "rollout")
        self.upd_rng = rngmod.stream(cfg.seed, "update")
        self.h_actor = None
        self.h_critic = None
        self.iteration = 0
        self.curriculum = (schedules.CurriculumState()
                           if cfg.g_curriculum else None)
        # in-flight accumulators: per-env return, episode windows, and the
        # success tally the curriculum trigger consumes
        self.ret_acc = np.zeros(cfg.n_envs)
        self.window_returns = []
        self.window_succ = 0
        self.window_eps = 0
        self.cur_succ = 0
        self.cur_eps = 0
        self.last_success = None
        self.last_return = None
        os.makedirs(cfg.out_dir, exist_ok=True)

    # -- persistence ------------------------------------------------------

    def _paths(self):
        d = self.cfg.out_dir
        return (os.path.join(d, METRICS_FILE),
                os.path.join(d, TRAIN_STATE_FILE),
                os.path.join(d, POLICY_FILE))

    def save_state(self, path):
        arrays = {}
        for k, v in self.actor.params.arrays().items():
            arrays[f"actor/{k}"] = v
        for k, v in self.critic.params.arrays().items():
            arrays[f"critic/{k}"] = v
        for k, v in self.actor_opt.state_arrays().items():
            arrays[f"opt_actor/{k}"] = v
        for k, v in self.critic_opt.state_arrays().items():
            arrays[f"opt_critic/{k}"] = v
        for k, v in _bool_safe(self.env.state_arrays()).items():
            arrays[f"env/{k}"] = v
        arrays["loop/ret_acc"] = self.ret_acc
        if self.h_actor is not None:
            arrays["loop/h_actor"] = self.h_actor
        if self.h_critic is not None:
            arrays["loop/h_critic"] = self.h_critic
        meta = {
            "kind": "train_state",
            "iteration": self.iteration,
            "gravity": self.env.gravity,
            "rng": {
                "env": self.env.rng_states(),
                "rollout": self.roll_rng.bit_generator.state,
                "update": self.upd_rng.bit_generator.state,
            },
            "counters": {
                "cur_succ": self.cur_succ, "cur_eps": self.cur_eps,
                "last_success": self.last_success,
                "last_return": self.last_return,
            },
            "curriculum": (None if self.curriculum is None else {
                "g": self.curriculum.g,
                "window": list(self.curriculum.window),
                "iters_since_change": self.curriculum.iters_since_change,
            }),
            "net": _net_meta(self.cfg, self.obs_dim, self.env.n_joints),
            "config_text": canonical_text(self.cfg),
            **artifact_meta(self.cfg),
        }
        save_checkpoint(path, arrays, meta, run_hash(self.cfg))

    def restore_state(self, path):
        arrays, meta, _ = load_checkpoint(path, expected_hash=run_hash(self.cfg))
        if meta.get("kind") != "train_state":
            raise ValueError(f"{path}: not a training-state checkpoint")
        split = {"actor": {}, "critic": {}, "opt_actor": {}, "opt_critic": {},
                 "env": {}, "loop": {}}
        for k, v in arrays.items():
            group, name = k.split("/", 1)
            split[group][name] = v
        self.actor.params.load_arrays(split["actor"])
        self.critic.params.load_arrays(split["critic"])
        self.actor_opt.load_state_arrays(split["opt_actor"])
        self.critic_opt.load_state_arrays(split["opt_critic"])
        self.env.load_state_arrays(split["env"])
        self.env.set_rng_states(meta["rng"]["env"])
        self.env.set_gravity(meta["gravity"])
        self.roll_rng.bit_generator.state = meta["rng"]["rollout"]
        self.upd_rng.bit_generator.state = meta["rng"]["update"]
        self.ret_acc = split["loop"]["ret_acc"]
        self.h_actor = split["loop"].get("h_actor")
        self.h_critic = split["loop"].get("h_critic")
        self.iteration = int(meta["iteration"])
        c = meta["counters"]
        self.cur_succ = int(c["cur_succ"])
        self.cur_eps = int(c["cur_eps"])
        self.last_success = c["last_success"]
        self.last_return = c["last_return"]
        if self.curriculum is not None:
            cur = meta["curriculum"]
            self.curriculum.g = float(cur["g"])
            self.curriculum.window = [float(w) for w in cur["window"]]
            self.curriculum.iters_since_change = int(cur["iters_since_change"])

    # -- episode bookkeeping ----------------------------------------------

    def _absorb(self, buf):
        for t in range(buf.n_steps):
            self.ret_acc += buf.rewards[:, t]
            ended = buf.dones[:, t]
            if np.any(ended):
                rows = np.flatnonzero(ended)
                self.window_returns.extend(self.ret_acc[rows].tolist())
                n_succ = int(buf.successes[rows, t].sum())
                self.window_succ += n_succ
                self.window_eps += len(rows)
                self.cur_succ += n_succ
                self.cur_eps += len(rows)
                self.ret_acc[rows] = 0.0

    def _curriculum_eval(self):
        w = self.cur_succ / self.cur_eps if self.cur_eps else 0.0
        self.cur_succ = 0
        self.cur_eps = 0
        return w

    # -- main loop ---------------------------------------------------------

    def run(self, resume=False, stop_after=None):
        """Train to cfg.iterations; `stop_after` simulates an interruption
        (stop early without writing the final policy/summary)."""
        cfg = self.cfg
        metrics_path, state_path, policy_path = self._paths()
        if resume:
            self.restore_state(_require(state_path, "training-state checkpoint"))
            truncate_to(metrics_path, "iteration", self.iteration)
            writer = MetricsWriter(metrics_path, append=True)
        else:
            writer = MetricsWriter(metrics_path)
            writer.write(kind="header", run=cfg.run_name, **artifact_meta(cfg))
        ppo_cfg = cfg.ppo()
        with writer:
            while self.iteration < cfg.iterations:
                if stop_after is not None and self.iteration >= stop_after:
                    break
                it = self.iteration + 1
                if self.curriculum is not None:
                    before = self.curriculum.g
                    schedules.curriculum_step(self.curriculum, it,
                                              self._curriculum_eval)
                    if self.curriculum.g != before:
                        self.env.set_gravity(self.curriculum.g)
                buf, self.h_actor, self.h_critic = collect_rollouts(
                    self.env, self.actor, self.critic, cfg.rollout_steps,
                    self.roll_rng, obs_kind=cfg.obs,
                    h_actor=self.h_actor, h_critic=self.h_critic)
                stats = ppo_update(self.actor, self.critic, self.actor_opt,
                                   self.critic_opt, buf, ppo_cfg, self.upd_rng)
                self._absorb(buf)
                self.iteration = it
                if it % cfg.log_interval == 0 or it == cfg.iterations:
                    if self.window_eps:
                        self.last_success = self.window_succ / self.window_eps
                        self.last_return = float(np.mean(self.window_returns))
                    writer.write(
                        iteration=it,
                        env_steps=it * cfg.n_envs * cfg.rollout_steps,
                        success_rate=self.last_success,
                        mean_return=self.last_return,
                        episodes=self.window_eps,
                        policy_loss=stats.policy_loss,
                        value_loss=stats.value_loss,
                        approx_kl=stats.approx_kl,
                        clip_fraction=stats.clip_fraction,
                        gravity=self.env.gravity,
                    )
                    self.window_returns = []
                    self.window_succ = 0
                    self.window_eps = 0
                if it % cfg.checkpoint_interval == 0 or it == cfg.iterations:
                    self.save_state(state_path)
        if self.iteration < cfg.iterations:
            return {"run": cfg.run_name, "interrupted_at": self.iteration}
        save_policy(policy_path, self.actor,
                    _net_meta(cfg, self.obs_dim, self.env.n_joints), cfg,
                    extra_meta={"iteration": self.iteration})
        summary = {
            "run": cfg.run_name,
            "iterations": self.iteration,
            "env_steps": self.iteration * cfg.n_envs * cfg.rollout_steps,
            "final_success_rate": self.last_success,
            "final_mean_return": self.last_return,
            "final_gravity": self.env.gravity,
            "policy": policy_path,
            "metrics": metrics_path,
            **artifact_meta(cfg),
        }
        _write_json(os.path.join(cfg.out_dir, SUMMARY_FILE), summary)
        return summary


def _write_json(path, payload):
    with open(path, "w") as f:
        json.dump(payload, f, sort_keys=True, indent=1)
        f.write("\n")


def train(cfg, resume=False, stop_after=None):
    """Run (or resume) a PPO training pipeline described by `cfg`."""
    return _TrainLoop(cfg).run(resume=resume, stop_after=stop_after)


def build_posebank(cfg):
    """Harvest lift grasps with a trained lift policy into a pose bank."""
    actor, meta, _ = load_policy(_require(cfg.checkpoint, "lift policy checkpoint"))
    if meta["net"]["obs"] != "full":
        raise ValueError("pose-bank collection expects a full-observation policy")
    specs, _ = load_specs(cfg)
    lift_cfg = E.EnvConfig(scenario=E.HAND_DOWN_TABLE, task=E.TASK_LIFT,
                           episode_len=cfg.episode_len,
                           randomize=cfg.randomize)

    def policy_fn(obs_full, prev_action):
        return actor.forward(obs_full, prev_action).mean

    bank, report = E.collect_pose_bank(
        policy_fn, specs, n_per_object=cfg.bank_entries, seed=cfg.seed,
        config=lift_cfg, n_envs=min(cfg.n_envs, 64),
        attempt_factor=cfg.bank_attempt_factor)
    os.makedirs(cfg.out_dir, exist_ok=True)
    bank_path = os.path.join(cfg.out_dir, "pose_bank.json")
    bank.save(bank_path, meta=artifact_meta(cfg))
    summary = {
        "bank": bank_path,
        "per_object": report,
        "usable": bank.usable_ids(),
        "unusable": sorted(bank.unusable),
        "entries": len(bank),
        **artifact_meta(cfg),
    }
    _write_json(os.path.join(cfg.out_dir, "posebank_summary.json"), summary)
    return summary


def distill_student(cfg, resume=False, stop_after=None):
    """Distill a full-observation teacher into a reduced-observation student."""
    teacher, tmeta, _ = load_policy(_require(cfg.teacher, "teacher checkpoint"))
    if tmeta["net"]["obs"] != "full":
        raise ValueError("distillation teacher must use full observations")
    specs, _ = load_specs(cfg)
    bank = _load_bank(cfg)
    e_cfg = env_config(cfg)
    env = E.ReorientVecEnv(specs, e_cfg, cfg.n_envs, seed=cfg.seed,
                           pose_bank=bank)
    full, reduced = E.obs_dims(env.n_joints)
    student_cfg = dataclasses.replace(cfg, obs="reduced")
    student, _ = build_nets(student_cfg, reduced, env.n_joints)
    opt = Adam(student.params, cfg.distill_lr)
    roll_rng = rngmod.stream(cfg.seed, "distill")
    h = None
    iteration = 0
    os.makedirs(cfg.out_dir, exist_ok=True)
    metrics_path = os.path.join(cfg.out_dir, METRICS_FILE)
    state_path = os.path.join(cfg.out_dir, TRAIN_STATE_FILE)
    policy_path = os.path.join(cfg.out_dir, POLICY_FILE)
    last_kl = None
    last_success = None

    if resume:
        arrays, meta, _ = load_checkpoint(
            _require(state_path, "distillation-state checkpoint"),
            expected_hash=run_hash(cfg))
        if meta.get("kind") != "distill_state":
            raise ValueError(f"{state_path}: not a distillation-state checkpoint")
        student.params.load_arrays(
            {k[len("student/"):]: v for k, v in arrays.items()
             if k.startswith("student/")})
        opt.load_state_arrays(
            {k[len("opt/"):]: v for k, v in arrays.items()
             if k.startswith("opt/")})
        env.load_state_arrays(
            {k[len("env/"):]: v for k, v in arrays.items()
             if k.startswith("env/")})
        env.set_rng_states(meta["rng"]["env"])
        env.set_gravity(meta["gravity"])
        roll_rng.bit_generator.state = meta["rng"]["rollout"]
        h = arrays.get("loop/h_student")
        iteration = int(meta["iteration"])
        last_kl = meta["counters"]["last_kl"]
        last_success = meta["counters"]["last_success"]
        truncate_to(metrics_path, "iteration", iteration)
        writer = MetricsWriter(metrics_path, append=True)
    else:
        writer = MetricsWriter(metrics_path)
        writer.write(kind="header", run=cfg.run_name, **artifact_meta(cfg))

    def save_state():
        arrays = {f"student/{k}": v for k, v in student.params.arrays().items()}
        arrays.update({f"opt/{k}": v for k, v in opt.state_arrays().items()})
        arrays.update({f"env/{k}": v
                       for k, v in _bool_safe(env.state_arrays()).items()})
        if h is not None:
            arrays["loop/h_student"] = h
        meta = {
            "kind": "distill_state",
            "iteration": iteration,
            "gravity": env.gravity,
            "rng": {"env": env.rng_states(),
                    "rollout": roll_rng.bit_generator.state},
            "counters": {"last_kl": last_kl, "last_success": last_success},
            "net": _net_meta(student_cfg, reduced, env.n_joints),
            "config_text": canonical_text(cfg),
            **artifact_meta(cfg),
        }
        save_checkpoint(state_path, arrays, meta, run_hash(cfg))

    with writer:
        while iteration < cfg.iterations:
            if stop_after is not None and iteration >= stop_after:
                break
            it = iteration + 1
            kl, h = dagger_iteration(teacher, student, env, opt, roll_rng,
                                     n_steps=cfg.rollout_steps, h_student=h)
            iteration = it
            last_kl = kl
            if it % cfg.log_interval == 0 or it == cfg.iterations:
                if it % cfg.report_interval == 0 or it == cfg.iterations:
                    last_success = probe_success(
                        student, specs, e_cfg,
                        n_episodes=cfg.probe_episodes, seed=cfg.seed + it,
                        pose_bank=bank)
                writer.write(
                    iteration=it,
                    env_steps=it * cfg.n_envs * cfg.rollout_steps,
                    kl=kl,
                    success_rate=last_success,
                    gravity=env.gravity,
                )
            if it % cfg.checkpoint_interval == 0 or it == cfg.iterations:
                save_state()
    if iteration < cfg.iterations:
        return {"run": cfg.run_name, "interrupted_at": iteration}
    save_policy(policy_path, student,
                _net_meta(student_cfg, reduced, env.n_joints), cfg,
                extra_meta={"iteration": iteration, "teacher": cfg.teacher})
    summary = {
        "run": cfg.run_name,
        "iterations": iteration,
        "final_kl": last_kl,
        "final_success_rate": last_success,
        "policy": policy_path,
        "metrics": metrics_path,
        "teacher": cfg.teacher,
        **artifact_meta(cfg),
    }
    _write_json(os.path.join(cfg.out_dir, SUMMARY_FILE), summary)
    return summary


def evaluate_policy(cfg, cross_set=None):
    """Evaluate a policy checkpoint; optionally zero-shot on a foreign set.

    `cross_set`: path to a second object-set JSON for xeval; the policy's
    own configured set supplies the train label.
    """
    actor, meta, _ = load_policy(_require(cfg.checkpoint, "policy checkpoint"))
    bank = _load_bank(cfg)
    e_cfg = env_config(cfg)
    if cross_set is not None:
        foreign = load_object_set(_require(cross_set, "object set"))
        specs = foreign.holdout if cfg.split == "holdout" else foreign.train
        own_name = os.path.basename(cfg.objects) if cfg.objects else "unknown"
        report = cross_eval(actor, own_name,
                            f"{foreign.name}-{cfg.split}", specs, e_cfg,
                            episodes_per_object=cfg.eval_episodes,
                            seeds=cfg.eval_seeds, criterion=cfg.criterion,
                            pose_bank=bank, base_seed=cfg.seed)
        out_name = "xeval_report.json"
    else:
        specs, obj_set = load_specs(cfg)
        report = evaluate(actor, specs, e_cfg,
                          episodes_per_object=cfg.eval_episodes,
                          seeds=cfg.eval_seeds, criterion=cfg.criterion,
                          pose_bank=bank, base_seed=cfg.seed,
                          set_name=f"{obj_set.name}-{cfg.split}")
        out_name = "eval_report.json"
    os.makedirs(cfg.out_dir, exist_ok=True)
    payload = {**report.to_dict(), **artifact_meta(cfg),
               "checkpoint": cfg.checkpoint}
    path = os.path.join(cfg.out_dir, out_name)
    _write_json(path, payload)
    return report, path


def aggregate_reports(paths, force=False):
    """Merge eval-report JSONs into one summary; refuses mixed configs.

    Reports written under different config hashes describe different
    experiments; aggregating them is almost always an error, so it
    requires `force`.
    """
    if not paths:
        raise ValueError("no reports to aggregate")
    reports = []
    for p in paths:
        with open(_require(p, "eval report")) as f:
            reports.append(json.load(f))
    hashes = {r.get("config_hash") for r in reports}
    if len(hashes) > 1 and not force:
        raise ValueError(
            f"refusing to aggregate reports with mismatched config hashes "
            f"({len(hashes)} distinct); pass force to override")
    means = [r["success_mean"] for r in reports]
    return {
        "reports": [str(p) for p in paths],
        "config_hashes": sorted(h for h in hashes if h),
        "success_means": means,
        "grand_mean": float(np.mean(means)),
        "grand_std": float(np.std(means, ddof=1)) if len(means) > 1 else 0.0,
        "version": __version__,
    }
