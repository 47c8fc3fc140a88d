"""Online teacher-student distillation with the student driving exploration.

Each iteration the student rolls the environments forward with its own
sampled actions while the teacher's action distribution is recorded on the
privileged (full) observation of the very same states.  The student then
takes one optimizer step on the mean KL(teacher || student) over that
rollout alone — no replay buffer, stale data is never revisited.  Recurrent
students re-forward their sequences from the hidden state snapshotted at
collection time, zeroing it wherever an episode ended.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .nets import gaussian_kl_t, gaussian_sample
from .optim import Adam

STUDENT_MLP = "mlp"
STUDENT_RNN = "rnn"
PROBE_EPISODES = 32


@dataclass
class DistillConfig:
    student_arch: str = STUDENT_RNN
    iterations: int = 500
    rollout_steps: int = 8
    lr: float = 3e-4
    report_interval: int = 50
    probe_episodes: int = PROBE_EPISODES
    teacher_checkpoint: str | None = None

    def __post_init__(self):
        if self.student_arch not in (STUDENT_MLP, STUDENT_RNN):
            raise ValueError(f"unknown student arch {self.student_arch!r}")
        if self.iterations < 1 or self.rollout_steps < 1:
            raise ValueError("iterations and rollout_steps must be at least 1")
        if self.lr <= 0:
            raise ValueError("lr must be positive")


@dataclass
class DistillStats:
    iteration: int
    kl: float
    success: float | None = None


def _collect(teacher, student, env, n_steps, rng, h_student,
             teacher_obs, student_obs):
    """Student-driven rollout; returns numpy arrays plus the carried hidden."""
    pick = {"full": 0, "reduced": 1}
    B = env.n_envs
    rec = {
        "obs": [], "prev": [], "t_mean": [], "t_log_std": [], "done": [],
    }
    if student.recurrent and h_student is None:
        h_student = student.initial_hidden(B)
    h0 = h_student.copy() if h_student is not None else None
    for _ in range(n_steps):
        both = env.observe()
        obs_s = both[pick[student_obs]]
        obs_t = both[pick[teacher_obs]]
        prev_a = env.prev_action
        if student.recurrent:
            out = student.forward(obs_s, prev_a, h_student)
            h_student = out.hidden
        else:
            out = student.forward(obs_s, prev_a)
        action = gaussian_sample(out, rng)
        t_out = teacher.forward(obs_t, prev_a)
        res = env.step(action)
        rec["obs"].append(obs_s)
        rec["prev"].append(prev_a)
        rec["t_mean"].append(t_out.mean)
        rec["t_log_std"].append(np.broadcast_to(t_out.log_std,
                                                t_out.mean.shape).copy())
        rec["done"].append(res["done"])
        if student.recurrent and np.any(res["done"]):
            h_student[res["done"]] = 0.0
    stacked = {k: np.stack(v, axis=1) for k, v in rec.items()}  # (B, T, ...)
    stacked["h0"] = h0
    return stacked, h_student


def _kl_loss_mlp(student, batch):
    x = np.concatenate([batch["obs"], batch["prev"]], axis=-1)
    B, T = x.shape[:2]
    x = x.reshape(B * T, -1)
    mean_t, log_std_t, _ = student.forward_t(x)
    kl = gaussian_kl_t(batch["t_mean"].reshape(B * T, -1),
                       batch["t_log_std"].reshape(B * T, -1),
                       mean_t, log_std_t)
    return ad.tmean(kl)


def _kl_loss_rnn(student, batch):
    x = np.concatenate([batch["obs"], batch["prev"]], axis=-1)
    B, T = x.shape[:2]
    live_prev = np.ones((B, T))
    live_prev[:, 1:] = 1.0 - batch["done"][:, :-1].astype(np.float64)
    h = ad.as_tensor(batch["h0"])
    loss = None
    for t in range(T):
        h = ad.mul(h, live_prev[:, t][:, None])
        mean_t, log_std_t, h = student.forward_t(x[:, t], h)
        kl = ad.tmean(gaussian_kl_t(batch["t_mean"][:, t],
                                    batch["t_log_std"][:, t],
                                    mean_t, log_std_t))
        loss = kl if loss is None else ad.add(loss, kl)
    return ad.mul(loss, 1.0 / T)


def dagger_iteration(teacher, student, env, opt, rng, n_steps=8,
                     h_student=None, teacher_obs="full", student_obs="reduced"):
    """One collect-and-imitate step; returns (mean KL, carried hidden).

    The loss is computed from this call's rollout only.  The teacher is
    queried but never written to.
    """
    batch, h_student = _collect(teacher, student, env, n_steps, rng,
                                h_student, teacher_obs, student_obs)
    if student.recurrent:
        loss = _kl_loss_rnn(student, batch)
    else:
        loss = _kl_loss_mlp(student, batch)
    if not np.isfinite(loss.value):
        raise RuntimeError("non-finite distillation loss; aborting")
    student.params.zero_grad()
    loss.backward()
    opt.step()
    return max(float(loss.value), 0.0), h_student


def probe_success(student, specs, config, n_episodes=PROBE_EPISODES, seed=0,
                  student_obs="reduced", pose_bank=None):
    """Success fraction over `n_episodes` greedy (mean-action) episodes."""
    from . import env as E

    venv = E.ReorientVecEnv(specs, config, n_envs=n_episodes, seed=seed,
                            auto_reset=False, pose_bank=pose_bank)
    pick = {"full": 0, "reduced": 1}[student_obs]
    h = student.initial_hidden(n_episodes) if student.recurrent else None
    done = np.zeros(n_episodes, dtype=bool)
    succ = np.zeros(n_episodes, dtype=bool)
    for _ in range(config.episode_len):
        obs = venv.observe()[pick]
        prev_a = venv.prev_action
        if student.recurrent:
            out = student.forward(obs, prev_a, h)
            h = out.hidden
        else:
            out = student.forward(obs, prev_a)
        res = venv.step(out.mean)
        succ |= res["success"] & ~done
        done |= res["done"]
        if done.all():
            break
    return float(succ.mean())


def distill(teacher, student, env, cfg, rng, probe_specs=None,
            probe_config=None, on_report=None):
    """Run `cfg.iterations` dagger iterations; returns a list of DistillStats.

    Every `report_interval` iterations (and on the last one) a stats row is
    emitted; if `probe_specs` is given the row carries a greedy success
    probe over `cfg.probe_episodes` fresh episodes.
    """
    opt = Adam(student.params, cfg.lr)
    h = None
    history = []
    for it in range(1, cfg.iterations + 1):
        kl, h = dagger_iteration(teacher, student, env, opt, rng,
                                 n_steps=cfg.rollout_steps, h_student=h)
        if it % cfg.report_interval == 0 or it == cfg.iterations:
            success = None
            if probe_specs is not None:
                success = probe_success(student, probe_specs,
                                        probe_config or env.config,
                                        cfg.probe_episodes, seed=it)
            row = DistillStats(iteration=it, kl=kl, success=success)
            history.append(row)
            if on_report is not None:
                on_report(row)
    return history
