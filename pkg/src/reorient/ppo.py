"""Clipped-surrogate policy optimization over the vectorized hand environment.

The update is the standard recipe: collect a short rectangular rollout from
every environment, estimate advantages with GAE(lambda), then run several
epochs of minibatched clipped-ratio ascent with separate actor and critic
optimizers.  Feedforward actors shuffle flat transitions; recurrent actors
keep whole per-environment sequences together and re-forward them from the
hidden state snapshotted at collection time, resetting the hidden wherever
an episode ended inside the window.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .nets import (
    gaussian_entropy_t,
    gaussian_log_prob,
    gaussian_log_prob_t,
    gaussian_sample,
)


@dataclass
class PpoConfig:
    gamma: float = 0.99
    lam: float = 0.95
    clip_ratio: float = 0.1
    epochs: int = 8
    num_batches: int = 5
    value_loss_coeff: float = 5e-4
    entropy_coeff: float = 0.0
    actor_lr: float = 3e-4
    critic_lr: float = 1e-3
    n_envs: int = 256
    rollout_steps: int = 8
    episode_len: int = 300

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must be in [0, 1], got {self.gamma}")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"lam must be in [0, 1], got {self.lam}")
        if self.clip_ratio <= 0.0:
            raise ValueError("clip_ratio must be positive")
        if self.epochs < 1 or self.num_batches < 1:
            raise ValueError("epochs and num_batches must be at least 1")
        if self.rollout_steps < 1:
            raise ValueError("rollout_steps must be at least 1")


@dataclass
class RolloutBuffer:
    """Rectangular (n_envs, n_steps) record of one collection window."""

    obs: np.ndarray          # (B, T, obs_dim) policy observation at t
    prev_actions: np.ndarray  # (B, T, act_dim) previous action fed alongside obs
    actions: np.ndarray      # (B, T, act_dim) sampled actions
    log_probs: np.ndarray    # (B, T) log-density of the sampled action
    values: np.ndarray       # (B, T) critic estimate at t
    rewards: np.ndarray      # (B, T)
    dones: np.ndarray        # (B, T) episode ended at t
    successes: np.ndarray    # (B, T)
    task_errors: np.ndarray  # (B, T) post-step angle error / height gap
    bootstrap_value: np.ndarray        # (B,) critic estimate after the window
    h0_actor: np.ndarray | None = None   # (B, H) hidden at window start
    h0_critic: np.ndarray | None = None

    @property
    def n_envs(self):
        return self.obs.shape[0]

    @property
    def n_steps(self):
        return self.obs.shape[1]


@dataclass
class UpdateStats:
    policy_loss: float
    value_loss: float
    approx_kl: float
    clip_fraction: float
    entropy: float = 0.0


def compute_gae(rewards, values, dones, bootstrap_value, gamma=0.99, lam=0.95):
    """Generalized advantage estimates over the trailing axis.

    `rewards`, `values`, `dones` share a shape whose last axis is time;
    `bootstrap_value` matches the leading shape and supplies V(s_T) for
    windows that end mid-episode.  A `done` at step t blocks all credit
    flowing backward across t, so later rewards never touch earlier
    advantages.  Returns (advantages, returns) with returns = adv + values.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones)
    bootstrap_value = np.asarray(bootstrap_value, dtype=np.float64)
    if rewards.shape != values.shape or rewards.shape != dones.shape:
        raise ValueError(
            f"shape mismatch: rewards {rewards.shape}, values {values.shape}, "
            f"dones {dones.shape}"
        )
    if bootstrap_value.shape != rewards.shape[:-1]:
        raise ValueError(
            f"bootstrap_value shape {bootstrap_value.shape} does not match "
            f"leading shape {rewards.shape[:-1]}"
        )
    live = 1.0 - dones.astype(np.float64)
    T = rewards.shape[-1]
    adv = np.zeros_like(rewards)
    next_value = bootstrap_value
    carry = np.zeros_like(bootstrap_value)
    for t in range(T - 1, -1, -1):
        delta = rewards[..., t] + gamma * next_value * live[..., t] - values[..., t]
        carry = delta + gamma * lam * live[..., t] * carry
        adv[..., t] = carry
        next_value = values[..., t]
    return adv, adv + values


def _policy_input(obs, prev_action):
    return np.concatenate([obs, prev_action], axis=-1)


def collect_rollouts(env, actor, critic, n_steps, rng, obs_kind="full",
                     h_actor=None, h_critic=None):
    """Roll the current policy for `n_steps` in every environment.

    Returns (buffer, h_actor, h_critic); the hiddens are the post-window
    recurrent states (None for feedforward nets) so consecutive windows can
    chain.  Episodes that end inside the window auto-reset and have their
    hidden state zeroed on the spot.
    """
    if obs_kind not in ("full", "reduced"):
        raise ValueError(f"obs_kind must be 'full' or 'reduced', got {obs_kind!r}")
    pick = 0 if obs_kind == "full" else 1
    B = env.n_envs
    act_dim = env.n_joints

    if actor.recurrent and h_actor is None:
        h_actor = actor.initial_hidden(B)
    if critic.recurrent and h_critic is None:
        h_critic = critic.initial_hidden(B)
    h0_a = h_actor.copy() if h_actor is not None else None
    h0_c = h_critic.copy() if h_critic is not None else None

    obs_dim = env.observe()[pick].shape[1]
    buf = RolloutBuffer(
        obs=np.zeros((B, n_steps, obs_dim)),
        prev_actions=np.zeros((B, n_steps, act_dim)),
        actions=np.zeros((B, n_steps, act_dim)),
        log_probs=np.zeros((B, n_steps)),
        values=np.zeros((B, n_steps)),
        rewards=np.zeros((B, n_steps)),
        dones=np.zeros((B, n_steps), dtype=bool),
        successes=np.zeros((B, n_steps), dtype=bool),
        task_errors=np.zeros((B, n_steps)),
        bootstrap_value=np.zeros(B),
        h0_actor=h0_a,
        h0_critic=h0_c,
    )

    for t in range(n_steps):
        obs = env.observe()[pick]
        prev_a = env.prev_action
        x = _policy_input(obs, prev_a)
        if actor.recurrent:
            out = actor.forward(obs, prev_a, h_actor)
            h_actor = out.hidden
        else:
            out = actor.forward(obs, prev_a)
        action = gaussian_sample(out, rng)
        logp = gaussian_log_prob(out.mean, out.log_std, action)
        if critic.recurrent:
            v_t, h_c = critic.forward_t(x, h_critic)
            value, h_critic = v_t.value, h_c.value
        else:
            value = critic.values(obs, prev_a)

        res = env.step(action)

        buf.obs[:, t] = obs
        buf.prev_actions[:, t] = prev_a
        buf.actions[:, t] = action
        buf.log_probs[:, t] = logp
        buf.values[:, t] = value
        buf.rewards[:, t] = res["reward"]
        buf.dones[:, t] = res["done"]
        buf.successes[:, t] = res["success"]
        buf.task_errors[:, t] = res["task_error"]

        ended = res["done"]
        if np.any(ended):
            if actor.recurrent:
                h_actor[ended] = 0.0
            if critic.recurrent:
                h_critic[ended] = 0.0

    obs = env.observe()[pick]
    x = _policy_input(obs, env.prev_action)
    if critic.recurrent:
        buf.bootstrap_value[:] = critic.forward_t(x, h_critic)[0].value
    else:
        buf.bootstrap_value[:] = critic.forward_t(x)[0].value
    return buf, h_actor, h_critic


def _check_finite(name, t, context):
    if not np.all(np.isfinite(t.value)):
        raise RuntimeError(f"non-finite {name} during update ({context}); aborting")


def _surrogate_losses(mean_t, log_std_t, actions, old_logp, adv, clip_ratio,
                      entropy_coeff):
    """Clipped surrogate + stats for one minibatch forward."""
    new_logp = gaussian_log_prob_t(mean_t, log_std_t, actions)
    ratio = ad.exp(ad.sub(new_logp, old_logp))
    clipped = ad.clip(ratio, 1.0 - clip_ratio, 1.0 + clip_ratio)
    surr = ad.minimum(ad.mul(ratio, adv), ad.mul(clipped, adv))
    loss = ad.mul(ad.tmean(surr), -1.0)
    entropy = gaussian_entropy_t(log_std_t)
    if entropy_coeff:
        loss = ad.sub(loss, ad.mul(entropy, entropy_coeff))
    kl = float(np.mean(old_logp - new_logp.value))
    clip_frac = float(np.mean(np.abs(ratio.value - 1.0) > clip_ratio))
    return loss, kl, clip_frac, float(entropy.value)


def _value_loss(v_t, returns, coeff):
    return ad.mul(ad.tmean(ad.square(ad.sub(v_t, returns))), coeff)


def _update_flat(actor, critic, actor_opt, critic_opt, buf, cfg, rng,
                 adv, returns):
    B, T = buf.n_envs, buf.n_steps
    N = B * T
    x = _policy_input(buf.obs, buf.prev_actions).reshape(N, -1)
    actions = buf.actions.reshape(N, -1)
    old_logp = buf.log_probs.reshape(N)
    adv = adv.reshape(N)
    returns = returns.reshape(N)

    stats = np.zeros(5)
    count = 0
    for epoch in range(cfg.epochs):
        perm = rng.permutation(N)
        for k, idx in enumerate(np.array_split(perm, cfg.num_batches)):
            mean_t, log_std_t, _ = actor.forward_t(x[idx])
            loss, kl, cf, ent = _surrogate_losses(
                mean_t, log_std_t, actions[idx], old_logp[idx], adv[idx],
                cfg.clip_ratio, cfg.entropy_coeff)
            _check_finite("policy loss", loss, f"epoch {epoch} batch {k}")
            actor.params.zero_grad()
            loss.backward()
            actor_opt.step()

            v_t, _ = critic.forward_t(x[idx])
            v_loss = _value_loss(v_t, returns[idx], cfg.value_loss_coeff)
            _check_finite("value loss", v_loss, f"epoch {epoch} batch {k}")
            critic.params.zero_grad()
            v_loss.backward()
            critic_opt.step()

            stats += (float(loss.value), float(v_loss.value), kl, cf, ent)
            count += 1
    return stats / count


def _forward_sequence(net, x_seq, h0, live_prev, is_critic):
    """Re-forward a whole (b, T, d) window from its snapshotted hidden.

    `live_prev[:, t]` is 0 where an episode ended at step t-1, which zeroes
    the carried hidden exactly like the reset applied during collection.
    """
    h = ad.as_tensor(h0)
    outs = []
    for t in range(x_seq.shape[1]):
        h = ad.mul(h, live_prev[:, t][:, None])
        if is_critic:
            out, h = net.forward_t(x_seq[:, t], h)
            outs.append(out)
        else:
            mean, log_std, h = net.forward_t(x_seq[:, t], h)
            outs.append((mean, log_std))
    return outs


def _update_sequences(actor, critic, actor_opt, critic_opt, buf, cfg, rng,
                      adv, returns):
    B, T = buf.n_envs, buf.n_steps
    x = _policy_input(buf.obs, buf.prev_actions)
    # hidden carried into step t survives only if step t-1 did not terminate
    live_prev = np.ones((B, T))
    live_prev[:, 1:] = 1.0 - buf.dones[:, :-1].astype(np.float64)

    stats = np.zeros(5)
    count = 0
    for epoch in range(cfg.epochs):
        perm = rng.permutation(B)
        for k, rows in enumerate(np.array_split(perm, cfg.num_batches)):
            if rows.size == 0:
                continue
            seq = _forward_sequence(actor, x[rows], buf.h0_actor[rows],
                                    live_prev[rows], is_critic=False)
            loss = None
            kl_sum = cf_sum = ent_sum = 0.0
            for t, (mean_t, log_std_t) in enumerate(seq):
                step_loss, kl, cf, ent = _surrogate_losses(
                    mean_t, log_std_t, buf.actions[rows, t],
                    buf.log_probs[rows, t], adv[rows, t],
                    cfg.clip_ratio, cfg.entropy_coeff)
                loss = step_loss if loss is None else ad.add(loss, step_loss)
                kl_sum += kl
                cf_sum += cf
                ent_sum += ent
            loss = ad.mul(loss, 1.0 / T)
            _check_finite("policy loss", loss, f"epoch {epoch} batch {k}")
            actor.params.zero_grad()
            loss.backward()
            actor_opt.step()

            vseq = _forward_sequence(critic, x[rows], buf.h0_critic[rows],
                                     live_prev[rows], is_critic=True)
            v_loss = None
            for t, v_t in enumerate(vseq):
                term = _value_loss(v_t, returns[rows, t], cfg.value_loss_coeff)
                v_loss = term if v_loss is None else ad.add(v_loss, term)
            v_loss = ad.mul(v_loss, 1.0 / T)
            _check_finite("value loss", v_loss, f"epoch {epoch} batch {k}")
            critic.params.zero_grad()
            v_loss.backward()
            critic_opt.step()

            stats += (float(loss.value), float(v_loss.value),
                      kl_sum / T, cf_sum / T, ent_sum / T)
            count += 1
    return stats / count


def ppo_update(actor, critic, actor_opt, critic_opt, buf, cfg, rng):
    """One full PPO update over a rollout buffer; returns UpdateStats.

    Advantages are normalized once across the whole buffer, then `epochs`
    passes run over `num_batches` minibatches reshuffled every epoch.
    Feedforward nets shuffle flat transitions; recurrent nets shuffle
    environment rows and re-forward each row's full sequence.
    """
    adv, returns = compute_gae(buf.rewards, buf.values, buf.dones,
                               buf.bootstrap_value, cfg.gamma, cfg.lam)
    std = adv.std()
    adv = (adv - adv.mean()) / max(std, 1e-8)

    if actor.recurrent:
        out = _update_sequences(actor, critic, actor_opt, critic_opt, buf,
                                cfg, rng, adv, returns)
    else:
        out = _update_flat(actor, critic, actor_opt, critic_opt, buf,
                           cfg, rng, adv, returns)
    return UpdateStats(policy_loss=out[0], value_loss=out[1],
                       approx_kl=out[2], clip_fraction=out[3], entropy=out[4])
