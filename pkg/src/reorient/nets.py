"""Policy and value networks: MLP and GRU trunks with ELU activations and a
diagonal-Gaussian action head with a learned, state-independent log-std.

Both architectures take concat(observation, previous_action) as input. The
same forward code serves rollouts and training: it builds an autodiff graph
and callers take `.value` when they only need numbers.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad

LOG_STD_MIN = -5.0
LOG_STD_MAX = 2.0
LOG_STD_INIT = -1.0
LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass
class PolicyOutput:
    mean: np.ndarray              # (B, A)
    log_std: np.ndarray           # (A,), clamped
    value: np.ndarray = None      # (B,) when a critic was queried
    hidden: np.ndarray = None     # (B, H) recurrent state, if any


class ParamStore:
    """Named parameter tensors with an immutable shape map."""

    def __init__(self, arrays):
        self._tensors = {
            name: ad.Tensor(np.array(a, dtype=np.float64), requires_grad=True)
            for name, a in arrays.items()
        }

    def __getitem__(self, name):
        return self._tensors[name]

    def names(self):
        return sorted(self._tensors)

    def items(self):
        return [(n, self._tensors[n]) for n in self.names()]

    def arrays(self):
        return {n: t.value.copy() for n, t in self.items()}

    def zero_grad(self):
        for t in self._tensors.values():
            t.grad = None

    def grads(self):
        return {n: t.grad for n, t in self.items()}

    def load_arrays(self, arrays):
        for name, t in self._tensors.items():
            a = np.asarray(arrays[name], dtype=np.float64)
            if a.shape != t.value.shape:
                raise ValueError(f"shape mismatch for {name}: {a.shape} vs {t.value.shape}")
            t.value = a.copy()

    def assert_finite(self):
        for n, t in self._tensors.items():
            if not np.all(np.isfinite(t.value)):
                raise FloatingPointError(f"non-finite parameter {n}")


def orthogonal(rng, n_in, n_out, gain):
    a = rng.standard_normal((max(n_in, n_out), min(n_in, n_out)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if n_in < n_out:
        q = q.T
    # C-order copy: LAPACK hands back Fortran-ordered memory, and BLAS picks
    # stride-dependent kernels, so a weight born here and the same weight
    # reloaded from a checkpoint would otherwise drift apart at the last ulp.
    return np.ascontiguousarray(gain * q[:n_in, :n_out])


def _mlp_params(rng, in_dim, hidden, out_dim, out_gain):
    arrays = {}
    prev = in_dim
    for i, h in enumerate(hidden):
        arrays[f"l{i}.w"] = orthogonal(rng, prev, h, np.sqrt(2.0))
        arrays[f"l{i}.b"] = np.zeros(h)
        prev = h
    arrays["out.w"] = orthogonal(rng, prev, out_dim, out_gain)
    arrays["out.b"] = np.zeros(out_dim)
    return arrays


def _mlp_trunk(params, x, n_hidden):
    t = ad.as_tensor(x)
    for i in range(n_hidden):
        t = ad.elu(ad.add(ad.matmul(t, params[f"l{i}.w"]), params[f"l{i}.b"]))
    return ad.add(ad.matmul(t, params["out.w"]), params["out.b"])


def _gru_params(rng, in_dim, size):
    arrays = {}
    for gate in ("z", "r", "h"):
        arrays[f"gru.w{gate}"] = orthogonal(rng, in_dim, size, 1.0)
        arrays[f"gru.u{gate}"] = orthogonal(rng, size, size, 1.0)
        arrays[f"gru.b{gate}"] = np.zeros(size)
    return arrays


def gru_cell(params, x_t, h_t):
    """Standard GRU cell on tape tensors: h' = (1-z)*h + z*tanh-candidate."""
    z = ad.sigmoid(ad.add(ad.add(ad.matmul(x_t, params["gru.wz"]), ad.matmul(h_t, params["gru.uz"])), params["gru.bz"]))
    r = ad.sigmoid(ad.add(ad.add(ad.matmul(x_t, params["gru.wr"]), ad.matmul(h_t, params["gru.ur"])), params["gru.br"]))
    cand = ad.tanh(ad.add(ad.add(ad.matmul(x_t, params["gru.wh"]), ad.matmul(ad.mul(r, h_t), params["gru.uh"])), params["gru.bh"]))
    one_minus_z = ad.sub(1.0, z)
    return ad.add(ad.mul(one_minus_z, h_t), ad.mul(z, cand))


class MlpActor:
    arch = "mlp"
    recurrent = False

    def __init__(self, obs_dim, act_dim, hidden, rng, log_std_init=LOG_STD_INIT):
        self.obs_dim = obs_dim
        self.act_dim = act_dim
        self.hidden = tuple(hidden)
        self.in_dim = obs_dim + act_dim
        arrays = _mlp_params(rng, self.in_dim, hidden, act_dim, 0.01)
        arrays["log_std"] = np.full(act_dim, float(log_std_init))
        self.params = ParamStore(arrays)

    def initial_hidden(self, n):
        return None

    def forward_t(self, x, hidden=None):
        if x.shape[-1] != self.in_dim:
            raise ValueError(f"expected input dim {self.in_dim}, got {x.shape[-1]}")
        mean = _mlp_trunk(self.params, x, len(self.hidden))
        log_std = ad.clip(self.params["log_std"], LOG_STD_MIN, LOG_STD_MAX)
        return mean, log_std, None

    def forward(self, obs, prev_action, hidden=None):
        x = np.concatenate([obs, prev_action], axis=-1)
        mean, log_std, _ = self.forward_t(x)
        return PolicyOutput(mean=mean.value, log_std=log_std.value)


class MlpCritic:
    recurrent = False

    def __init__(self, obs_dim, act_dim, hidden, rng):
        self.in_dim = obs_dim + act_dim
        self.hidden = tuple(hidden)
        self.params = ParamStore(_mlp_params(rng, self.in_dim, hidden, 1, 1.0))

    def initial_hidden(self, n):
        return None

    def forward_t(self, x, hidden=None):
        if x.shape[-1] != self.in_dim:
            raise ValueError(f"expected input dim {self.in_dim}, got {x.shape[-1]}")
        return ad.tsum(_mlp_trunk(self.params, x, len(self.hidden)), axis=-1), None

    def values(self, obs, prev_action):
        x = np.concatenate([obs, prev_action], axis=-1)
        return self.forward_t(x)[0].value


class GruActor:
    arch = "rnn"
    recurrent = True

    def __init__(self, obs_dim, act_dim, hidden, gru_size, rng, log_std_init=LOG_STD_INIT):
        self.obs_dim = obs_dim
        self.act_dim = act_dim
        self.hidden = tuple(hidden)
        self.gru_size = gru_size
        self.in_dim = obs_dim + act_dim
        arrays = {}
        prev = self.in_dim
        for i, h in enumerate(hidden):
            arrays[f"l{i}.w"] = orthogonal(rng, prev, h, np.sqrt(2.0))
            arrays[f"l{i}.b"] = np.zeros(h)
            prev = h
        arrays.update(_gru_params(rng, prev, gru_size))
        arrays["post.w"] = orthogonal(rng, gru_size, gru_size, np.sqrt(2.0))
        arrays["post.b"] = np.zeros(gru_size)
        arrays["out.w"] = orthogonal(rng, gru_size, act_dim, 0.01)
        arrays["out.b"] = np.zeros(act_dim)
        arrays["log_std"] = np.full(act_dim, float(log_std_init))
        self.params = ParamStore(arrays)

    def initial_hidden(self, n):
        return np.zeros((n, self.gru_size))

    def forward_t(self, x, hidden):
        if x.shape[-1] != self.in_dim:
            raise ValueError(f"expected input dim {self.in_dim}, got {x.shape[-1]}")
        p = self.params
        t = ad.as_tensor(x)
        for i in range(len(self.hidden)):
            t = ad.elu(ad.add(ad.matmul(t, p[f"l{i}.w"]), p[f"l{i}.b"]))
        h = gru_cell(p, t, ad.as_tensor(hidden))
        f = ad.elu(ad.add(ad.matmul(h, p["post.w"]), p["post.b"]))
        mean = ad.add(ad.matmul(f, p["out.w"]), p["out.b"])
        log_std = ad.clip(p["log_std"], LOG_STD_MIN, LOG_STD_MAX)
        return mean, log_std, h

    def forward(self, obs, prev_action, hidden):
        x = np.concatenate([obs, prev_action], axis=-1)
        mean, log_std, h = self.forward_t(x, hidden)
        return PolicyOutput(mean=mean.value, log_std=log_std.value, hidden=h.value)


class GruCritic:
    recurrent = True

    def __init__(self, obs_dim, act_dim, hidden, gru_size, rng):
        self.in_dim = obs_dim + act_dim
        self.hidden = tuple(hidden)
        self.gru_size = gru_size
        arrays = {}
        prev = self.in_dim
        for i, h in enumerate(hidden):
            arrays[f"l{i}.w"] = orthogonal(rng, prev, h, np.sqrt(2.0))
            arrays[f"l{i}.b"] = np.zeros(h)
            prev = h
        arrays.update(_gru_params(rng, prev, gru_size))
        arrays["post.w"] = orthogonal(rng, gru_size, gru_size, np.sqrt(2.0))
        arrays["post.b"] = np.zeros(gru_size)
        arrays["out.w"] = orthogonal(rng, gru_size, 1, 1.0)
        arrays["out.b"] = np.zeros(1)
        self.params = ParamStore(arrays)

    def initial_hidden(self, n):
        return np.zeros((n, self.gru_size))

    def forward_t(self, x, hidden):
        if x.shape[-1] != self.in_dim:
            raise ValueError(f"expected input dim {self.in_dim}, got {x.shape[-1]}")
        p = self.params
        t = ad.as_tensor(x)
        for i in range(len(self.hidden)):
            t = ad.elu(ad.add(ad.matmul(t, p[f"l{i}.w"]), p[f"l{i}.b"]))
        h = gru_cell(p, t, ad.as_tensor(hidden))
        f = ad.elu(ad.add(ad.matmul(h, p["post.w"]), p["post.b"]))
        v = ad.tsum(ad.add(ad.matmul(f, p["out.w"]), p["out.b"]), axis=-1)
        return v, h


def mlp_forward(actor, obs, prev_action):
    """Spec-facing convenience: PolicyOutput of an MlpActor."""
    return actor.forward(obs, prev_action)


def gru_forward(actor, obs, prev_action, hidden):
    """Spec-facing convenience: PolicyOutput of a GruActor (returns new hidden)."""
    return actor.forward(obs, prev_action, hidden)


# ---------------------------------------------------------------------------
# diagonal-Gaussian head: numpy flavors for rollouts/eval, tape flavors for
# training losses


def gaussian_sample(out, rng):
    std = np.exp(out.log_std)
    return out.mean + std * rng.standard_normal(out.mean.shape)


def gaussian_log_prob(mean, log_std, action):
    z = (action - mean) * np.exp(-log_std)
    return -0.5 * (z**2).sum(axis=-1) - log_std.sum() - 0.5 * LOG_2PI * mean.shape[-1]


def gaussian_entropy(log_std):
    return float(log_std.sum() + 0.5 * log_std.size * (1.0 + LOG_2PI))


def gaussian_kl(mean_p, log_std_p, mean_q, log_std_q):
    """KL(p || q) for diagonal Gaussians, summed over action dims (numpy)."""
    var_p = np.exp(2.0 * log_std_p)
    var_q = np.exp(2.0 * log_std_q)
    term = log_std_q - log_std_p + (var_p + (mean_p - mean_q) ** 2) / (2.0 * var_q) - 0.5
    return term.sum(axis=-1)


def gaussian_log_prob_t(mean_t, log_std_t, action):
    z = ad.mul(ad.sub(action, mean_t), ad.exp(ad.mul(log_std_t, -1.0)))
    quad = ad.tsum(ad.square(z), axis=-1)
    const = 0.5 * LOG_2PI * mean_t.value.shape[-1]
    return ad.sub(ad.mul(ad.add(quad, const * 2.0), -0.5), ad.tsum(log_std_t))


def gaussian_entropy_t(log_std_t):
    n = log_std_t.value.size
    return ad.add(ad.tsum(log_std_t), 0.5 * n * (1.0 + LOG_2PI))


def gaussian_kl_t(mean_p, log_std_p, mean_q_t, log_std_q_t):
    """KL(p || q) with p fixed numpy (teacher) and q on tape (student).

    Written as dls + (exp(-2*dls) - 1)/2 + diff^2/(2*var_q) so that at
    p == q every term — and every gradient — is exactly zero, making
    self-distillation a true fixed point in floating point.
    """
    dls = ad.sub(log_std_q_t, log_std_p)
    ratio = ad.exp(ad.mul(dls, -2.0))
    diff_sq = ad.square(ad.sub(mean_q_t, mean_p))
    quad = ad.mul(ad.mul(diff_sq, ad.exp(ad.mul(log_std_q_t, -2.0))), 0.5)
    per_dim = ad.add(ad.add(dls, ad.mul(ad.sub(ratio, 1.0), 0.5)), quad)
    return ad.tsum(per_dim, axis=-1)
