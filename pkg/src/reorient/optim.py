"""Adam with bias correction over a ParamStore."""

import numpy as np


class Adam:
    def __init__(self, params, lr, betas=(0.9, 0.999), eps=1e-8):
        self.params = params
        self.lr = float(lr)
        self.beta1, self.beta2 = betas
        self.eps = float(eps)
        self.t = 0
        self.m = {n: np.zeros_like(t.value) for n, t in params.items()}
        self.v = {n: np.zeros_like(t.value) for n, t in params.items()}

    def step(self, grads=None):
        """One update. Missing grads count as zero; any non-finite grad
        raises and leaves parameters and moments untouched."""
        if grads is None:
            grads = self.params.grads()
        resolved = {}
        for name, tensor in self.params.items():
            g = grads.get(name)
            if g is None:
                g = np.zeros_like(tensor.value)
            g = np.asarray(g, dtype=np.float64)
            if g.shape != tensor.value.shape:
                raise ValueError(f"grad shape mismatch for {name}")
            if not np.all(np.isfinite(g)):
                raise ValueError(f"non-finite gradient for {name}; step rejected")
            resolved[name] = g

        self.t += 1
        b1t = 1.0 - self.beta1**self.t
        b2t = 1.0 - self.beta2**self.t
        for name, tensor in self.params.items():
            g = resolved[name]
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            tensor.value = tensor.value - self.lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)
        self.params.assert_finite()

    def state_arrays(self):
        out = {"t": np.array([self.t], dtype=np.int64)}
        for n in self.m:
            # copies: step() mutates the moments in place, and a caller
            # holding this dict across steps must not see that
            out[f"m.{n}"] = self.m[n].copy()
            out[f"v.{n}"] = self.v[n].copy()
        return out

    def load_state_arrays(self, arrays):
        self.t = int(arrays["t"][0])
        for n in self.m:
            self.m[n] = np.array(arrays[f"m.{n}"], dtype=np.float64)
            self.v[n] = np.array(arrays[f"v.{n}"], dtype=np.float64)
