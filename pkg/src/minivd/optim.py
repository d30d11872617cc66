"""Bias-corrected Adam over named parameter tensors."""

import numpy as np


class AdamState:
    """First/second moment arrays plus the shared step counter."""

    def __init__(self, lr=4e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = {}
        self.v = {}

    def to_dict(self):
        return {
            "lr": self.lr,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps": self.eps,
            "step_count": self.step_count,
            "m": {k: v.ravel().tolist() for k, v in self.m.items()},
            "v": {k: v.ravel().tolist() for k, v in self.v.items()},
        }

    @classmethod
    def from_dict(cls, d, shapes):
        state = cls(lr=d["lr"], beta1=d["beta1"], beta2=d["beta2"], eps=d["eps"])
        state.step_count = d["step_count"]
        state.m = {k: np.asarray(v, dtype=np.float64).reshape(shapes[k]) for k, v in d["m"].items()}
        state.v = {k: np.asarray(v, dtype=np.float64).reshape(shapes[k]) for k, v in d["v"].items()}
        return state


def adam_step(params, grads, state):
    """Apply one Adam update in place to the named parameter tensors.

    `params` maps name -> Tensor, `grads` maps name -> ndarray (same
    shapes). A non-finite gradient aborts before touching any parameter.
    """
    for name, param in params.items():
        g = grads[name]
        if g.shape != param.data.shape:
            raise ValueError(f"adam_step: gradient shape {g.shape} != param {param.data.shape} for {name}")
        if not np.isfinite(g).all():
            raise FloatingPointError(f"adam_step: non-finite gradient for {name}")

    state.step_count += 1
    t = state.step_count
    correction1 = 1.0 - state.beta1**t
    correction2 = 1.0 - state.beta2**t
    for name, param in params.items():
        g = grads[name]
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(param.data)
        v = state.v.get(name)
        if v is None:
            v = state.v[name] = np.zeros_like(param.data)
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        m_hat = m / correction1
        v_hat = v / correction2
        param.data = param.data - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
