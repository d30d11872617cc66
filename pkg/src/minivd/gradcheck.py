"""Finite-difference verification of reverse-mode gradients."""

import numpy as np

from .tensor import Tensor, backward


def grad_check(fn, point, epsilon=1e-5, mode="entries", direction_seed=0):
    """Max relative error between analytic and central-difference gradients.

    `fn` is a deterministic graph builder: it receives a list of leaf
    tensors (rebuilt from `point` on every call) and returns a scalar
    Tensor. `point` is a list of ndarrays giving the evaluation point.

    mode "entries" perturbs every entry of every parameter separately
    (exhaustive; right for primitives). mode "directional" compares one
    directional derivative per parameter along the analytic gradient's
    own direction, so the analytic side is the gradient norm; this
    aggregates each parameter's whole gradient and stays above
    finite-difference noise even when individual entries are vanishingly
    small (right for deep compositions). Parameters with an exactly zero
    analytic gradient fall back to a seeded random direction, which must
    then measure zero.
    """
    if not 1e-7 <= epsilon <= 1e-4:
        raise ValueError(f"epsilon {epsilon} outside [1e-7, 1e-4]")
    if mode not in ("entries", "directional"):
        raise ValueError(f"unknown mode {mode!r}")
    point = [np.asarray(p, dtype=np.float64) for p in point]

    def build(arrays):
        leaves = [Tensor(a.copy(), requires_grad=True) for a in arrays]
        out = fn(leaves)
        if out.data.size != 1:
            raise ValueError("grad_check: fn must return a scalar tensor")
        return leaves, out

    def value_at(arrays, k):
        _, out = build(arrays)
        if not np.isfinite(out.data).all():
            raise FloatingPointError(
                f"grad_check: non-finite value while perturbing parameter {k}"
            )
        return out.item()

    leaves, out = build(point)
    if not np.isfinite(out.data).all():
        raise FloatingPointError("grad_check: non-finite function value at point")
    grads = backward(out)
    analytic = [grads[leaf] for leaf in leaves]

    def rel_err(a, numeric):
        return abs(a - numeric) / max(1e-8, abs(a) + abs(numeric))

    worst = 0.0
    if mode == "entries":
        for k, base in enumerate(point):
            flat = base.reshape(-1)
            for j in range(flat.size):
                orig = flat[j]
                flat[j] = orig + epsilon
                hi = value_at(point, k)
                flat[j] = orig - epsilon
                lo = value_at(point, k)
                flat[j] = orig
                numeric = (hi - lo) / (2.0 * epsilon)
                worst = max(worst, rel_err(analytic[k].reshape(-1)[j], numeric))
    else:
        for k, base in enumerate(point):
            norm = float(np.sqrt((analytic[k] ** 2).sum()))
            if norm > 0.0:
                direction = analytic[k] / norm
            else:
                rng = np.random.default_rng((direction_seed, k))
                direction = rng.normal(size=base.shape)
                direction /= np.sqrt((direction**2).sum())
            probe = [p.copy() for p in point]
            probe[k] = base + epsilon * direction
            hi = value_at(probe, k)
            probe[k] = base - epsilon * direction
            lo = value_at(probe, k)
            numeric = (hi - lo) / (2.0 * epsilon)
            a = float((analytic[k] * direction).sum())
            worst = max(worst, rel_err(a, numeric))
    return worst
