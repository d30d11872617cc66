"""Likelihood losses: plain MLE and the weighted variant.

Each training sample (one QA round) carries the log-likelihood of its
true response plus those of its candidate negatives. The weighted loss
scales each sample's negative log-likelihood by a detached weight that
grows when some negative is better modeled than the positive (hard
sample) and shrinks toward the floor when the positive is comfortably
ahead (easy sample).
"""

import math
from dataclasses import dataclass

import numpy as np

LOG_CLAMP = -1e-8  # log-likelihoods are clamped below this before ratios


@dataclass(frozen=True)
class LikelihoodRecord:
    log_pos: float
    log_negs: tuple

    def __post_init__(self):
        object.__setattr__(self, "log_pos", min(float(self.log_pos), LOG_CLAMP))
        object.__setattr__(
            self, "log_negs", tuple(min(float(v), LOG_CLAMP) for v in self.log_negs)
        )


@dataclass(frozen=True)
class WeightConfig:
    tau: float = 1.0
    gamma: float = 0.5

    def __post_init__(self):
        if self.tau < 0 or self.gamma < 0:
            raise ValueError("tau and gamma must be non-negative")


@dataclass(frozen=True)
class SampleWeights:
    beta: tuple  # per sample: tuple of per-negative ratios
    beta_tilde: tuple  # per sample: exp(tau * max beta)
    alpha: tuple  # per sample: max(beta_tilde, gamma)


def mle_loss(records):
    """Sum of negative positive-response log-likelihoods."""
    if not records:
        raise ValueError("mle_loss: empty batch")
    total = 0.0
    for r in records:
        total += -r.log_pos
    return total


def wle_weights(records, config):
    """Per-sample weights from positive/negative likelihood ratios.

    For sample m with negatives n: beta[m][n] = 1 - log p_neg / log p_pos,
    beta_tilde[m] = exp(tau * max_n beta[m][n]), alpha[m] =
    max(beta_tilde[m], gamma). Computed vectorized per sample; weights
    are plain floats, never part of the gradient graph.
    """
    if not records:
        raise ValueError("wle_weights: empty batch")
    beta_rows = []
    beta_tilde = []
    alpha = []
    for r in records:
        if r.log_pos > LOG_CLAMP:
            raise AssertionError("record violates the log clamp invariant")
        if not r.log_negs:
            raise ValueError("wle_weights: record without negatives")
        negs = np.asarray(r.log_negs)
        betas = 1.0 - negs / r.log_pos
        bt = math.exp(config.tau * float(betas.max()))
        beta_rows.append(tuple(betas.tolist()))
        beta_tilde.append(bt)
        alpha.append(max(bt, config.gamma))
    return SampleWeights(beta=tuple(beta_rows), beta_tilde=tuple(beta_tilde), alpha=tuple(alpha))


def wle_loss(records, config):
    """Weighted sum of negative positive-response log-likelihoods."""
    weights = wle_weights(records, config)
    total = 0.0
    for a, r in zip(weights.alpha, records):
        total += -(a * r.log_pos)
    return total
