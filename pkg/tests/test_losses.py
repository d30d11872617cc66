import math

import numpy as np
import pytest

from minivd.losses import (
    LOG_CLAMP,
    LikelihoodRecord,
    SampleWeights,
    WeightConfig,
    mle_loss,
    wle_loss,
    wle_weights,
)


def scalar_loop_weights(records, tau, gamma):
    """Verbatim per-sample reference: ratio, exp-of-max, floor clamp."""
    alphas = []
    for r in records:
        betas = [1.0 - (ln / r.log_pos) for ln in r.log_negs]
        beta_tilde = math.exp(tau * max(betas))
        alphas.append(max(beta_tilde, gamma))
    return alphas


def test_record_clamps_values():
    r = LikelihoodRecord(log_pos=0.0, log_negs=(0.5, -1.0))
    assert r.log_pos == LOG_CLAMP
    assert r.log_negs[0] == LOG_CLAMP
    assert r.log_negs[1] == -1.0


def test_mle_loss_two_coin_tokens():
    # one sample whose two tokens each have probability 0.5
    r = LikelihoodRecord(log_pos=math.log(0.5) + math.log(0.5), log_negs=(-1.0,))
    assert abs(mle_loss([r]) - 1.3862943611198906) < 1e-12


def test_mle_loss_perfect_prediction_limit():
    r = LikelihoodRecord(log_pos=-1e-12, log_negs=(-1.0,))
    assert 0.0 < mle_loss([r]) <= 1e-7


def test_mle_loss_additive_over_batch():
    rng = np.random.default_rng(0)
    records = [
        LikelihoodRecord(log_pos=-float(rng.uniform(0.1, 5)), log_negs=(-1.0,))
        for _ in range(3)
    ]
    total = mle_loss(records)
    parts = sum(mle_loss([r]) for r in records)
    assert abs(total - parts) < 1e-12


def test_mle_loss_empty_batch_errors():
    with pytest.raises(ValueError):
        mle_loss([])


def test_weights_worked_example_one():
    r = LikelihoodRecord(log_pos=-2.0, log_negs=(-4.0, -3.0))
    w = wle_weights([r], WeightConfig(tau=2.0, gamma=0.5))
    assert w.beta[0] == (-1.0, -0.5)
    assert abs(w.beta_tilde[0] - math.exp(-1.0)) < 1e-15
    assert w.alpha[0] == 0.5


def test_weights_equal_likelihoods_give_unit_beta_tilde():
    r = LikelihoodRecord(log_pos=-3.0, log_negs=(-3.0, -3.0, -3.0))
    w = wle_weights([r], WeightConfig(tau=1.7, gamma=0.5))
    assert w.beta[0] == (0.0, 0.0, 0.0)
    assert w.beta_tilde[0] == 1.0
    assert w.alpha[0] == 1.0
    w2 = wle_weights([r], WeightConfig(tau=1.7, gamma=2.5))
    assert w2.alpha[0] == 2.5


def test_weights_worked_example_two():
    r = LikelihoodRecord(log_pos=-6.0, log_negs=(-2.0,))
    w = wle_weights([r], WeightConfig(tau=1.5, gamma=0.5))
    assert abs(w.beta[0][0] - 2.0 / 3.0) < 1e-15
    assert abs(w.beta_tilde[0] - math.e) < 1e-12
    assert abs(w.alpha[0] - math.e) < 1e-12


def test_weights_match_scalar_loop_on_random_records():
    rng = np.random.default_rng(1)
    records = []
    for _ in range(500):
        log_pos = -float(rng.uniform(1e-9, 30))
        negs = tuple(-float(v) for v in rng.uniform(1e-9, 30, size=rng.integers(1, 8)))
        records.append(LikelihoodRecord(log_pos=log_pos, log_negs=negs))
    config = WeightConfig(tau=1.0, gamma=0.5)
    w = wle_weights(records, config)
    oracle = scalar_loop_weights(records, config.tau, config.gamma)
    for got, want in zip(w.alpha, oracle):
        assert abs(got - want) <= 1e-12 * max(1.0, abs(want))


def test_wle_degenerates_to_mle_bitwise():
    rng = np.random.default_rng(2)
    for _ in range(20):
        records = [
            LikelihoodRecord(
                log_pos=-float(rng.uniform(0.01, 20)),
                log_negs=tuple(-float(v) for v in rng.uniform(0.01, 20, size=4)),
            )
            for _ in range(rng.integers(1, 12))
        ]
        for gamma in (0.0, 0.5, 1.0):
            assert wle_loss(records, WeightConfig(tau=0.0, gamma=gamma)) == mle_loss(records)


def test_wle_loss_half_weight_halves_mle():
    # alpha = 0.5 exactly via the gamma floor
    r = LikelihoodRecord(log_pos=-2.0, log_negs=(-8.0,))
    w = wle_weights([r], WeightConfig(tau=1.0, gamma=0.5))
    assert w.alpha[0] == 0.5
    assert wle_loss([r], WeightConfig(tau=1.0, gamma=0.5)) == 0.5 * mle_loss([r])


def test_wle_loss_matches_scalar_recomputation():
    rng = np.random.default_rng(3)
    records = [
        LikelihoodRecord(
            log_pos=-float(rng.uniform(0.1, 10)),
            log_negs=tuple(-float(v) for v in rng.uniform(0.1, 10, size=5)),
        )
        for _ in range(32)
    ]
    config = WeightConfig(tau=1.3, gamma=0.4)
    alphas = scalar_loop_weights(records, config.tau, config.gamma)
    expected = 0.0
    for a, r in zip(alphas, records):
        expected += -(a * r.log_pos)
    assert abs(wle_loss(records, config) - expected) < 1e-12


def test_alpha_floor_always_holds():
    rng = np.random.default_rng(4)
    config = WeightConfig(tau=2.0, gamma=0.8)
    for _ in range(200):
        r = LikelihoodRecord(
            log_pos=-float(rng.uniform(1e-9, 40)),
            log_negs=tuple(-float(v) for v in rng.uniform(1e-9, 40, size=3)),
        )
        assert wle_weights([r], config).alpha[0] >= config.gamma


def test_alpha_monotone_in_positive_and_negatives():
    config = WeightConfig(tau=1.0, gamma=0.1)
    rng = np.random.default_rng(5)
    for _ in range(200):
        pos = -float(rng.uniform(0.5, 10))
        negs = tuple(-float(v) for v in rng.uniform(0.5, 10, size=3))
        base = wle_weights([LikelihoodRecord(pos, negs)], config).alpha[0]
        # better-modeled positive (log_pos raised toward 0) never raises alpha
        better = wle_weights([LikelihoodRecord(pos * 0.5, negs)], config).alpha[0]
        assert better <= base + 1e-15
        # raising any negative never lowers alpha
        for i in range(3):
            raised = list(negs)
            raised[i] = raised[i] * 0.5
            bumped = wle_weights([LikelihoodRecord(pos, tuple(raised))], config).alpha[0]
            assert bumped >= base - 1e-15


def test_adding_dominated_negative_leaves_alpha_unchanged():
    config = WeightConfig(tau=1.2, gamma=0.3)
    r = LikelihoodRecord(log_pos=-4.0, log_negs=(-2.0, -5.0))
    base = wle_weights([r], config).alpha[0]
    # beta of a new negative below the current max: needs log_neg more
    # negative than all others
    extended = LikelihoodRecord(log_pos=-4.0, log_negs=(-2.0, -5.0, -9.0))
    assert wle_weights([extended], config).alpha[0] == base


def test_weights_require_negatives():
    with pytest.raises(ValueError):
        wle_weights([LikelihoodRecord(log_pos=-1.0, log_negs=())], WeightConfig())


def test_config_validation():
    with pytest.raises(ValueError):
        WeightConfig(tau=-0.1)
    with pytest.raises(ValueError):
        WeightConfig(gamma=-1.0)
