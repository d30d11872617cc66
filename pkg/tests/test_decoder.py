import itertools

import numpy as np
import pytest

from minivd.model import DialogueModel
from minivd.tensor import Tensor, backward, no_grad
from minivd.text import BOS, EOS


def make_model(vocab=6, embed=4, hidden=5, seed=0):
    return DialogueModel(vocab, embed, hidden, i_max=1, rng=np.random.default_rng(seed))


def fixed_embedding(model, seed=1):
    rng = np.random.default_rng(seed)
    return Tensor(rng.normal(scale=0.5, size=(model.hidden_dim, 1)))


def test_uniform_logit_decoder_scores_log_v_per_token():
    model = make_model(vocab=9)
    dec = model.decoder
    dec.out.w.data = np.zeros_like(dec.out.w.data)
    dec.out.b.data = np.zeros_like(dec.out.b.data)
    score = dec.score_sequence(fixed_embedding(model), [4, 5, 6])
    assert score.token_count == 3
    assert len(score.per_token) == 4  # three tokens plus EOS
    for v in score.per_token:
        assert abs(v - (-np.log(9))) < 1e-12
    assert abs(score.total - 4 * -np.log(9)) < 1e-12


def test_longer_sequences_score_lower():
    model = make_model()
    dec = model.decoder
    e = fixed_embedding(model)
    short = dec.score_sequence(e, [4])
    long = dec.score_sequence(e, [4, 5])
    # appending a token adds another <=0 term before the EOS term; with the
    # EOS term re-scored, totals still cannot rise above the prefix's
    # token-only mass
    assert long.total <= sum(short.per_token[:-1]) + 0.0
    assert all(v <= 0.0 for v in long.per_token)


def test_total_is_sum_of_per_token():
    model = make_model(seed=4)
    dec = model.decoder
    score = dec.score_sequence(fixed_embedding(model), [4, 5, 4])
    assert abs(score.total - sum(score.per_token)) < 1e-12
    assert 0.0 < np.exp(score.total) <= 1.0


def test_out_of_vocab_token_rejected():
    model = make_model(vocab=6)
    with pytest.raises(ValueError):
        model.decoder.score_sequence(fixed_embedding(model), [6])
    with pytest.raises(ValueError):
        model.decoder.score_sequence(fixed_embedding(model), [])


def test_probability_mass_partition_by_enumeration():
    # chain-rule consistency: over all sequences of length <= L (EOS-
    # terminated) plus all length-L+1 prefixes, probability sums to 1
    model = make_model(vocab=6, seed=7)
    dec = model.decoder
    e = fixed_embedding(model, seed=8)
    alphabet = [v for v in range(6) if v != EOS]
    L = 2
    mass = 0.0
    for length in range(L + 1):
        for seq in itertools.product(alphabet, repeat=length):
            mass += np.exp(dec.score_sequence(e, list(seq)).total) if seq else np.exp(
                dec._decode(e, [()])[0].data[0]
            )
    # prefixes of length L+1 carry the leftover mass (token terms only)
    for seq in itertools.product(alphabet, repeat=L + 1):
        totals, _ = dec._decode(e, [tuple(seq)])
        with no_grad():
            token_mass = sum(dec.score_sequence(e, list(seq)).per_token[:-1])
        mass += np.exp(token_mass)
    assert abs(mass - 1.0) < 1e-9


def test_score_is_independent_of_candidate_order():
    model = make_model(seed=9)
    dec = model.decoder
    e = fixed_embedding(model, seed=10)
    cands = [(4,), (5, 4), (4, 5, 4)]
    solo = [dec.score_sequence(e, list(c)).total for c in cands]
    batched = [s.total for s in dec.score_candidates(e, cands)]
    reversed_batch = [s.total for s in dec.score_candidates(e, cands[::-1])][::-1]
    assert np.allclose(solo, batched, atol=1e-12)
    assert np.allclose(batched, reversed_batch, atol=1e-12)


def test_log_likelihood_matches_score_and_is_differentiable():
    model = make_model(seed=11)
    dec = model.decoder
    e = fixed_embedding(model, seed=12)
    ll = dec.log_likelihood(e, [4, 5])
    score = dec.score_sequence(e, [4, 5])
    assert abs(float(ll.data) - score.total) < 1e-15
    grads = backward(ll)
    assert grads[dec.out.w].shape == dec.out.w.data.shape
    assert np.any(grads[dec.out.w] != 0)


def rig_eos_first(model):
    dec = model.decoder
    dec.out.w.data = np.zeros_like(dec.out.w.data)
    b = np.zeros_like(dec.out.b.data)
    b[EOS, 0] = 5.0
    dec.out.b.data = b


def test_generate_eos_first_gives_empty_answer():
    model = make_model()
    rig_eos_first(model)
    assert model.decoder.generate(fixed_embedding(model), max_len=5) == []


def test_generate_validates_max_len_and_mode():
    model = make_model()
    with pytest.raises(ValueError):
        model.decoder.generate(fixed_embedding(model), max_len=0)
    with pytest.raises(ValueError):
        model.decoder.generate(fixed_embedding(model), max_len=3, mode="sampled")


def test_greedy_equals_beam_one():
    for seed in range(8):
        model = make_model(vocab=8, seed=seed)
        e = fixed_embedding(model, seed=seed + 100)
        greedy = model.decoder.generate(e, max_len=4, mode="greedy")
        beam1 = model.decoder.generate(e, max_len=4, mode=("beam", 1))
        assert greedy == beam1


def exhaustive_best(dec, e, max_len, vocab):
    """Independent search over every sequence of length <= max_len."""
    alphabet = [v for v in range(vocab) if v != EOS]
    best = None
    for length in range(max_len + 1):
        for seq in itertools.product(alphabet, repeat=length):
            totals, per_token = dec._decode(e, [tuple(seq)])
            if length < max_len:
                score = float(totals.data[0])  # includes EOS term
            else:
                score = sum(per_token[0][:-1])  # cut off, no EOS term
            key = (-score, tuple(seq))
            if best is None or key < best[0]:
                best = (key, list(seq))
    return best[1]


@pytest.mark.parametrize("seed", [0, 64])
def test_beam_three_matches_exhaustive_search(seed):
    # sharpened output logits make the search landscape non-trivial: for
    # these pinned seeds beam(3) provably reaches the optimum while plain
    # greedy does not
    model = make_model(vocab=6, seed=seed)
    model.decoder.out.w.data = model.decoder.out.w.data * 14.0
    e = Tensor(np.random.default_rng(seed + 1000).normal(scale=0.8, size=(5, 1)))
    with no_grad():
        expected = exhaustive_best(model.decoder, e, max_len=3, vocab=6)
    got = model.decoder.generate(e, max_len=3, mode=("beam", 3))
    greedy = model.decoder.generate(e, max_len=3, mode="greedy")
    assert got == expected
    assert greedy != expected


def test_rank_candidates_top_score_gets_rank_one():
    model = make_model(seed=30)
    rig_eos_first(model)
    # with EOS rigged dominant, shorter candidates score higher
    e = fixed_embedding(model, seed=31)
    ranking = model.decoder.rank_candidates(e, [(4, 5, 4), (4,), (5, 5)], gt_index=1)
    assert ranking.gt_rank == 1
    assert ranking.order[0] == 1


def test_identical_candidates_tie_break_stably():
    model = make_model(seed=32)
    e = fixed_embedding(model, seed=33)
    cands = [(4, 5)] * 4
    for gt in range(4):
        ranking = model.decoder.rank_candidates(e, cands, gt_index=gt)
        assert ranking.gt_rank == gt + 1
        assert ranking.order == (0, 1, 2, 3)


def test_ranking_is_permutation_and_matches_sort_oracle():
    rng = np.random.default_rng(40)
    model = make_model(vocab=10, seed=41)
    e = fixed_embedding(model, seed=42)
    cands = [tuple(rng.integers(4, 10, size=rng.integers(1, 4))) for _ in range(12)]
    ranking = model.decoder.rank_candidates(e, cands, gt_index=3)
    assert sorted(ranking.order) == list(range(12))
    scores = [s.total for s in model.decoder.score_candidates(e, cands)]
    oracle = [i for _, i in sorted(((-s, i) for i, s in enumerate(scores)))]
    assert list(ranking.order) == oracle
    assert ranking.gt_rank == oracle.index(3) + 1
