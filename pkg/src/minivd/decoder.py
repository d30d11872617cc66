"""Generative recurrent decoder: sequence scoring, generation, ranking.

The decoder is a single LSTM conditioned on the encoder embedding as
its initial hidden state. Scoring is teacher-forced log-likelihood
including the closing EOS term; ranking and weighted-likelihood
training both consume these scores, and candidates of one set are
scored in a single batched pass so the path is identical everywhere.
"""

from dataclasses import dataclass

import numpy as np

from .layers import Linear, LSTMCell
from .tensor import (
    Tensor,
    add,
    log_softmax_cols,
    log_softmax_pick,
    matmul,
    no_grad,
    row_select,
)
from .text import BOS, EOS, PAD


@dataclass(frozen=True)
class SequenceScore:
    total: float  # sum of per-token log-probs, EOS included
    per_token: tuple
    token_count: int

    def __post_init__(self):
        if any(v > 0.0 for v in self.per_token):
            raise ValueError("log-probabilities must be <= 0")


@dataclass(frozen=True)
class Ranking:
    order: tuple  # candidate indices, best first
    gt_rank: int  # 1-based rank of the ground-truth candidate


class Decoder:
    def __init__(self, ps, embedding, hidden_dim, vocab_size):
        self.embedding = embedding
        self.hidden_dim = hidden_dim
        self.vocab_size = vocab_size
        self.cell = LSTMCell(ps, "decoder.cell", embedding.dim, hidden_dim)
        self.out = Linear(ps, "decoder.out", vocab_size, hidden_dim)

    def _check_ids(self, token_ids):
        if not token_ids:
            raise ValueError("decoder: empty token sequence")
        for t in token_ids:
            if not 0 <= t < self.vocab_size:
                raise ValueError(f"decoder: token id {t} outside vocabulary of {self.vocab_size}")

    def _decode(self, embedding, sequences):
        """Teacher-forced log-probs for a batch of sequences sharing one context.

        Returns (totals Tensor of shape (B,), per-token float lists). Each
        sequence is scored as BOS -> tokens -> EOS; shorter sequences are
        masked out once their EOS has been scored.
        """
        batch = len(sequences)
        lengths = [len(s) for s in sequences]
        steps = max(lengths) + 1  # +1 scores the closing EOS
        h = matmul(embedding, Tensor(np.ones((1, batch))))
        c = Tensor(np.zeros((self.hidden_dim, batch)))
        prev = [BOS] * batch
        totals = Tensor(np.zeros(batch))
        per_token = [[] for _ in range(batch)]
        for t in range(steps):
            targets = [
                seq[t] if t < n else (EOS if t == n else PAD)
                for seq, n in zip(sequences, lengths)
            ]
            mask = np.array([1.0 if t <= n else 0.0 for n in lengths])
            x = self.embedding.columns(prev)
            h, c = self.cell.step(x, (h, c), mask=mask.reshape(1, -1))
            picked = log_softmax_pick(self.out(h), targets, mask=mask)
            totals = add(totals, picked)
            for b in range(batch):
                if t <= lengths[b]:
                    per_token[b].append(float(picked.data[b]))
            prev = targets
        return totals, per_token

    def log_likelihood(self, embedding, token_ids):
        """Scalar Tensor log p(tokens, EOS | embedding); differentiable."""
        self._check_ids(token_ids)
        totals, _ = self._decode(embedding, [tuple(token_ids)])
        return row_select(totals, 0)

    def score_sequence(self, embedding, token_ids):
        self._check_ids(token_ids)
        with no_grad():
            totals, per_token = self._decode(embedding, [tuple(token_ids)])
        return SequenceScore(
            total=float(totals.data[0]),
            per_token=tuple(per_token[0]),
            token_count=len(token_ids),
        )

    def score_candidates(self, embedding, candidate_token_ids):
        """SequenceScores for a whole candidate set in one batched pass."""
        for seq in candidate_token_ids:
            self._check_ids(seq)
        with no_grad():
            totals, per_token = self._decode(
                embedding, [tuple(s) for s in candidate_token_ids]
            )
        return [
            SequenceScore(total=float(totals.data[b]), per_token=tuple(per_token[b]), token_count=len(candidate_token_ids[b]))
            for b in range(len(candidate_token_ids))
        ]

    def _step_logp(self, prev_ids, state):
        """One decode step for a batch of hypotheses; returns (logp array, state)."""
        x = self.embedding.columns(prev_ids)
        h, c = self.cell.step(x, state)
        logp = log_softmax_cols(self.out(h))
        return logp.data, (h, c)

    def generate(self, embedding, max_len, mode="greedy"):
        """Decode a response; `mode` is "greedy" or ("beam", k).

        Greedy takes the argmax token each step until EOS or max_len.
        Beam keeps the k best partial log-likelihoods; score ties prefer
        the lower token id. Completed sequences include the EOS term;
        sequences cut off at max_len do not.
        """
        if max_len < 1:
            raise ValueError("max_len must be >= 1")
        if mode == "greedy":
            mode = ("beam", 1)
        if not (isinstance(mode, tuple) and mode[0] == "beam" and mode[1] >= 1):
            raise ValueError(f"unknown generation mode {mode!r}")
        k = mode[1]

        with no_grad():
            h = matmul(embedding, Tensor(np.ones((1, 1))))
            c = Tensor(np.zeros((self.hidden_dim, 1)))
            live = [((), 0.0, BOS, (h, c))]  # (tokens, score, prev token, state)
            finished = []
            for _ in range(max_len):
                prev_ids = [hyp[2] for hyp in live]
                h_all = Tensor(np.concatenate([hyp[3][0].data for hyp in live], axis=1))
                c_all = Tensor(np.concatenate([hyp[3][1].data for hyp in live], axis=1))
                logp, (h_new, c_new) = self._step_logp(prev_ids, (h_all, c_all))
                expansions = []
                for j, (tokens, score, _, _) in enumerate(live):
                    for v in range(self.vocab_size):
                        expansions.append((score + logp[v, j], v, j, tokens))
                expansions.sort(key=lambda e: (-e[0], e[1], e[2]))
                next_live = []
                for score, v, j, tokens in expansions[:k]:
                    if v == EOS:
                        finished.append((tokens, score))
                    else:
                        state_j = (
                            Tensor(h_new.data[:, j : j + 1]),
                            Tensor(c_new.data[:, j : j + 1]),
                        )
                        next_live.append((tokens + (v,), score, v, state_j))
                live = next_live
                if not live:
                    break
            # hypotheses cut off at max_len compete without an EOS term
            candidates = finished + [(tokens, score) for tokens, score, _, _ in live]
        best = min(candidates, key=lambda ts: (-ts[1], ts[0]))
        return list(best[0])

    def rank_candidates(self, embedding, candidate_token_ids, gt_index):
        """Stable descending sort of candidates by total log-likelihood."""
        if not candidate_token_ids:
            raise ValueError("rank_candidates: empty candidate set")
        scores = self.score_candidates(embedding, candidate_token_ids)
        order = sorted(
            range(len(scores)), key=lambda i: (-scores[i].total, i)
        )
        return Ranking(order=tuple(order), gt_rank=order.index(gt_index) + 1)
