"""Multi-modal encoder: guided attention plus an adaptive reasoning loop.

Image, question, and history features all live in a shared width-N
space. At each reasoning step the current guide vector attends over
each modality separately, the three attended vectors are merged, and a
recurrent reasoning cell digests the merge and emits the next guide.
The attention order is not hard-coded anywhere: what gets looked at is
determined by the learned guide dynamics.
"""

from dataclasses import dataclass, field

import numpy as np

from .layers import Linear, LSTMCell
from .tensor import Tensor, concat, matmul, reshape, softmax, tanh, transpose


@dataclass
class FeatureBundle:
    """Per-round encoder inputs, all N x M matrices (Tensors)."""

    image: Tensor  # N x (H*W)
    question: Tensor  # N x l_Q, one column per token
    history: Tensor  # N x l_H, one column per round (caption first)

    def __post_init__(self):
        n = self.image.shape[0]
        if self.question.shape[0] != n or self.history.shape[0] != n:
            raise ValueError("feature bundle modalities must share width N")
        if min(self.image.shape[1], self.question.shape[1], self.history.shape[1]) < 1:
            raise ValueError("feature bundle modalities must be non-empty")


@dataclass
class ReasoningTrace:
    """Per-step attention vectors and intermediate features (numpy copies)."""

    image_attention: list = field(default_factory=list)
    question_attention: list = field(default_factory=list)
    history_attention: list = field(default_factory=list)
    attended_image: list = field(default_factory=list)
    attended_question: list = field(default_factory=list)
    attended_history: list = field(default_factory=list)
    merged: list = field(default_factory=list)
    guides: list = field(default_factory=list)

    def __len__(self):
        return len(self.merged)


class GuidedAttention:
    """Attention over one modality's columns, steered by a guide vector."""

    def __init__(self, ps, name, dim):
        self.w_feat = ps.new(f"{name}.w_feat", (dim, dim), fan_in=dim)
        self.w_guide = ps.new(f"{name}.w_guide", (dim, dim), fan_in=dim)
        self.w_att = ps.new(f"{name}.w_att", (dim, 1), fan_in=dim)

    def __call__(self, features, guide):
        """(attention weights (M,), attended feature (N, 1))."""
        if features.shape[1] < 1:
            raise ValueError("guided attention needs at least one feature column")
        # guide column broadcasts across all M feature columns
        energies = tanh(matmul(self.w_feat, features) + matmul(self.w_guide, guide))
        scores = reshape(matmul(transpose(energies), self.w_att), (-1,))
        weights = softmax(scores)
        attended = matmul(features, reshape(weights, (-1, 1)))
        return weights, attended


class ReasoningEncoder:
    """Question/history encoders plus the adaptive attention recurrence."""

    def __init__(self, ps, embedding, hidden_dim):
        self.embedding = embedding
        self.hidden_dim = hidden_dim
        self.question_cell = LSTMCell(ps, "encoder.question_cell", embedding.dim, hidden_dim)
        self.history_cell = LSTMCell(ps, "encoder.history_cell", embedding.dim, hidden_dim)
        self.attend_image = GuidedAttention(ps, "encoder.attend_image", hidden_dim)
        self.attend_question = GuidedAttention(ps, "encoder.attend_question", hidden_dim)
        self.attend_history = GuidedAttention(ps, "encoder.attend_history", hidden_dim)
        self.merge = Linear(ps, "encoder.merge", hidden_dim, 3 * hidden_dim)
        self.reason_cell = LSTMCell(ps, "encoder.reason_cell", hidden_dim, hidden_dim)
        self.embed_out = Linear(ps, "encoder.embed_out", hidden_dim, hidden_dim, bias=False)

    def encode_question(self, token_ids):
        """N x l_Q matrix of per-token recurrent states."""
        if not token_ids:
            raise ValueError("encode_question: empty token list")
        cols = [self.embedding.column(t) for t in token_ids]
        states, _ = self.question_cell.run(cols)
        return concat(states, axis=1)

    def encode_history(self, caption_ids, qa_rounds):
        """N x l_H matrix: caption summary column plus one column per QA round.

        Each QA round is summarized by the final recurrent state over the
        concatenated question-then-answer token ids. All entries run as
        one masked batch through the history cell.
        """
        if not caption_ids:
            raise ValueError("encode_history: empty caption")
        entries = [tuple(caption_ids)]
        for q_ids, a_ids in qa_rounds:
            joined = tuple(q_ids) + tuple(a_ids)
            if not joined:
                raise ValueError("encode_history: empty QA round")
            entries.append(joined)
        return self.history_cell.run_sequences(self.embedding, entries)

    def reason(self, bundle, i_max):
        """(final embedding (N, 1), trace). The initial guide is the final
        question-encoder state (the last column of F_Q)."""
        if i_max < 1:
            raise ValueError("i_max must be >= 1")
        l_q = bundle.question.shape[1]
        guide = reshape(
            matmul(bundle.question, Tensor(_one_hot_col(l_q - 1, l_q))),
            (self.hidden_dim, 1),
        )
        trace = ReasoningTrace()
        state = self.reason_cell.zero_state(batch=1)
        merged = None
        for _ in range(i_max):
            a_img, f_img = self.attend_image(bundle.image, guide)
            a_q, f_q = self.attend_question(bundle.question, guide)
            a_h, f_h = self.attend_history(bundle.history, guide)
            merged = tanh(self.merge(concat([f_q, f_img, f_h], axis=0)))
            state = self.reason_cell.step(merged, state)
            guide = state[0]
            trace.image_attention.append(a_img.data.copy())
            trace.question_attention.append(a_q.data.copy())
            trace.history_attention.append(a_h.data.copy())
            trace.attended_image.append(f_img.data.copy())
            trace.attended_question.append(f_q.data.copy())
            trace.attended_history.append(f_h.data.copy())
            trace.merged.append(merged.data.copy())
            trace.guides.append(guide.data.copy())
        embedding = tanh(self.embed_out(merged))
        return embedding, trace


def _one_hot_col(index, length):
    col = np.zeros((length, 1))
    col[index, 0] = 1.0
    return col
