"""Parameterized building blocks: embeddings, linear maps, LSTM cells.

Parameters are plain Tensors registered into a shared name -> Tensor
dict so the optimizer and checkpoints see one flat namespace. All
initialization is uniform(-a, a) with a = 1/sqrt(fan_in) from a seeded
generator.
"""

import numpy as np

from .tensor import Tensor, concat, lstm_step, matmul, reshape, slice_rows, take_rows


def uniform_init(rng, shape, fan_in):
    a = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-a, a, size=shape)


class ParameterSet:
    """Flat registry of named parameters."""

    def __init__(self, rng):
        self.rng = rng
        self.params = {}

    def new(self, name, shape, fan_in):
        if name in self.params:
            raise ValueError(f"duplicate parameter name {name!r}")
        t = Tensor(uniform_init(self.rng, shape, fan_in), requires_grad=True)
        self.params[name] = t
        return t


class Embedding:
    def __init__(self, ps, name, vocab_size, dim):
        self.dim = dim
        self.table = ps.new(name, (vocab_size, dim), fan_in=dim)

    def column(self, token_id):
        """(dim, 1) embedding column for one token."""
        return reshape(take_rows(self.table, [int(token_id)]), (self.dim, 1))

    def columns(self, token_ids):
        """(dim, B) embedding columns for a batch of tokens."""
        from .tensor import transpose

        return transpose(take_rows(self.table, list(token_ids)))


class Linear:
    def __init__(self, ps, name, out_dim, in_dim, bias=True):
        self.w = ps.new(f"{name}.w", (out_dim, in_dim), fan_in=in_dim)
        self.b = ps.new(f"{name}.b", (out_dim, 1), fan_in=in_dim) if bias else None

    def __call__(self, x):
        out = matmul(self.w, x)
        if self.b is not None:
            out = out + self.b
        return out


class LSTMCell:
    """Single-layer LSTM over (columns = batch) matrices.

    Gate rows are ordered input, forget, cell, output inside the fused
    step kernel.
    """

    def __init__(self, ps, name, input_dim, hidden_dim):
        self.hidden_dim = hidden_dim
        self.w_x = ps.new(f"{name}.w_x", (4 * hidden_dim, input_dim), fan_in=input_dim)
        self.w_h = ps.new(f"{name}.w_h", (4 * hidden_dim, hidden_dim), fan_in=hidden_dim)
        self.b = ps.new(f"{name}.b", (4 * hidden_dim, 1), fan_in=hidden_dim)

    def zero_state(self, batch=1):
        return (
            Tensor(np.zeros((self.hidden_dim, batch))),
            Tensor(np.zeros((self.hidden_dim, batch))),
        )

    def step(self, x, state, mask=None):
        h, c = state
        out = lstm_step(x, h, c, self.w_x, self.w_h, self.b, mask=mask)
        return (
            slice_rows(out, 0, self.hidden_dim),
            slice_rows(out, self.hidden_dim, 2 * self.hidden_dim),
        )

    def run(self, columns, state=None):
        """Feed a list of (input_dim, 1) columns; returns (per-step h, final state)."""
        if state is None:
            state = self.zero_state(batch=1)
        outputs = []
        for col in columns:
            state = self.step(col, state)
            outputs.append(state[0])
        return outputs, state

    def run_sequences(self, embedding, sequences):
        """Final hidden state per id sequence, as one masked batched run.

        Returns an (H, len(sequences)) tensor whose column i is the state
        after sequence i's last token (padding carries state unchanged).
        """
        if not sequences or any(len(s) == 0 for s in sequences):
            raise ValueError("run_sequences: sequences must be non-empty")
        batch = len(sequences)
        longest = max(len(s) for s in sequences)
        h, c = self.zero_state(batch)
        for t in range(longest):
            ids = [s[t] if t < len(s) else 0 for s in sequences]
            mask = np.array([[1.0 if t < len(s) else 0.0 for s in sequences]])
            x = embedding.columns(ids)
            h, c = self.step(x, (h, c), mask=mask)
        return h
