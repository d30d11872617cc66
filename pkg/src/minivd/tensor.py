"""Dense double-precision tensors with reverse-mode gradients.

Every value in the model lives in a `Tensor` wrapping a float64 ndarray.
Primitive ops record their inputs and a backward closure on the output
tensor; `backward(root)` walks the recorded graph in reverse topological
order and accumulates gradients into a `Gradients` map keyed by tensor
identity. Graph construction is single-threaded and tensors are treated
as immutable once created (parameter data may only be rewritten between
steps, when no live graph references it).

Reductions use numpy's fixed row-major evaluation order, so identical
inputs produce bitwise-identical outputs.
"""

from contextlib import contextmanager

import numpy as np


class ShapeError(ValueError):
    """Raised when an op receives incompatible operand shapes."""

    def __init__(self, op, *shapes):
        self.op = op
        self.shapes = tuple(tuple(s) for s in shapes)
        super().__init__(f"{op}: incompatible shapes {' vs '.join(map(str, self.shapes))}")


_grad_enabled = True


@contextmanager
def no_grad():
    """Disable graph recording inside the block (evaluation mode)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled():
    return _grad_enabled


class Tensor:
    __slots__ = ("data", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None, _check=True):
        arr = np.asarray(data, dtype=np.float64)
        if _check and not np.all(np.isfinite(arr)):
            raise ValueError("Tensor rejects non-finite values at construction")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self._not_scalar()

    def _not_scalar(self):
        raise ValueError(f"item() needs a scalar tensor, got shape {self.data.shape}")

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # Operator sugar; everything routes through the module-level primitives.
    def __add__(self, other):
        return add(self, _coerce(other))

    def __radd__(self, other):
        return add(_coerce(other), self)

    def __sub__(self, other):
        return sub(self, _coerce(other))

    def __rsub__(self, other):
        return sub(_coerce(other), self)

    def __mul__(self, other):
        return mul(self, _coerce(other))

    def __rmul__(self, other):
        return mul(_coerce(other), self)

    def __neg__(self):
        return mul(self, Tensor(-1.0))

    def __matmul__(self, other):
        return matmul(self, other)


def _coerce(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward_fn):
    """Wrap an op result; record the graph only when a grad path exists."""
    if _grad_enabled and any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, _parents=tuple(parents), _backward=backward_fn, _check=False)
    return Tensor(data, _check=False)


def _unbroadcast(g, shape):
    """Sum gradient `g` down to `shape` (reverse of numpy broadcasting)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ---------------------------------------------------------------- primitives

def add(a, b):
    a, b = _coerce(a), _coerce(b)
    try:
        out = a.data + b.data
    except ValueError:
        raise ShapeError("add", a.shape, b.shape) from None

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(out, (a, b), backward)


def sub(a, b):
    a, b = _coerce(a), _coerce(b)
    try:
        out = a.data - b.data
    except ValueError:
        raise ShapeError("sub", a.shape, b.shape) from None

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(out, (a, b), backward)


def mul(a, b):
    a, b = _coerce(a), _coerce(b)
    try:
        out = a.data * b.data
    except ValueError:
        raise ShapeError("mul", a.shape, b.shape) from None

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(out, (a, b), backward)


def matmul(a, b):
    a, b = _coerce(a), _coerce(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError("matmul", a.shape, b.shape)
    out = a.data @ b.data

    def backward(g):
        return g @ b.data.T, a.data.T @ g

    return _make(out, (a, b), backward)


def transpose(a):
    if a.data.ndim != 2:
        raise ShapeError("transpose", a.shape)
    out = a.data.T

    def backward(g):
        return (g.T,)

    return _make(out, (a,), backward)


def reshape(a, shape):
    out = a.data.reshape(shape)

    def backward(g):
        return (g.reshape(a.shape),)

    return _make(out, (a,), backward)


def tanh(a):
    a = _coerce(a)
    y = np.tanh(a.data)

    def backward(g):
        return (g * (1.0 - y * y),)

    return _make(y, (a,), backward)


def sigmoid(a):
    a = _coerce(a)
    y = 1.0 / (1.0 + np.exp(-a.data))

    def backward(g):
        return (g * y * (1.0 - y),)

    return _make(y, (a,), backward)


def exp(a):
    a = _coerce(a)
    y = np.exp(a.data)

    def backward(g):
        return (g * y,)

    return _make(y, (a,), backward)


def log(a):
    a = _coerce(a)
    with np.errstate(invalid="ignore", divide="ignore"):
        y = np.log(a.data)

    def backward(g):
        return (g / a.data,)

    return _make(y, (a,), backward)


def concat(tensors, axis=0):
    tensors = [_coerce(t) for t in tensors]
    if not tensors:
        raise ValueError("concat: empty tensor list")
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError("concat", *[t.shape for t in tensors]) from None
    extents = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + extents)

    def backward(g):
        return tuple(
            np.take(g, np.arange(offsets[i], offsets[i + 1]), axis=axis)
            for i in range(len(tensors))
        )

    return _make(out, tensors, backward)


def slice_rows(a, start, stop):
    """Rows [start:stop) of a 2-D tensor."""
    if a.data.ndim != 2:
        raise ShapeError("slice_rows", a.shape)
    out = a.data[start:stop]

    def backward(g):
        full = np.zeros_like(a.data)
        full[start:stop] = g
        return (full,)

    return _make(out, (a,), backward)


def row_select(table, index):
    """Row `index` of a 2-D table (or element of a 1-D vector)."""
    index = int(index)
    if index < 0 or index >= table.shape[0]:
        raise IndexError(f"row_select: index {index} out of range for shape {table.shape}")
    out = table.data[index]

    def backward(g):
        full = np.zeros_like(table.data)
        full[index] = g
        return (full,)

    return _make(out, (table,), backward)


def take_rows(table, indices):
    """Rows `indices` of a 2-D table, stacked in order (len(indices) x cols)."""
    if table.data.ndim != 2:
        raise ShapeError("take_rows", table.shape)
    idx = np.asarray(indices, dtype=np.intp)
    if idx.ndim != 1:
        raise ValueError("take_rows: indices must be 1-D")
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise IndexError(f"take_rows: indices out of range for shape {table.shape}")
    out = table.data[idx]

    def backward(g):
        full = np.zeros_like(table.data)
        np.add.at(full, idx, g)
        return (full,)

    return _make(out, (table,), backward)


def gather_cols(m, row_indices):
    """out[j] = m[row_indices[j], j] for a 2-D tensor; returns a vector."""
    if m.data.ndim != 2:
        raise ShapeError("gather_cols", m.shape)
    idx = np.asarray(row_indices, dtype=np.intp)
    cols = np.arange(m.shape[1])
    if idx.shape != (m.shape[1],):
        raise ShapeError("gather_cols", m.shape, idx.shape)
    if idx.size and (idx.min() < 0 or idx.max() >= m.shape[0]):
        raise IndexError(f"gather_cols: row indices out of range for shape {m.shape}")
    out = m.data[idx, cols]

    def backward(g):
        full = np.zeros_like(m.data)
        full[idx, cols] = g
        return (full,)

    return _make(out, (m,), backward)


def tsum(a, axis=None, keepdims=False):
    a = _coerce(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy() if np.ndim(g) == 0 else np.full(a.shape, g),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, a.shape).copy(),)

    return _make(out, (a,), backward)


def tmean(a, axis=None, keepdims=False):
    a = _coerce(a)
    if axis is None:
        count = a.data.size
    else:
        count = a.shape[axis]
    return mul(tsum(a, axis=axis, keepdims=keepdims), Tensor(1.0 / count))


def softmax(x):
    """Stable softmax of a 1-D tensor onto the probability simplex."""
    x = _coerce(x)
    if x.data.ndim != 1 or x.data.size == 0:
        raise ShapeError("softmax", x.shape)
    shifted = x.data - x.data.max()
    e = np.exp(shifted)
    y = e / e.sum()

    def backward(g):
        dot = float(np.dot(g, y))
        return (y * (g - dot),)

    return _make(y, (x,), backward)


def log_softmax_cols(x):
    """Column-wise log-softmax of a 2-D tensor (each column a logit vector).

    The per-column max is treated as a constant shift, which leaves the
    gradient exact while keeping the exp in a safe range.
    """
    x = _coerce(x)
    if x.data.ndim != 2:
        raise ShapeError("log_softmax_cols", x.shape)
    m = Tensor(x.data.max(axis=0, keepdims=True))
    shifted = sub(x, m)
    lse = add(log(tsum(exp(shifted), axis=0, keepdims=True)), m)
    return sub(x, lse)


def log_softmax_pick(logits, targets, mask=None):
    """Per-column log-softmax probability of each column's target row.

    logits: (V, B); targets: B ints. Returns a (B,) tensor of picked
    log-probs; columns with mask 0 yield exactly 0 and no gradient.
    """
    if logits.data.ndim != 2:
        raise ShapeError("log_softmax_pick", logits.shape)
    v, b = logits.shape
    idx = np.asarray(targets, dtype=np.intp)
    if idx.shape != (b,):
        raise ShapeError("log_softmax_pick", logits.shape, idx.shape)
    if idx.size and (idx.min() < 0 or idx.max() >= v):
        raise IndexError(f"log_softmax_pick: target out of range for {v} rows")
    m = np.ones(b) if mask is None else np.asarray(mask, dtype=np.float64).reshape(b)
    shifted = logits.data - logits.data.max(axis=0, keepdims=True)
    e = np.exp(shifted)
    denom = e.sum(axis=0)
    p = e / denom
    cols = np.arange(b)
    logp = shifted[idx, cols] - np.log(denom)
    out = logp * m

    def backward(g):
        scale = g * m
        grad = p * (-scale)
        grad[idx, cols] += scale
        return (grad,)

    return _make(out, (logits,), backward)


def lstm_step(x, h, c, w_x, w_h, b, mask=None):
    """One fused LSTM step over a batch of columns.

    x: (E, B) inputs; h, c: (H, B) state; w_x: (4H, E); w_h: (4H, H);
    b: (4H, 1). Gate rows are ordered input, forget, cell, output.
    `mask` is an optional (1, B) array of 0/1; masked-out columns carry
    their previous state through unchanged.

    Returns a (2H, B) tensor holding [h'; c'] (split with `slice_rows`).
    """
    hidden = h.shape[0]
    if (
        w_x.shape != (4 * hidden, x.shape[0])
        or w_h.shape != (4 * hidden, hidden)
        or b.shape != (4 * hidden, 1)
        or c.shape != h.shape
        or x.shape[1] != h.shape[1]
    ):
        raise ShapeError("lstm_step", x.shape, h.shape, c.shape, w_x.shape, w_h.shape, b.shape)
    if mask is not None:
        mask = np.asarray(mask, dtype=np.float64).reshape(1, -1)
        if mask.shape[1] != x.shape[1]:
            raise ShapeError("lstm_step mask", mask.shape, x.shape)

    z = w_x.data @ x.data + w_h.data @ h.data + b.data
    i = 1.0 / (1.0 + np.exp(-z[:hidden]))
    f = 1.0 / (1.0 + np.exp(-z[hidden : 2 * hidden]))
    g = np.tanh(z[2 * hidden : 3 * hidden])
    o = 1.0 / (1.0 + np.exp(-z[3 * hidden :]))
    c_new = f * c.data + i * g
    tc = np.tanh(c_new)
    h_new = o * tc
    if mask is not None:
        h_out = mask * h_new + (1.0 - mask) * h.data
        c_out = mask * c_new + (1.0 - mask) * c.data
    else:
        h_out, c_out = h_new, c_new
    out = np.concatenate([h_out, c_out], axis=0)

    def backward(grad):
        gh_out = grad[:hidden]
        gc_out = grad[hidden:]
        if mask is not None:
            gh_new = mask * gh_out
            gc_new = mask * gc_out
            gh_carry = (1.0 - mask) * gh_out
            gc_carry = (1.0 - mask) * gc_out
        else:
            gh_new, gc_new = gh_out, gc_out
            gh_carry = gc_carry = 0.0
        go = gh_new * tc
        gc = gc_new + gh_new * o * (1.0 - tc * tc)
        gf = gc * c.data
        gi = gc * g
        gg = gc * i
        dz = np.concatenate(
            [
                gi * i * (1.0 - i),
                gf * f * (1.0 - f),
                gg * (1.0 - g * g),
                go * o * (1.0 - o),
            ],
            axis=0,
        )
        gx = w_x.data.T @ dz
        gh = w_h.data.T @ dz + gh_carry
        gc_in = gc * f + gc_carry
        gwx = dz @ x.data.T
        gwh = dz @ h.data.T
        gb = dz.sum(axis=1, keepdims=True)
        return gx, gh, gc_in, gwx, gwh, gb

    return _make(out, (x, h, c, w_x, w_h, b), backward)


# ------------------------------------------------------------------ backward

class Gradients:
    """Map from tensor identity to its accumulated gradient array.

    Tensors that require grad but did not contribute to the root read
    back as zeros of their own shape.
    """

    def __init__(self, entries):
        self._entries = entries  # id(tensor) -> (tensor, ndarray)

    def __contains__(self, tensor):
        return id(tensor) in self._entries

    def __getitem__(self, tensor):
        hit = self._entries.get(id(tensor))
        if hit is not None:
            return hit[1]
        if tensor.requires_grad:
            return np.zeros_like(tensor.data)
        raise KeyError("tensor does not require grad and is not on the tape")

    def __len__(self):
        return len(self._entries)


def backward(root):
    """Gradients of a scalar `root` w.r.t. every requires_grad tensor below it."""
    if root.data.size != 1:
        raise ValueError(f"backward needs a scalar root, got shape {root.data.shape}")

    # Iterative reverse topological order (graphs outgrow the recursion limit).
    topo = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))

    grads = {id(root): (root, np.ones_like(root.data))}
    for node in reversed(topo):
        if node._backward is None:
            continue
        g = grads.get(id(node))
        if g is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g[1])):
            if not (parent.requires_grad or parent._backward is not None):
                continue
            slot = grads.get(id(parent))
            if slot is None:
                grads[id(parent)] = (parent, np.asarray(pg, dtype=np.float64).reshape(parent.shape).copy())
            else:
                slot[1].__iadd__(np.asarray(pg, dtype=np.float64).reshape(parent.shape))

    return Gradients({k: v for k, v in grads.items() if v[0].requires_grad})
