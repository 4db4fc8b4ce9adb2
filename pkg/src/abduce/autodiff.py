"""Minimal reverse-mode differentiation over float64 numpy arrays.

The policy's computation graph only needs a handful of primitives: affine
maps, tanh, row gathers from an embedding table, concatenation, picked
log-softmax terms and the KL between a frozen softmax and a live one.
Every op here dispatches on its inputs: with plain ndarrays it computes
the value directly (no graph, no overhead beyond numpy), with
:class:`Tensor` inputs it records the node needed for ``backward``. That
lets inference and training share one forward implementation.

All arithmetic is 64-bit; finite-difference checks at 1e-4 tolerance are
not reliable in 32-bit.
"""

from __future__ import annotations

from types import SimpleNamespace

import numpy as np


class Tensor:
    """A value in the computation graph, tracking parents for backprop."""

    __slots__ = ("value", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, value, requires_grad=False, parents=(), backward=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = parents
        self._backward = backward

    def item(self) -> float:
        return float(self.value)

    @property
    def shape(self):
        return self.value.shape

    def backward(self):
        topo, seen = [], set()

        def visit(node):
            if id(node) in seen:
                return
            seen.add(id(node))
            for p in node._parents:
                visit(p)
            topo.append(node)

        visit(self)
        for node in topo:
            node.grad = None
        self.grad = np.ones_like(self.value)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # Scalar algebra used when combining per-example losses.
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division only supported by constants")
        return mul(self, 1.0 / other)


def _is_tensor(x) -> bool:
    return isinstance(x, Tensor)


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _accumulate(node: Tensor, g: np.ndarray):
    if not node.requires_grad and node._backward is None:
        return
    if node.grad is None:
        node.grad = np.zeros_like(node.value)
    node.grad += g


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _node(value, parents, backward) -> Tensor:
    tracked = tuple(p for p in parents if p.requires_grad or p._parents)
    if not tracked:
        return Tensor(value)
    return Tensor(value, requires_grad=True, parents=tracked, backward=backward)


def matmul(a, b):
    if not (_is_tensor(a) or _is_tensor(b)):
        return a @ b
    ta, tb = _lift(a), _lift(b)
    out = ta.value @ tb.value

    def backward(g):
        _accumulate(ta, g @ tb.value.T)
        _accumulate(tb, ta.value.T @ g)

    return _node(out, (ta, tb), backward)


def add(a, b):
    if not (_is_tensor(a) or _is_tensor(b)):
        return a + b
    ta, tb = _lift(a), _lift(b)
    out = ta.value + tb.value

    def backward(g):
        _accumulate(ta, _unbroadcast(g, ta.value.shape))
        _accumulate(tb, _unbroadcast(g, tb.value.shape))

    return _node(out, (ta, tb), backward)


def mul(a, b):
    if not (_is_tensor(a) or _is_tensor(b)):
        return a * b
    ta, tb = _lift(a), _lift(b)
    out = ta.value * tb.value

    def backward(g):
        _accumulate(ta, _unbroadcast(g * tb.value, ta.value.shape))
        _accumulate(tb, _unbroadcast(g * ta.value, tb.value.shape))

    return _node(out, (ta, tb), backward)


def tanh(a):
    if not _is_tensor(a):
        return np.tanh(a)
    out = np.tanh(a.value)

    def backward(g):
        _accumulate(a, g * (1.0 - out * out))

    return _node(out, (a,), backward)


def gather_rows(table, idx):
    """``table[idx]`` with scatter-add backward into the table."""
    idx = np.asarray(idx)
    if not _is_tensor(table):
        return table[idx]
    out = table.value[idx]

    def backward(g):
        gt = np.zeros_like(table.value)
        np.add.at(gt, idx, g)
        _accumulate(table, gt)

    return _node(out, (table,), backward)


def reshape(a, shape):
    if not _is_tensor(a):
        return a.reshape(shape)
    out = a.value.reshape(shape)

    def backward(g):
        _accumulate(a, g.reshape(a.value.shape))

    return _node(out, (a,), backward)


def concat(parts, axis):
    if not any(_is_tensor(p) for p in parts):
        return np.concatenate(parts, axis=axis)
    lifted = [_lift(p) for p in parts]
    out = np.concatenate([p.value for p in lifted], axis=axis)
    sizes = [p.value.shape[axis] for p in lifted]

    def backward(g):
        offset = 0
        for p, size in zip(lifted, sizes):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(offset, offset + size)
            _accumulate(p, g[tuple(sl)])
            offset += size

    return _node(out, tuple(lifted), backward)


def asum(a):
    """Sum of all elements."""
    if not _is_tensor(a):
        return a.sum()
    out = a.value.sum()

    def backward(g):
        _accumulate(a, np.ones_like(a.value) * g)

    return _node(out, (a,), backward)


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    m = logits.max(axis=-1, keepdims=True)
    shifted = logits - m
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    return np.exp(_log_softmax(logits))


def logprob_picks(logits, targets):
    """Sum over rows of ``log_softmax(logits)[row, targets[row]]``."""
    targets = np.asarray(targets, dtype=np.int64)
    rows = np.arange(len(targets))
    if not _is_tensor(logits):
        return float(_log_softmax(logits)[rows, targets].sum())
    ls = _log_softmax(logits.value)
    out = ls[rows, targets].sum()

    def backward(g):
        grad = -np.exp(ls)
        grad[rows, targets] += 1.0
        _accumulate(logits, grad * g)

    return _node(out, (logits,), backward)


def kl_rows_sum(p0, logits):
    """Sum over rows of KL(p0_row || softmax(logits_row)); p0 is constant."""
    p0 = np.asarray(p0, dtype=np.float64)
    live = logits.value if _is_tensor(logits) else logits
    ls = _log_softmax(live)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p0 > 0, p0 * (np.log(np.where(p0 > 0, p0, 1.0)) - ls), 0.0)
    out = terms.sum()
    if not _is_tensor(logits):
        return float(out)

    def backward(g):
        _accumulate(logits, (np.exp(ls) - p0) * g)

    return _node(out, (logits,), backward)


def mean_scalars(scalars):
    """Mean of a nonempty list of scalar floats / 0-d tensors."""
    total = scalars[0]
    for s in scalars[1:]:
        total = add(total, s)
    return mul(total, 1.0 / len(scalars))


# ---------------------------------------------------------------------------
# Gradient machinery over named-parameter objects.

# Gradients are a plain mapping from parameter-array name to an ndarray of
# the same shape.
Gradients = dict


def _tensor_view(params):
    view = SimpleNamespace(
        vocab_size=params.vocab_size, dim=params.dim, window=params.window
    )
    leaves = {}
    for name in params.ARRAY_FIELDS:
        leaf = Tensor(getattr(params, name), requires_grad=True)
        leaves[name] = leaf
        setattr(view, name, leaf)
    return view, leaves


def _array_view(params, perturb=None):
    view = SimpleNamespace(
        vocab_size=params.vocab_size, dim=params.dim, window=params.window
    )
    for name in params.ARRAY_FIELDS:
        arr = np.array(getattr(params, name))
        if perturb is not None and perturb[0] == name:
            arr.flat[perturb[1]] += perturb[2]
        setattr(view, name, arr)
    return view


def grad(loss_fn, params):
    """Evaluate ``loss_fn`` at ``params`` and return (loss, gradients).

    ``loss_fn`` must be built from the ops in this module; it receives a
    parameter view whose arrays are graph leaves.
    """
    view, leaves = _tensor_view(params)
    out = loss_fn(view)
    if isinstance(out, Tensor):
        loss = out.item()
    else:
        loss = float(out)
    if not np.isfinite(loss):
        raise FloatingPointError(f"non-finite loss: {loss}")
    grads = {name: np.zeros_like(getattr(params, name)) for name in params.ARRAY_FIELDS}
    if isinstance(out, Tensor):
        out.backward()
        for name, leaf in leaves.items():
            if leaf.grad is not None:
                grads[name] = leaf.grad
    return loss, grads


def sgd_step(params, grads: Gradients, lr: float):
    """One plain gradient-descent step, returning a new parameter snapshot.

    lr=0 is allowed and leaves the parameters unchanged, which gives
    trainers a cheap identity mode for reproducibility checks.
    """
    if lr < 0:
        raise ValueError("learning rate must be nonnegative")
    updated = {
        name: getattr(params, name) - lr * grads[name] for name in params.ARRAY_FIELDS
    }
    return params.with_arrays(**updated)


def finite_diff_check(
    loss_fn,
    params,
    step: float = 1e-5,
    max_exact: int = 10_000,
    sample_fraction: float = 0.01,
    seed: int = 0,
    corrupt: bool = False,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    Every coordinate is checked exactly unless the parameter count exceeds
    ``max_exact``, in which case a seeded ``sample_fraction`` of coordinates
    per array is checked. The relative-error denominator is
    ``max(|analytic|, |numeric|, 1e-12)``. ``corrupt=True`` injects +1 into
    one analytic coordinate so a broken comparison is detectable.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    _, analytic = grad(loss_fn, params)
    if corrupt:
        first = params.ARRAY_FIELDS[0]
        analytic[first] = np.array(analytic[first])
        analytic[first].flat[0] += 1.0
    total = sum(getattr(params, n).size for n in params.ARRAY_FIELDS)
    rng = np.random.default_rng(seed)
    max_err = 0.0
    for name in params.ARRAY_FIELDS:
        size = getattr(params, name).size
        if total <= max_exact:
            coords = range(size)
        else:
            k = max(1, int(np.ceil(size * sample_fraction)))
            coords = sorted(rng.choice(size, size=k, replace=False).tolist())
        for flat in coords:
            plus = loss_fn(_array_view(params, perturb=(name, flat, +step)))
            minus = loss_fn(_array_view(params, perturb=(name, flat, -step)))
            numeric = (float(plus) - float(minus)) / (2.0 * step)
            a = float(analytic[name].flat[flat])
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-12)
            max_err = max(max_err, err)
    return max_err
