"""Reverse-mode automatic differentiation over small dense tensors.

Every primitive stores its parents and a backward closure on the result
node; ``backward`` walks the recorded graph once in reverse topological
order. Everything is float64 and CPU-only: the engine exists to make
desk-scale losses exactly differentiable, not to be fast.

Subgradient conventions: max-style reductions route the gradient to the
first maximal element, elementwise maximum/minimum route ties to the
first argument, and relu'(0) = 0.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np


class ShapeError(ValueError):
    pass


class DomainError(ValueError):
    pass


_TIE_EPS = 1e-9


class Tensor:
    __slots__ = ("value", "requires_grad", "grad", "_parents", "_backward_fn", "_tie_gap")

    def __init__(self, value, requires_grad: bool = False):
        self.value = np.asarray(value, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._parents: tuple["Tensor", ...] = ()
        self._backward_fn: Optional[Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]] = None
        # smallest margin by which a max-style choice was decided here
        self._tie_gap = np.inf

    @property
    def shape(self):
        return self.value.shape

    def item(self) -> float:
        return float(self.value)

    def __repr__(self):
        return f"Tensor(shape={self.value.shape}, requires_grad={self.requires_grad})"

    # operator sugar used throughout the model code
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def tensor(value, requires_grad: bool = False) -> Tensor:
    return Tensor(value, requires_grad=requires_grad)


def constant(value) -> Tensor:
    return Tensor(value, requires_grad=False)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(value: np.ndarray, parents: tuple[Tensor, ...],
          backward_fn, tie_gap: float = np.inf) -> Tensor:
    if not np.all(np.isfinite(value)):
        raise OverflowError("non-finite values produced by a primitive")
    out = Tensor(value, requires_grad=any(p.requires_grad for p in parents))
    if out.requires_grad:
        out._parents = parents
        out._backward_fn = backward_fn
    out._tie_gap = tie_gap
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the parent's shape."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    value = a.value + b.value
    return _node(value, (a, b), lambda g: (_unbroadcast(g, a.value.shape),
                                           _unbroadcast(g, b.value.shape)))


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    value = a.value - b.value
    return _node(value, (a, b), lambda g: (_unbroadcast(g, a.value.shape),
                                           _unbroadcast(-g, b.value.shape)))


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    value = a.value * b.value
    return _node(value, (a, b), lambda g: (_unbroadcast(g * b.value, a.value.shape),
                                           _unbroadcast(g * a.value, b.value.shape)))


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if np.any(b.value == 0.0):
        raise DomainError("division by zero")
    value = a.value / b.value
    return _node(value, (a, b),
                 lambda g: (_unbroadcast(g / b.value, a.value.shape),
                            _unbroadcast(-g * a.value / (b.value * b.value), b.value.shape)))


def neg(a) -> Tensor:
    a = _as_tensor(a)
    return _node(-a.value, (a,), lambda g: (-g,))


# ---------------------------------------------------------------------------
# nonlinearities


def exp(a) -> Tensor:
    a = _as_tensor(a)
    with np.errstate(over="ignore"):  # surfaced as OverflowError in _node
        value = np.exp(a.value)
    return _node(value, (a,), lambda g: (g * value,))


def log(a) -> Tensor:
    a = _as_tensor(a)
    if np.any(a.value <= 0.0):
        raise DomainError("log of a non-positive value")
    return _node(np.log(a.value), (a,), lambda g: (g / a.value,))


def sqrt(a) -> Tensor:
    a = _as_tensor(a)
    if np.any(a.value < 0.0):
        raise DomainError("sqrt of a negative value")
    value = np.sqrt(a.value)
    return _node(value, (a,), lambda g: (g * 0.5 / value,))


def relu(a) -> Tensor:
    a = _as_tensor(a)
    gate = (a.value > 0.0).astype(np.float64)
    return _node(a.value * gate, (a,), lambda g: (g * gate,))


def tanh(a) -> Tensor:
    a = _as_tensor(a)
    value = np.tanh(a.value)
    return _node(value, (a,), lambda g: (g * (1.0 - value * value),))


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    x = a.value
    value = np.where(x >= 0.0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                     np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    return _node(value, (a,), lambda g: (g * value * (1.0 - value),))


# ---------------------------------------------------------------------------
# structural ops


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.value.ndim not in (1, 2) or b.value.ndim not in (1, 2):
        raise ShapeError("matmul supports 1-D and 2-D operands only")
    try:
        value = a.value @ b.value
    except ValueError as err:
        raise ShapeError(str(err)) from None

    def backward(g):
        av, bv = a.value, b.value
        if av.ndim == 1 and bv.ndim == 1:
            return (g * bv, g * av)
        if av.ndim == 2 and bv.ndim == 2:
            return (g @ bv.T, av.T @ g)
        if av.ndim == 2 and bv.ndim == 1:
            return (np.outer(g, bv), av.T @ g)
        return (g @ bv.T, np.outer(av, g))

    return _node(value, (a, b), backward)


def transpose(a) -> Tensor:
    a = _as_tensor(a)
    if a.value.ndim != 2:
        raise ShapeError("transpose expects a 2-D tensor")
    return _node(a.value.T.copy(), (a,), lambda g: (g.T,))


def narrow(a, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice along one axis."""
    a = _as_tensor(a)
    if axis >= a.value.ndim or start + length > a.value.shape[axis]:
        raise ShapeError(f"narrow out of range for shape {a.value.shape}")
    idx = [slice(None)] * a.value.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)

    def backward(g):
        full = np.zeros_like(a.value)
        full[idx] = g
        return (full,)

    return _node(a.value[idx].copy(), (a,), backward)


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    parts = [_as_tensor(p) for p in parts]
    value = np.concatenate([p.value for p in parts], axis=axis)
    sizes = [p.value.shape[axis] for p in parts]

    def backward(g):
        out = []
        offset = 0
        for p, size in zip(parts, sizes):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(offset, offset + size)
            out.append(g[tuple(idx)])
            offset += size
        return tuple(out)

    return _node(value, tuple(parts), backward)


def stack(scalars: Sequence[Tensor]) -> Tensor:
    """Stack 0-d tensors into a vector."""
    scalars = [_as_tensor(s) for s in scalars]
    for s in scalars:
        if s.value.ndim != 0:
            raise ShapeError("stack expects 0-d tensors")
    value = np.array([s.value for s in scalars], dtype=np.float64)
    return _node(value, tuple(scalars),
                 lambda g: tuple(np.asarray(g[i]) for i in range(len(scalars))))


def reduce_sum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    value = a.value.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        g = np.asarray(g)
        if axis is None:
            return (np.full_like(a.value, float(g)),)
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.value.shape).copy(),)

    return _node(value, (a,), backward)


def mean(a, axis=None) -> Tensor:
    a = _as_tensor(a)
    count = a.value.size if axis is None else a.value.shape[axis]
    return mul(reduce_sum(a, axis=axis), 1.0 / count)


def max_over_axis(a, axis: int = 0) -> Tensor:
    """Maximum along one axis; gradient goes to the first maximal entry."""
    a = _as_tensor(a)
    value = a.value.max(axis=axis)
    arg = a.value.argmax(axis=axis)
    if a.value.shape[axis] > 1:
        sorted_vals = np.sort(a.value, axis=axis)
        tie_gap = float(np.min(np.take(sorted_vals, -1, axis=axis)
                               - np.take(sorted_vals, -2, axis=axis)))
    else:
        tie_gap = np.inf

    def backward(g):
        full = np.zeros_like(a.value)
        grid = np.indices(value.shape)
        idx = list(grid)
        idx.insert(axis, arg)
        full[tuple(idx)] = g
        return (full,)

    return _node(value, (a,), backward, tie_gap=tie_gap)


def maximum(a, b) -> Tensor:
    """Elementwise max; ties route the gradient to the first argument."""
    a, b = _as_tensor(a), _as_tensor(b)
    take_a = a.value >= b.value
    value = np.where(take_a, a.value, b.value)
    tie_gap = float(np.min(np.abs(a.value - b.value)))
    gate = take_a.astype(np.float64)
    return _node(value, (a, b),
                 lambda g: (_unbroadcast(g * gate, a.value.shape),
                            _unbroadcast(g * (1.0 - gate), b.value.shape)),
                 tie_gap=tie_gap)


def minimum(a, b) -> Tensor:
    """Elementwise min; ties route the gradient to the first argument."""
    a, b = _as_tensor(a), _as_tensor(b)
    take_a = a.value <= b.value
    value = np.where(take_a, a.value, b.value)
    tie_gap = float(np.min(np.abs(a.value - b.value)))
    gate = take_a.astype(np.float64)
    return _node(value, (a, b),
                 lambda g: (_unbroadcast(g * gate, a.value.shape),
                            _unbroadcast(g * (1.0 - gate), b.value.shape)),
                 tie_gap=tie_gap)


def softmax(a, axis: int = -1) -> Tensor:
    a = _as_tensor(a)
    shifted = a.value - a.value.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    value = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        inner = (g * value).sum(axis=axis, keepdims=True)
        return (value * (g - inner),)

    return _node(value, (a,), backward)


def masked_max_pool(a, mask, axis: int = 0) -> Tensor:
    """Maximum along ``axis`` over positions where ``mask`` is true.

    Invalid positions are excluded structurally, so their values never
    influence the output or the gradient.
    """
    a = _as_tensor(a)
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim != 1 or mask.shape[0] != a.value.shape[axis]:
        raise ShapeError(f"mask of shape {mask.shape} does not index axis {axis} "
                         f"of shape {a.value.shape}")
    if not mask.any():
        raise DomainError("masked_max_pool needs at least one valid position")
    shape = [1] * a.value.ndim
    shape[axis] = mask.shape[0]
    keep = mask.reshape(shape)
    masked = np.where(keep, a.value, -np.inf)
    value = masked.max(axis=axis)
    arg = masked.argmax(axis=axis)
    tie_gap = np.inf
    if int(mask.sum()) > 1:
        sorted_vals = np.sort(masked, axis=axis)
        tie_gap = float(np.min(np.take(sorted_vals, -1, axis=axis)
                               - np.take(sorted_vals, -2, axis=axis)))

    def backward(g):
        full = np.zeros_like(a.value)
        grid = np.indices(value.shape)
        idx = list(grid)
        idx.insert(axis, arg)
        full[tuple(idx)] = g
        return (full,)

    return _node(value, (a,), backward, tie_gap=tie_gap)


def cosine_similarity(rows, vec) -> Tensor:
    """Cosine similarity of each row of ``rows`` (N, d) with ``vec`` (d,)."""
    rows, vec = _as_tensor(rows), _as_tensor(vec)
    if rows.value.ndim != 2 or vec.value.ndim != 1:
        raise ShapeError("cosine_similarity expects a matrix and a vector")
    if np.any(np.linalg.norm(rows.value, axis=1) == 0.0) or np.linalg.norm(vec.value) == 0.0:
        raise DomainError("cosine similarity of a zero-norm vector")
    row_norms = sqrt(reduce_sum(mul(rows, rows), axis=1))
    vec_norm = sqrt(reduce_sum(mul(vec, vec)))
    dots = matmul(rows, vec)
    return div(dots, mul(row_norms, vec_norm))


def cosine_matrix(a, b) -> Tensor:
    """Pairwise cosine similarities between rows of a (N, d) and b (M, d)."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.value.ndim != 2 or b.value.ndim != 2:
        raise ShapeError("cosine_matrix expects two matrices")
    if np.any(np.linalg.norm(a.value, axis=1) == 0.0) or np.any(np.linalg.norm(b.value, axis=1) == 0.0):
        raise DomainError("cosine similarity of a zero-norm vector")
    a_norm = sqrt(reduce_sum(mul(a, a), axis=1, keepdims=True))
    b_norm = sqrt(reduce_sum(mul(b, b), axis=1, keepdims=True))
    return matmul(div(a, a_norm), transpose(div(b, b_norm)))


# ---------------------------------------------------------------------------
# composed losses


def softplus(a) -> Tensor:
    """log(1 + exp(a)), computed on the non-overflowing side."""
    a = _as_tensor(a)
    return add(relu(a), log(add(1.0, exp(neg(abs_(a))))))


def abs_(a) -> Tensor:
    a = _as_tensor(a)
    return add(relu(a), relu(neg(a)))


def bce_with_logits(logits, targets) -> Tensor:
    """Mean binary cross-entropy on raw scores, numerically stable."""
    logits = _as_tensor(logits)
    targets = np.asarray(targets, dtype=np.float64)
    if targets.shape != logits.value.shape:
        raise ShapeError("targets must match the logits shape")
    per = add(sub(relu(logits), mul(logits, constant(targets))),
              log(add(1.0, exp(neg(abs_(logits))))))
    return mean(per)


def cross_entropy(logits, true_index: int) -> Tensor:
    """-log softmax(logits)[true_index] for a 1-D logit vector."""
    logits = _as_tensor(logits)
    if logits.value.ndim != 1:
        raise ShapeError("cross_entropy expects a 1-D logit vector")
    k = logits.value.shape[0]
    if not 0 <= true_index < k:
        raise IndexError(f"class index {true_index} out of range for {k} classes")
    shift = float(logits.value.max())  # constant; exact for any shift
    lse = add(shift, log(reduce_sum(exp(sub(logits, shift)))))
    picked = reduce_sum(narrow(logits, 0, true_index, 1))
    return sub(lse, picked)


# ---------------------------------------------------------------------------
# tape and backward


class Tape:
    """Dependency-ordered record of the operations behind one output."""

    def __init__(self, output: Tensor):
        nodes: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(output, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                nodes.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))
        self.nodes = nodes  # topological order: parents precede children

    def min_tie_gap(self) -> float:
        """Smallest decision margin across all max-style nodes."""
        return min((n._tie_gap for n in self.nodes), default=np.inf)

    def had_ties(self) -> bool:
        return self.min_tie_gap() < _TIE_EPS


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every tensor the scalar loss depends on."""
    if loss.value.ndim != 0:
        raise ValueError(f"backward expects a scalar loss, got shape {loss.value.shape}")
    if not np.isfinite(loss.value):
        raise ValueError("backward on a non-finite loss")
    tape = Tape(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones((), dtype=np.float64)}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.requires_grad:
            node.grad = g if node.grad is None else node.grad + g
        if node._backward_fn is None:
            continue
        parent_grads = node._backward_fn(g)
        for parent, pg in zip(node._parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            acc = grads.get(id(parent))
            grads[id(parent)] = pg if acc is None else acc + pg


def zero_grad(params: Sequence[Tensor]) -> None:
    for p in params:
        p.grad = None
