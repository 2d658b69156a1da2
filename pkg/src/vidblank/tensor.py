"""Dense tensors with reverse-mode automatic differentiation.

A small numpy-backed engine covering exactly the primitives the blank-word
model needs: matrix multiply, elementwise add/multiply, tanh and logistic,
concatenation, softmax, row-broadcast add, framewise max, slicing, and a
fused cross-entropy-from-logits. Every operation records its inputs on the
output tensor; ``backward`` walks the recorded graph once in reverse
topological order and accumulates adjoints into ``grad``.

Recording and backward are single-threaded per graph. Tensors that are only
read (embeddings, frozen features) may be shared freely.
"""

from __future__ import annotations

import math
from contextlib import contextmanager

import numpy as np

from .errors import DimensionError, NumericError

DEFAULT_DTYPE = np.float64

_grad_enabled = True


def set_default_dtype(dtype) -> None:
    """Set the dtype newly created tensors use (float64 unless changed)."""
    global DEFAULT_DTYPE
    dtype = np.dtype(dtype)
    if dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ValueError(f"unsupported dtype {dtype}")
    DEFAULT_DTYPE = dtype.type


@contextmanager
def no_grad():
    """Suspend graph recording inside the block (forward-only evaluation)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """A dense real array with an optional same-shape gradient accumulator.

    ``grad`` exists exactly when ``requires_grad`` is set. It starts at zero,
    accumulates across repeated ``backward`` calls, and is cleared by
    ``zero_grad``.
    """

    __slots__ = ("data", "requires_grad", "_grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.ascontiguousarray(data, dtype=DEFAULT_DTYPE)
        self.requires_grad = bool(requires_grad)
        self._grad = None
        self._parents = ()
        self._backward_fn = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def grad(self):
        if not self.requires_grad:
            return None
        if self._grad is None:
            self._grad = np.zeros_like(self.data)
        return self._grad

    def zero_grad(self) -> None:
        self._grad = None

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() needs a scalar, got shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def _accumulate(self, g) -> None:
        if self._grad is None:
            self._grad = np.zeros_like(self.data)
        self._grad += g

    def backward(self) -> None:
        """Accumulate adjoints of this scalar into every reachable grad.

        Raises if called on a non-scalar. Calling twice without ``zero_grad``
        adds a second full pass to the accumulated gradients.
        """
        if self.data.size != 1:
            raise DimensionError(
                f"backward requires a scalar loss, got shape {self.shape}"
            )
        if not self.requires_grad:
            return
        # Iterative postorder: execution order already topologically sorts
        # the graph, so a DFS visits each node once without recursion limits.
        topo = []
        seen = {id(self)}
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in seen:
                    seen.add(id(parent))
                    stack.append((parent, False))
        # Adjoints for this pass accumulate in a side table keyed by node so
        # repeated backward calls compose additively on persistent grads.
        pass_grads = {id(self): np.ones_like(self.data)}
        for node in reversed(topo):
            g = pass_grads.pop(id(node), None)
            if g is None:
                continue
            node._accumulate(g)
            if node._backward_fn is None:
                continue
            for parent, pg in zip(node._parents, node._backward_fn(g)):
                if pg is None or not parent.requires_grad:
                    continue
                acc = pass_grads.get(id(parent))
                if acc is None:
                    pass_grads[id(parent)] = pg
                else:
                    acc += pg

    # -- operator sugar ----------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, mul(as_tensor(other), -1.0))

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        data = np.ascontiguousarray(self.data[idx])

        def bw(g):
            full = np.zeros_like(self.data)
            np.add.at(full, idx, g)
            return (full,)

        return _from_op(data, (self,), bw)

    def reshape(self, shape) -> "Tensor":
        orig = self.data.shape
        data = self.data.reshape(shape).copy()

        def bw(g):
            return (g.reshape(orig),)

        return _from_op(data, (self,), bw)

    def transpose(self) -> "Tensor":
        if self.data.ndim != 2:
            raise DimensionError(f"transpose needs a matrix, got shape {self.shape}")
        data = self.data.T.copy()

        def bw(g):
            return (g.T,)

        return _from_op(data, (self,), bw)

    @property
    def T(self) -> "Tensor":
        return self.transpose()

    def tanh(self) -> "Tensor":
        y = np.tanh(self.data)

        def bw(g):
            return ((1.0 - y * y) * g,)

        return _from_op(y, (self,), bw)

    def sigmoid(self) -> "Tensor":
        y = 1.0 / (1.0 + np.exp(-self.data))

        def bw(g):
            return (y * (1.0 - y) * g,)

        return _from_op(y, (self,), bw)


def as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def _from_op(data, parents, backward_fn) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward_fn = backward_fn
    return out


def _reduce_for(g, shape):
    # Adjoint of the implicit scalar broadcast in add/mul.
    if g.shape == shape:
        return g
    return np.asarray(g.sum()).reshape(shape)


def add(a, b) -> Tensor:
    """Elementwise sum; one operand may be a scalar."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape and a.size != 1 and b.size != 1:
        raise DimensionError(f"add: shapes {a.shape} and {b.shape} disagree")
    data = a.data + b.data

    def bw(g):
        return _reduce_for(g, a.data.shape), _reduce_for(g, b.data.shape)

    return _from_op(data, (a, b), bw)


def mul(a, b) -> Tensor:
    """Elementwise (Hadamard) product; one operand may be a scalar."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape and a.size != 1 and b.size != 1:
        raise DimensionError(f"mul: shapes {a.shape} and {b.shape} disagree")
    data = a.data * b.data

    def bw(g):
        return (
            _reduce_for(g * b.data, a.data.shape),
            _reduce_for(g * a.data, b.data.shape),
        )

    return _from_op(data, (a, b), bw)


def _ordered_matmul(A, B):
    # Accumulates C[i,j] += A[i,t]*B[t,j] with t ascending, which reproduces
    # a naive triple loop bit-for-bit (BLAS reorders the sum and does not).
    C = np.zeros((A.shape[0], B.shape[1]), dtype=A.dtype)
    for t in range(A.shape[1]):
        C += A[:, t : t + 1] * B[t : t + 1, :]
    return C


def matmul(a, b) -> Tensor:
    """Matrix product; 1-D operands act as a row (left) or column (right)."""
    a, b = as_tensor(a), as_tensor(b)
    A, B = a.data, b.data
    if A.ndim not in (1, 2) or B.ndim not in (1, 2):
        raise DimensionError(f"matmul: shapes {A.shape} and {B.shape} unsupported")
    A2 = A if A.ndim == 2 else A.reshape(1, -1)
    B2 = B if B.ndim == 2 else B.reshape(-1, 1)
    if A2.shape[1] != B2.shape[0]:
        raise DimensionError(
            f"matmul: inner dimensions disagree for shapes {A.shape} and {B.shape}"
        )
    if max(A2.shape[0], A2.shape[1], B2.shape[1]) <= 8:
        C2 = _ordered_matmul(A2, B2)
    else:
        C2 = A2 @ B2
    if A.ndim == 2 and B.ndim == 2:
        data = C2
    elif A.ndim == 1 and B.ndim == 1:
        data = C2.reshape(())
    elif A.ndim == 1:
        data = C2.reshape(B2.shape[1])
    else:
        data = C2.reshape(A2.shape[0])

    def bw(g):
        G2 = g.reshape(A2.shape[0], B2.shape[1])
        return (G2 @ B2.T).reshape(A.shape), (A2.T @ G2).reshape(B.shape)

    return _from_op(data, (a, b), bw)


def concat(parts) -> Tensor:
    """Concatenate 1-D tensors in the given order."""
    parts = [as_tensor(p) for p in parts]
    for p in parts:
        if p.ndim != 1:
            raise DimensionError(f"concat needs vectors, got shape {p.shape}")
    data = np.concatenate([p.data for p in parts])
    offsets = np.cumsum([0] + [p.size for p in parts])

    def bw(g):
        return tuple(g[offsets[i] : offsets[i + 1]] for i in range(len(parts)))

    return _from_op(data, tuple(parts), bw)


def softmax(v) -> Tensor:
    """Probability vector exp(v - max v) / sum, numerically stable by
    construction: the running maximum is always subtracted first."""
    v = as_tensor(v)
    if v.ndim != 1 or v.size < 1:
        raise DimensionError(f"softmax needs a nonempty vector, got shape {v.shape}")
    if not np.isfinite(v.data).all():
        raise NumericError("softmax: input contains non-finite entries")
    shifted = v.data - v.data.max()
    e = np.exp(shifted)
    y = e / e.sum()

    def bw(g):
        return (y * (g - np.dot(g, y)),)

    return _from_op(y, (v,), bw)


def broadcast_row_add(m, v) -> Tensor:
    """Add vector ``v`` to every row of matrix ``m``."""
    m, v = as_tensor(m), as_tensor(v)
    if m.ndim != 2 or v.ndim != 1 or m.shape[1] != v.shape[0]:
        raise DimensionError(
            f"broadcast_row_add: shapes {m.shape} and {v.shape} disagree"
        )
    data = m.data + v.data

    def bw(g):
        return g, g.sum(axis=0)

    return _from_op(data, (m, v), bw)


def framewise_max(frames) -> Tensor:
    """Elementwise maximum over the leading (frame) axis of a T x R x C
    tensor. The gradient routes to the arg-max frame, lowest index on ties."""
    frames = as_tensor(frames)
    if frames.ndim != 3:
        raise DimensionError(f"framewise_max needs T x R x C, got {frames.shape}")
    if frames.shape[0] == 0:
        raise DimensionError("framewise_max: empty input (no frames)")
    data = frames.data.max(axis=0)
    winner = frames.data.argmax(axis=0)  # argmax takes the first index on ties

    def bw(g):
        full = np.zeros_like(frames.data)
        rows, cols = np.indices(g.shape)
        full[winner, rows, cols] = g
        return (full,)

    return _from_op(data, (frames,), bw)


def cross_entropy_with_logits(logits, target: int) -> Tensor:
    """Negative log-probability of ``target`` under softmax(logits), computed
    fused via log-sum-exp so extreme logits stay finite."""
    logits = as_tensor(logits)
    if logits.ndim != 1:
        raise DimensionError(f"logits must be a vector, got shape {logits.shape}")
    n = logits.size
    if not 0 <= target < n:
        raise IndexError(f"target {target} out of range for {n} classes")
    m = logits.data.max()
    e = np.exp(logits.data - m)
    z = e.sum()
    loss = m + math.log(z) - logits.data[target]

    def bw(g):
        d = (e / z) * g
        d[target] -= g
        return (d,)

    return _from_op(np.asarray(loss), (logits,), bw)


def grad_check(f, params, eps: float = 1e-5) -> float:
    """Compare backward gradients of ``f(params)`` against central finite
    differences, one coordinate at a time.

    Returns the maximum relative error |a - b| / max(|a|, |b|, 1e-8) over all
    coordinates of all parameters.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    for p in params:
        p.zero_grad()
    loss = f(params)
    base = loss.item()
    if not math.isfinite(base):
        raise NumericError("grad_check: objective is not finite")
    loss.backward()
    analytic = [np.array(p.grad, copy=True) for p in params]
    worst = 0.0
    with no_grad():
        for p, ref in zip(params, analytic):
            flat = p.data.reshape(-1)
            ref_flat = ref.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + eps
                hi = f(params).item()
                flat[i] = orig - eps
                lo = f(params).item()
                flat[i] = orig
                if not (math.isfinite(hi) and math.isfinite(lo)):
                    raise NumericError("grad_check: perturbed objective not finite")
                fd = (hi - lo) / (2.0 * eps)
                a = ref_flat[i]
                denom = max(abs(a), abs(fd), 1e-8)
                err = abs(a - fd) / denom
                if err > worst:
                    worst = err
    return worst
