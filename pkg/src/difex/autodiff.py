"""Dense float64 tensors with reverse-mode automatic differentiation.

The graph is define-by-run: every operation allocates a fresh output tensor
holding a closure that knows how to push gradients to its parents. Calling
``Tensor.backward()`` on a scalar loss topologically sorts the recorded
graph and runs the closures once each, newest first.

Everything is 64-bit and single-threaded; tensors are treated as immutable
once created (the optimizer is the only mutator, between graphs).
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "NonFiniteError",
    "Tensor",
    "add_bias",
    "concat_cols",
    "matmul",
    "relu",
    "rowwise_div",
    "softmax_cross_entropy",
    "squash_rows",
    "sum_all",
    "sum_rows",
    "take_rows",
    "backward",
    "AdamW",
    "finite_difference_grad",
]


class NonFiniteError(ArithmeticError):
    """A NaN or Inf appeared in a tensor; the computation is invalid."""


def _check_finite(arr, context):
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"non-finite values in {context}")


class Tensor:
    """A dense float64 array plus an optional gradient buffer.

    ``_parents`` and ``_backprop`` link the tensor into the computation
    graph of the forward pass that produced it; leaves have neither.
    """

    __slots__ = ("data", "grad", "_parents", "_backprop")

    def __init__(self, data, _parents=(), _backprop=None):
        arr = np.asarray(data, dtype=np.float64)
        _check_finite(arr, "tensor")
        self.data = arr
        self.grad = None
        self._parents = _parents
        self._backprop = _backprop

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape})"

    # -- graph traversal -------------------------------------------------

    def backward(self):
        """Populate ``grad`` on every tensor reachable from this scalar."""
        if self.data.size != 1:
            raise ValueError("backward root must be a scalar")
        topo = _topo_order(self)
        for node in topo:
            node.grad = np.zeros_like(node.data)
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backprop is not None:
                node._backprop()

    # -- operators -------------------------------------------------------

    def __add__(self, other):
        other = _as_tensor(other)
        _same_shape(self, other, "add")
        out = Tensor(self.data + other.data, (self, other))

        def backprop():
            self.grad += out.grad
            other.grad += out.grad

        out._backprop = backprop
        return out

    def __sub__(self, other):
        other = _as_tensor(other)
        _same_shape(self, other, "sub")
        out = Tensor(self.data - other.data, (self, other))

        def backprop():
            self.grad += out.grad
            other.grad -= out.grad

        out._backprop = backprop
        return out

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return self.scale(float(other))
        _same_shape(self, other, "mul")
        out = Tensor(self.data * other.data, (self, other))

        def backprop():
            self.grad += out.grad * other.data
            other.grad += out.grad * self.data

        out._backprop = backprop
        return out

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return self.scale(-1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def scale(self, s: float):
        out = Tensor(self.data * s, (self,))

        def backprop():
            self.grad += out.grad * s

        out._backprop = backprop
        return out

    def relu(self):
        # subgradient at 0 is taken as 0
        out = Tensor(np.maximum(self.data, 0.0), (self,))

        def backprop():
            self.grad += out.grad * (self.data > 0.0)

        out._backprop = backprop
        return out

    def tanh(self):
        out = Tensor(np.tanh(self.data), (self,))

        def backprop():
            self.grad += out.grad * (1.0 - out.data * out.data)

        out._backprop = backprop
        return out

    def sqrt(self):
        out = Tensor(np.sqrt(self.data), (self,))

        def backprop():
            self.grad += out.grad / (2.0 * out.data)

        out._backprop = backprop
        return out

    def abs(self):
        out = Tensor(np.abs(self.data), (self,))

        def backprop():
            self.grad += out.grad * np.sign(self.data)

        out._backprop = backprop
        return out

    @property
    def T(self):
        out = Tensor(self.data.T.copy(), (self,))

        def backprop():
            self.grad += out.grad.T

        out._backprop = backprop
        return out


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _same_shape(a, b, op):
    if a.data.shape != b.data.shape:
        raise ValueError(f"{op}: shape mismatch {a.data.shape} vs {b.data.shape}")


def _topo_order(root):
    """Iterative post-order DFS; each node appears once, parents first."""
    order = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


# -- operations beyond the dunders ---------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError("matmul expects 2-D operands")
    if a.data.shape[1] != b.data.shape[0]:
        raise ValueError(
            f"matmul: inner dims disagree {a.data.shape} x {b.data.shape}"
        )
    out = Tensor(a.data @ b.data, (a, b))

    def backprop():
        a.grad += out.grad @ b.data.T
        b.grad += a.data.T @ out.grad

    out._backprop = backprop
    return out


def relu(a: Tensor) -> Tensor:
    return a.relu()


def tanh(a: Tensor) -> Tensor:
    return a.tanh()


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """Add a length-h bias vector to every row of a B-by-h matrix."""
    if x.data.ndim != 2 or b.data.ndim != 1 or x.data.shape[1] != b.data.shape[0]:
        raise ValueError(f"add_bias: {x.data.shape} + {b.data.shape}")
    out = Tensor(x.data + b.data, (x, b))

    def backprop():
        x.grad += out.grad
        b.grad += out.grad.sum(axis=0)

    out._backprop = backprop
    return out


def sum_all(a: Tensor) -> Tensor:
    out = Tensor(a.data.sum(), (a,))

    def backprop():
        a.grad += out.grad

    out._backprop = backprop
    return out


def sum_rows(x: Tensor) -> Tensor:
    """Row sums of a B-by-d matrix, as a length-B vector."""
    if x.data.ndim != 2:
        raise ValueError("sum_rows expects a matrix")
    out = Tensor(x.data.sum(axis=1), (x,))

    def backprop():
        x.grad += out.grad[:, None]

    out._backprop = backprop
    return out


def rowwise_div(x: Tensor, s: Tensor) -> Tensor:
    """Divide row b of x by scalar s[b]."""
    if x.data.ndim != 2 or s.data.ndim != 1 or x.data.shape[0] != s.data.shape[0]:
        raise ValueError(f"rowwise_div: {x.data.shape} / {s.data.shape}")
    out = Tensor(x.data / s.data[:, None], (x, s))

    def backprop():
        x.grad += out.grad / s.data[:, None]
        s.grad -= (out.grad * x.data).sum(axis=1) / (s.data * s.data)

    out._backprop = backprop
    return out


def squash_rows(x: Tensor, radius: float = 1.0) -> Tensor:
    """Scale each row of x by 1/(1 + |row|/radius).

    Row norms land strictly inside `radius` while directions pass
    through untouched, and the Jacobian never vanishes: rows can always
    be rotated or shrunk back no matter how hard something pushed them
    outward. That makes it the right cap for features that face a
    maximized divergence term, where a saturating elementwise squash
    would leave dead, unrecoverable coordinates.
    """
    if x.data.ndim != 2:
        raise ValueError("squash_rows expects a matrix")
    if radius <= 0:
        raise ValueError(f"radius must be positive, got {radius}")
    r = np.sqrt((x.data * x.data).sum(axis=1) + 1e-300)
    g = 1.0 / (1.0 + r / radius)
    out = Tensor(x.data * g[:, None], (x,))

    def backprop():
        # d/dx [g(r)·x] = g·I + (dg/dr)·x xᵀ/r, with dg/dr = −g²/radius
        xu = (out.grad * x.data).sum(axis=1)
        coef = xu * g * g / (radius * r)
        x.grad += out.grad * g[:, None] - x.data * coef[:, None]

    out._backprop = backprop
    return out


def concat_cols(a: Tensor, b: Tensor) -> Tensor:
    """Concatenate two B-by-* matrices along columns."""
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[0] != b.data.shape[0]:
        raise ValueError(f"concat_cols: {a.data.shape} | {b.data.shape}")
    p = a.data.shape[1]
    out = Tensor(np.concatenate([a.data, b.data], axis=1), (a, b))

    def backprop():
        a.grad += out.grad[:, :p]
        b.grad += out.grad[:, p:]

    out._backprop = backprop
    return out


def take_rows(x: Tensor, idx) -> Tensor:
    """Gather rows by integer index; gradient scatter-adds back."""
    idx = np.asarray(idx, dtype=np.intp)
    out = Tensor(x.data[idx], (x,))

    def backprop():
        np.add.at(x.grad, idx, out.grad)

    out._backprop = backprop
    return out


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-softmax of the true class, max-shifted for stability."""
    labels = np.asarray(labels, dtype=np.intp)
    if logits.data.ndim != 2:
        raise ValueError("softmax_cross_entropy expects B-by-C logits")
    n, c = logits.data.shape
    if labels.shape != (n,):
        raise ValueError(f"labels shape {labels.shape} does not match batch {n}")
    if labels.min() < 0 or labels.max() >= c:
        raise ValueError(f"label out of range [0, {c})")
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    losses = lse - shifted[np.arange(n), labels]
    out = Tensor(losses.mean(), (logits,))

    def backprop():
        p = np.exp(shifted)
        p /= p.sum(axis=1, keepdims=True)
        p[np.arange(n), labels] -= 1.0
        logits.grad += out.grad * p / n

    out._backprop = backprop
    return out


def backward(loss: Tensor, params=None):
    """Run the backward pass; parameters unreachable from loss get zero grads."""
    loss.backward()
    for p in params or ():
        if p.grad is None:
            p.grad = np.zeros_like(p.data)


# -- optimization --------------------------------------------------------


class AdamW:
    """Adaptive-moment update with decoupled weight decay.

    Defaults follow the common recipe: lr 1e-3, decay 5e-4, betas
    (0.9, 0.999), eps 1e-8, with bias-corrected moments.
    """

    def __init__(self, params, lr=1e-3, weight_decay=5e-4, betas=(0.9, 0.999), eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if g.shape != p.data.shape:
                raise ValueError("gradient/parameter shape mismatch")
            if self.weight_decay:
                p.data -= self.lr * self.weight_decay * p.data
            m += (1.0 - self.beta1) * (g - m)
            v += (1.0 - self.beta2) * (g * g - v)
            p.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            _check_finite(p.data, "parameter after optimizer step")


# -- the gradient oracle -------------------------------------------------


def finite_difference_grad(f, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of a scalar function of a flat array.

    Deliberately independent of the Tensor machinery above so it can
    serve as the oracle the backward pass is checked against.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = grad.reshape(-1)
    xf = x.reshape(-1)
    for i in range(xf.size):
        orig = xf[i]
        xf[i] = orig + h
        hi = f(x)
        xf[i] = orig - h
        lo = f(x)
        xf[i] = orig
        flat[i] = (hi - lo) / (2.0 * h)
    return grad
