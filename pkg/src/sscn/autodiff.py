"""A small reverse-mode automatic differentiation engine on numpy arrays.

Only what the SSCN model needs: matrix products, elementwise arithmetic,
smooth activations, squared norms and a fused softmin cross-entropy.
Gradients of leaves accumulate in ``Tensor.grad``; call :func:`zero_grad`
between backward passes.
"""
from __future__ import annotations

import numpy as np

from . import kernels
from .errors import GradientError


class Tensor:
    """A value in the computation graph.

    Parameters
    ----------
    value : array_like
    requires_grad : bool
        Leaves with ``requires_grad`` receive ``.grad`` on backward.
    name : str
        Used in error messages.
    """

    __slots__ = ("value", "grad", "requires_grad", "name", "_parents", "_done")

    def __init__(self, value, requires_grad=False, name="", _parents=()):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad or any(p.requires_grad for p, _ in _parents)
        self.name = name
        self._parents = _parents
        self._done = False

    @property
    def shape(self):
        return self.value.shape

    @property
    def T(self):
        return transpose(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __repr__(self):
        return f"Tensor({self.name or 'unnamed'}, shape={self.shape})"


def Parameter(value, name):
    return Tensor(value, requires_grad=True, name=name)


def _t(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, size in enumerate(shape):
        if size == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def matmul(a, b):
    a, b = _t(a), _t(b)
    return Tensor(a.value @ b.value, name="matmul", _parents=(
        (a, lambda g: g @ b.value.T),
        (b, lambda g: a.value.T @ g)))


def add(a, b):
    a, b = _t(a), _t(b)
    return Tensor(a.value + b.value, name="add", _parents=(
        (a, lambda g: _unbroadcast(g, a.shape)),
        (b, lambda g: _unbroadcast(g, b.shape))))


def sub(a, b):
    a, b = _t(a), _t(b)
    return Tensor(a.value - b.value, name="sub", _parents=(
        (a, lambda g: _unbroadcast(g, a.shape)),
        (b, lambda g: -_unbroadcast(g, b.shape))))


def mul(a, b):
    a = _t(a)
    if not isinstance(b, Tensor):
        c = float(b)
        return Tensor(a.value * c, name="scale", _parents=((a, lambda g: g * c),))
    return Tensor(a.value * b.value, name="mul", _parents=(
        (a, lambda g: _unbroadcast(g * b.value, a.shape)),
        (b, lambda g: _unbroadcast(g * a.value, b.shape))))


def transpose(a):
    return Tensor(a.value.T, name="transpose", _parents=((a, lambda g: g.T),))


def tanh(a):
    y = np.tanh(a.value)
    return Tensor(y, name="tanh", _parents=((a, lambda g: g * (1.0 - y * y)),))


def sigmoid(a):
    y = 0.5 * (1.0 + np.tanh(0.5 * a.value))
    return Tensor(y, name="sigmoid", _parents=((a, lambda g: g * y * (1.0 - y)),))


def identity(a):
    return a


ACTIVATIONS = {"tanh": tanh, "sigmoid": sigmoid, "linear": identity}


def sum_squares(a):
    """``||a||_F^2`` as a scalar tensor."""
    v = a.value
    return Tensor(np.sum(v * v), name="sum_squares", _parents=((a, lambda g: 2.0 * g * v),))


def softmin_cross_entropy(h_rot, targets, k, q):
    """Mean cross-entropy of softmin block memberships of ``h_rot`` columns."""
    n = h_rot.shape[1]
    loss, grad, _ = kernels.softmin_xent(h_rot.value, targets, k, q)
    return Tensor(loss / n, name="softmin_xent",
                  _parents=((h_rot, lambda g: g * grad / n),))


def _topo(root):
    order, seen, stack = [], set(), [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent, _ in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Tensor, params=None):
    """Back-propagate from scalar ``loss`` and accumulate into leaf ``.grad``.

    Parameters
    ----------
    params : iterable of Tensor, optional
        Leaves that must receive a gradient; a parameter the loss does not
        depend on raises :class:`GradientError`.

    Raises
    ------
    GradientError
        On a second backward through the same graph, on leaves whose
        gradient was not reset since the last pass, or when a gradient
        becomes non-finite (the offending node is named).
    """
    if loss.value.size != 1:
        raise GradientError("backward needs a scalar loss")
    if loss._done:
        raise GradientError("backward already ran on this graph; rebuild the forward pass")
    order = _topo(loss)
    for node in order:
        if not node._parents and node.grad is not None:
            raise GradientError(
                f"gradient of {node.name or 'leaf'} was not reset; call zero_grad() "
                "before another backward pass")
    grads = {id(loss): np.ones_like(loss.value)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if not np.all(np.isfinite(g)):
            raise GradientError(f"non-finite gradient at node {node.name or 'unnamed'}")
        if not node._parents:
            node.grad = g
            continue
        for parent, vjp in node._parents:
            if not parent.requires_grad:
                continue
            contrib = vjp(g)
            if id(parent) in grads:
                grads[id(parent)] = grads[id(parent)] + contrib
            else:
                grads[id(parent)] = contrib
    loss._done = True
    if params is not None:
        for p in params:
            if p.grad is None:
                raise GradientError(f"parameter {p.name} is detached from the loss")


def zero_grad(params):
    for p in params:
        p.grad = None


class Dense:
    """Fully connected layer ``act(W x + b)`` on column batches.

    With ``bias=False`` the layer is ``act(W x)``; odd activations then give
    an odd map, which sends lines through the origin to curves through it.
    """

    def __init__(self, n_in, n_out, activation="tanh", rng=None, name="dense", bias=True):
        rng = np.random.default_rng() if rng is None else rng
        bound = np.sqrt(6.0 / (n_in + n_out))
        self.w = Parameter(rng.uniform(-bound, bound, (n_out, n_in)), f"{name}.w")
        self.b = Parameter(np.zeros((n_out, 1)), f"{name}.b") if bias else None
        self.activation = activation

    def __call__(self, x):
        y = self.w @ x
        if self.b is not None:
            y = y + self.b
        return ACTIVATIONS[self.activation](y)

    def parameters(self):
        return [self.w] if self.b is None else [self.w, self.b]


class MLP:
    """Stack of :class:`Dense` layers; ``tanh`` inside, ``out_activation`` last."""

    def __init__(self, sizes, rng=None, name="mlp", hidden_activation="tanh",
                 out_activation="linear", bias=True):
        self.sizes = list(sizes)
        self.layers = []
        for i, (a, b) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
            act = out_activation if i == len(self.sizes) - 2 else hidden_activation
            self.layers.append(Dense(a, b, act, rng, f"{name}.{i}", bias))

    def __call__(self, x):
        for layer in self.layers:
            x = layer(x)
        return x

    def parameters(self):
        return [p for layer in self.layers for p in layer.parameters()]

    def forward_numpy(self, x):
        for layer in self.layers:
            x = layer(Tensor(x) if not isinstance(x, Tensor) else x)
        return x.value


class Adam:
    """Adam for a fixed list of parameter tensors."""

    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        self.params = list(params)
        self.lr, self.betas, self.eps = lr, betas, eps
        self.m = [np.zeros_like(p.value) for p in self.params]
        self.v = [np.zeros_like(p.value) for p in self.params]
        self.t = 0

    def step(self):
        self.t += 1
        b1, b2 = self.betas
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            m *= b1
            m += (1.0 - b1) * p.grad
            v *= b2
            v += (1.0 - b2) * p.grad * p.grad
            p.value = p.value - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def zero_grad(self):
        zero_grad(self.params)
