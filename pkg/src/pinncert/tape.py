"""Minimal reverse-mode automatic differentiation over numpy arrays.

Supports exactly the operations needed to push collocation losses through
the network jet evaluation: broadcast arithmetic, slicing, axis sums,
weighted sums, the two affine contractions of the layer chain, and the
activation derivative tables.  Gradients of a scalar with respect to the
leaf parameter arrays are exact to machine precision.
"""

from __future__ import annotations

import numpy as np

from .activations import ActivationKind, activation
from .network import NetworkParams


def _unbroadcast(grad, shape: tuple) -> np.ndarray:
    """Sum grad down to `shape` after numpy broadcasting."""
    grad = np.asarray(grad)
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Var:
    """Node of the tape: a numpy value plus the backward rule to its parents."""

    __slots__ = ("value", "grad", "_parents", "_vjp")

    def __init__(self, value, parents=(), vjp=None):
        self.value = value
        self.grad = None
        self._parents = parents
        self._vjp = vjp

    @property
    def shape(self):
        return np.shape(self.value)

    # -- broadcast arithmetic ------------------------------------------------

    def __add__(self, other):
        if isinstance(other, Var):
            return Var(
                self.value + other.value,
                (self, other),
                lambda g, a=self, b=other: (
                    _unbroadcast(g, a.shape),
                    _unbroadcast(g, b.shape),
                ),
            )
        return Var(self.value + other, (self,), lambda g, a=self: (_unbroadcast(g, a.shape),))

    __radd__ = __add__

    def __neg__(self):
        return Var(-self.value, (self,), lambda g: (-g,))

    def __sub__(self, other):
        return self + (-other if isinstance(other, Var) else -np.asarray(other))

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, Var):
            return Var(
                self.value * other.value,
                (self, other),
                lambda g, a=self, b=other: (
                    _unbroadcast(g * b.value, a.shape),
                    _unbroadcast(g * a.value, b.shape),
                ),
            )
        return Var(
            self.value * other,
            (self,),
            lambda g, a=self, c=other: (_unbroadcast(g * c, a.shape),),
        )

    __rmul__ = __mul__

    def __truediv__(self, c):
        if isinstance(c, Var):
            raise TypeError("division between tape variables is not supported")
        return self * (1.0 / c)

    def __getitem__(self, idx):
        def vjp(g, a=self, idx=idx):
            out = np.zeros_like(np.asarray(a.value, dtype=float))
            out[idx] += g
            return (out,)

        return Var(self.value[idx], (self,), vjp)


def absolute(x: Var) -> Var:
    """|x| with sign subgradient (0 at 0)."""
    s = np.sign(x.value)
    return Var(np.abs(x.value), (x,), lambda g: (g * s,))


def vsum(x: Var, axis=None) -> Var:
    def vjp(g, a=x, axis=axis):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), a.shape).copy(),)

    return Var(np.sum(x.value, axis=axis), (x,), vjp)


def wsum(x: Var, w: np.ndarray) -> Var:
    """Scalar sum(w * x) with constant weights w (broadcast against x)."""
    return Var(float(np.sum(w * x.value)), (x,), lambda g: (g * np.broadcast_to(w, x.shape),))


def unsqueeze(x: Var, axis: int) -> Var:
    return Var(
        np.expand_dims(x.value, axis),
        (x,),
        lambda g, axis=axis: (np.squeeze(g, axis=axis),),
    )


def matmul_t(x, W: Var) -> Var:
    """x @ W.value.T with x a constant array or Var of shape (N, k)."""
    if isinstance(x, Var):
        return Var(
            x.value @ W.value.T,
            (x, W),
            lambda g, a=x, b=W: (g @ b.value, g.T @ a.value),
        )
    return Var(x @ W.value.T, (W,), lambda g, a=x: (g.T @ a,))


def jet_contract(J, W: Var) -> Var:
    """Contraction J_out[n,i,j] = sum_k W[i,k] J[n,k,j].

    J may be a constant array (first layer) or a Var.
    """
    Jv = J.value if isinstance(J, Var) else J
    n, k, j = Jv.shape
    i = W.value.shape[0]
    out = (Jv.transpose(0, 2, 1).reshape(n * j, k) @ W.value.T).reshape(n, j, i).transpose(0, 2, 1)

    def vjp(g):
        gT = np.ascontiguousarray(g.transpose(0, 2, 1)).reshape(n * j, i)
        dW = gT.T @ Jv.transpose(0, 2, 1).reshape(n * j, k)
        if isinstance(J, Var):
            dJ = (gT @ W.value).reshape(n, j, k).transpose(0, 2, 1)
            return (dJ, dW)
        return (dW,)

    parents = (J, W) if isinstance(J, Var) else (W,)
    return Var(out, parents, vjp)


def act_d(x: Var, kind: ActivationKind, order: int) -> Var:
    """order-th derivative table of the activation, differentiable once more."""
    return Var(
        activation(kind, x.value, order),
        (x,),
        lambda g, a=x: (g * activation(kind, a.value, order + 1),),
    )


def apply_scalar(u, fn, fn_prime):
    """fn(u) for an array or tape variable; fn_prime used for the VJP."""
    if isinstance(u, Var):
        return Var(fn(u.value), (u,), lambda g, a=u: (g * fn_prime(a.value),))
    return fn(u)


def backward(root: Var) -> None:
    """Accumulate gradients of the scalar `root` into every leaf's .grad."""
    if np.ndim(root.value) != 0:
        raise ValueError("backward expects a scalar loss")
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
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    root.grad = 1.0
    for node in reversed(order):
        if node.grad is None or node._vjp is None:
            continue
        grads = node._vjp(node.grad)
        for parent, g in zip(node._parents, grads):
            if g is None:
                continue
            if parent.grad is None:
                parent.grad = g
            else:
                parent.grad = parent.grad + g


class TapeNet:
    """A network lifted onto the tape, with parameter leaves exposed.

    forward/forward_jet mirror the plain-numpy evaluation in network.py
    but return tape variables, so any scalar built from them can be
    backpropagated to the flat parameter vector.
    """

    def __init__(self, params: NetworkParams):
        self.kind = params.activation
        self.layer_dims = params.layer_dims
        self.weights = [Var(W) for W in params.weights]
        self.biases = [Var(b) for b in params.biases]

    def forward(self, y: np.ndarray) -> Var:
        z = np.asarray(y, dtype=float)
        last = len(self.weights) - 1
        for k, (W, b) in enumerate(zip(self.weights, self.biases)):
            z = matmul_t(z, W) + b
            if k != last:
                z = act_d(z, self.kind, 0)
        return z

    def forward_jet(self, y: np.ndarray, need_hess: bool = True):
        """Taped (value, grad, hess_diag); hess is None when not requested."""
        z = np.asarray(y, dtype=float)
        n, d_in = z.shape
        J = np.broadcast_to(np.eye(d_in), (n, d_in, d_in)).copy()
        H: Var | np.ndarray | None = np.zeros((n, d_in, d_in)) if need_hess else None
        last = len(self.weights) - 1
        for k, (W, b) in enumerate(zip(self.weights, self.biases)):
            z = matmul_t(z, W) + b
            J = jet_contract(J, W)
            if need_hess:
                H = jet_contract(H, W)
            if k != last:
                s1 = unsqueeze(act_d(z, self.kind, 1), 2)
                if need_hess:
                    s2 = unsqueeze(act_d(z, self.kind, 2), 2)
                    H = s2 * (J * J) + s1 * H
                J = s1 * J
                z = act_d(z, self.kind, 0)
        return z, J, H

    def grad_flat(self) -> np.ndarray:
        """Flat gradient in checkpoint order W_1, b_1, W_2, b_2, ..."""
        parts = []
        for W, b in zip(self.weights, self.biases):
            gW = W.grad if W.grad is not None else np.zeros_like(W.value)
            gb = b.grad if b.grad is not None else np.zeros_like(b.value)
            parts.append(np.asarray(gW).ravel())
            parts.append(np.asarray(gb).ravel())
        return np.concatenate(parts)


def loss_gradient(params: NetworkParams, loss_fn) -> np.ndarray:
    """Gradient of a scalar loss with respect to the flat parameter vector.

    loss_fn receives a TapeNet and must return a scalar Var built from
    taped operations (network evaluations, jets, smooth reductions).
    """
    net = TapeNet(params)
    out = loss_fn(net)
    if not isinstance(out, Var):
        # loss does not depend on the parameters at all
        return np.zeros(params.n_params)
    backward(out)
    return net.grad_flat()
