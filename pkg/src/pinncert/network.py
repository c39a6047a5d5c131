"""Dense feedforward networks with exact input-derivative evaluation.

A network is the alternating composition of affine maps and a scalar
activation; the final affine layer has no activation.  Besides plain
evaluation, `forward_jet` propagates first derivatives and pure (diagonal)
second derivatives with respect to the network inputs through the layer
chain in closed form, with no finite differencing anywhere.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .activations import ActivationKind, activation

CHECKPOINT_VERSION = 1


class InvalidArchitectureError(ValueError):
    pass


@dataclass(frozen=True)
class NetworkParams:
    """Weights, biases and activation tag of a fully connected network.

    layer_dims = [d_1, ..., d_K] with d_1 the input and d_K the output
    dimension; weights[k] has shape (d_{k+2}, d_{k+1}) in zero-based
    indexing and biases[k] length d_{k+2}.  Instances are immutable and
    safe to share across threads.
    """

    layer_dims: tuple[int, ...]
    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]
    activation: ActivationKind

    @property
    def input_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def output_dim(self) -> int:
        return self.layer_dims[-1]

    @property
    def n_params(self) -> int:
        return param_count(self.layer_dims)


@dataclass(frozen=True)
class Jet:
    """Network output with exact input derivatives at a batch of points.

    value[n, i] is output i, grad[n, i, j] = d u_i / d y_j and
    hess_diag[n, i, j] = d^2 u_i / d y_j^2 at input point n.
    """

    value: np.ndarray
    grad: np.ndarray
    hess_diag: np.ndarray


def param_count(layer_dims) -> int:
    """Total number of tunable parameters sum_k (d_k + 1) d_{k+1}."""
    dims = list(layer_dims)
    return sum((dims[k] + 1) * dims[k + 1] for k in range(len(dims) - 1))


def _check_dims(layer_dims) -> tuple[int, ...]:
    dims = tuple(int(d) for d in layer_dims)
    if len(dims) < 3:
        raise InvalidArchitectureError(
            f"need input, at least one hidden and output layer, got {list(dims)}"
        )
    if any(d < 1 for d in dims):
        raise InvalidArchitectureError(f"layer sizes must be >= 1, got {list(dims)}")
    return dims


def init_params(
    seed: int,
    layer_dims,
    activation_kind: ActivationKind = ActivationKind.TANH,
    scheme: str = "xavier_uniform",
) -> NetworkParams:
    """Seeded Xavier-uniform initialization with zero biases.

    Weights of layer k are drawn from U(-a, a) with a = sqrt(6/(d_k + d_{k+1})).
    The draw uses PCG64 seeded with `seed`; identical seeds give
    bit-identical parameters.
    """
    if scheme != "xavier_uniform":
        raise ValueError(f"unknown init scheme: {scheme}")
    dims = _check_dims(layer_dims)
    rng = np.random.Generator(np.random.PCG64(seed))
    weights = []
    biases = []
    for k in range(len(dims) - 1):
        fan_in, fan_out = dims[k], dims[k + 1]
        a = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-a, a, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return NetworkParams(dims, tuple(weights), tuple(biases), ActivationKind(activation_kind))


def flatten_params(params: NetworkParams) -> np.ndarray:
    """Concatenate all parameters into one vector, layer order W_1, b_1, ..."""
    parts = []
    for W, b in zip(params.weights, params.biases):
        parts.append(W.ravel())
        parts.append(b)
    return np.concatenate(parts)


def unflatten_params(theta: np.ndarray, template: NetworkParams) -> NetworkParams:
    """Inverse of flatten_params for the given architecture."""
    dims = template.layer_dims
    if theta.shape != (param_count(dims),):
        raise ValueError(f"expected {param_count(dims)} parameters, got {theta.shape}")
    weights = []
    biases = []
    pos = 0
    for k in range(len(dims) - 1):
        nw = dims[k] * dims[k + 1]
        weights.append(theta[pos : pos + nw].reshape(dims[k + 1], dims[k]).copy())
        pos += nw
        biases.append(theta[pos : pos + dims[k + 1]].copy())
        pos += dims[k + 1]
    return NetworkParams(dims, tuple(weights), tuple(biases), template.activation)


def _contract(W: np.ndarray, J: np.ndarray) -> np.ndarray:
    """J_out[n,i,j] = sum_k W[i,k] J[n,k,j], via one reshaped matmul."""
    n, k, j = J.shape
    return (J.transpose(0, 2, 1).reshape(n * j, k) @ W.T).reshape(n, j, -1).transpose(0, 2, 1)


def _as_batch(y: np.ndarray, d_in: int) -> tuple[np.ndarray, bool]:
    y = np.asarray(y, dtype=float)
    single = y.ndim == 1
    if single:
        y = y[None, :]
    if y.ndim != 2 or y.shape[1] != d_in:
        raise ValueError(f"input shape {y.shape} incompatible with input dim {d_in}")
    return y, single


def forward(params: NetworkParams, y: np.ndarray) -> np.ndarray:
    """Evaluate the network at y, shape (d_1,) or (N, d_1)."""
    z, single = _as_batch(y, params.input_dim)
    last = len(params.weights) - 1
    for k, (W, b) in enumerate(zip(params.weights, params.biases)):
        z = z @ W.T + b
        if k != last:
            z = activation(params.activation, z)
    return z[0] if single else z


def forward_jet(params: NetworkParams, y: np.ndarray, need_hess: bool = True) -> Jet:
    """Evaluate value, Jacobian and pure second input derivatives at y.

    The chain rule is applied layer by layer: for z = sigma(a) with
    a = W x + b, J_z = sigma'(a) J_a and H_z = sigma''(a) J_a^2 + sigma'(a) H_a
    componentwise, which is exact for the diagonal of the input Hessian.
    With need_hess=False the second-order propagation is skipped and
    hess_diag is None.
    """
    z, single = _as_batch(y, params.input_dim)
    n, d_in = z.shape
    J = np.broadcast_to(np.eye(d_in), (n, d_in, d_in)).copy()
    H = np.zeros((n, d_in, d_in)) if need_hess else None
    last = len(params.weights) - 1
    for k, (W, b) in enumerate(zip(params.weights, params.biases)):
        z = z @ W.T + b
        J = _contract(W, J)
        if need_hess:
            H = _contract(W, H)
        if k != last:
            s1 = activation(params.activation, z, 1)[:, :, None]
            if need_hess:
                s2 = activation(params.activation, z, 2)[:, :, None]
                H = s2 * J * J + s1 * H
            J = s1 * J
            z = activation(params.activation, z)
    if single:
        return Jet(z[0], J[0], H[0] if need_hess else None)
    return Jet(z, J, H)


def save_checkpoint(params: NetworkParams, path) -> None:
    """Write the network to a JSON checkpoint; round-trips bit-exactly."""
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "layer_dims": list(params.layer_dims),
        "activation": params.activation.value,
        "flat_params": flatten_params(params).tolist(),
    }
    with open(path, "w") as f:
        json.dump(payload, f)


def load_checkpoint(path) -> NetworkParams:
    with open(path) as f:
        payload = json.load(f)
    version = payload.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unknown checkpoint version: {version!r}")
    dims = _check_dims(payload["layer_dims"])
    template = NetworkParams(
        dims,
        (),
        (),
        ActivationKind(payload["activation"]),
    )
    theta = np.asarray(payload["flat_params"], dtype=float)
    return unflatten_params(theta, template)
