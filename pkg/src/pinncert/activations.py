"""Scalar activation functions and their derivatives.

Two activations are supported: tanh (smooth, safe for second-order
residuals) and CELU, max(0,x) + min(0, exp(x)-1), which is C^1 with the
kink of its second derivative at 0 resolved one-sidedly through the
exponential branch.
"""

from __future__ import annotations

import enum

import numpy as np


class ActivationKind(str, enum.Enum):
    TANH = "tanh"
    CELU = "celu"


def activation(kind: ActivationKind, x: np.ndarray, order: int = 0) -> np.ndarray:
    """Evaluate the activation (order=0) or its order-th derivative.

    Orders up to 3 are available; third derivatives appear when a loss
    gradient is propagated through second-order input derivatives.
    """
    if kind == ActivationKind.TANH:
        s = np.tanh(x)
        if order == 0:
            return s
        d1 = 1.0 - s * s
        if order == 1:
            return d1
        if order == 2:
            return -2.0 * s * d1
        if order == 3:
            return -2.0 * d1 * (1.0 - 3.0 * s * s)
    elif kind == ActivationKind.CELU:
        pos = x > 0.0
        e = np.exp(np.minimum(x, 0.0))
        if order == 0:
            return np.where(pos, x, e - 1.0)
        if order == 1:
            return np.where(pos, 1.0, e)
        # higher derivatives vanish on the linear branch; at x = 0 the
        # exponential branch is used (one-sided value 1)
        return np.where(pos, 0.0, e)
    raise ValueError(f"unsupported activation/order: {kind}, {order}")
