"""Base regressor: a 2-hidden-layer tanh MLP, its loss, and inner-loop
adaptation by recorded gradient descent.

The hidden width defaults to 40 (1801 parameters total); tests use a
reduced width so the full meta-gradient can be checked against finite
differences in a few seconds. tanh hidden units keep second derivatives
smooth, which second-order meta-gradients need.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from . import autodiff as ad
from .autodiff import Var

PARAM_NAMES = ("W1", "b1", "W2", "b2", "W3", "b3")


@dataclass
class BaseNet:
    """The six base-model tensors, as on-tape values."""

    W1: Var  # (2, h)
    b1: Var  # (1, h)
    W2: Var  # (h, h)
    b2: Var  # (1, h)
    W3: Var  # (h, 1)
    b3: Var  # (1, 1)

    def as_list(self) -> list[Var]:
        return [getattr(self, f.name) for f in fields(self)]

    @classmethod
    def from_list(cls, vs) -> "BaseNet":
        return cls(*vs)


def param_shapes(hidden: int) -> dict[str, tuple[int, int]]:
    return {
        "W1": (2, hidden), "b1": (1, hidden),
        "W2": (hidden, hidden), "b2": (1, hidden),
        "W3": (hidden, 1), "b3": (1, 1),
    }


def param_count(hidden: int) -> int:
    return sum(r * c for r, c in param_shapes(hidden).values())


def init_base_params(rng: np.random.Generator, hidden: int, scale: float = 1.0) -> dict[str, np.ndarray]:
    """Glorot-normal weights (optionally rescaled), zero biases."""
    out = {}
    for name, (r, c) in param_shapes(hidden).items():
        if name.startswith("b"):
            out[name] = np.zeros((r, c))
        else:
            out[name] = rng.normal(0.0, scale * np.sqrt(2.0 / (r + c)), (r, c))
    return out


def forward(net: BaseNet, inputs: Var) -> Var:
    """Predictions for an (n, 2) input batch; output layer is linear."""
    h1 = ad.tanh(ad.add(ad.matmul(inputs, net.W1), net.b1))
    h2 = ad.tanh(ad.add(ad.matmul(h1, net.W2), net.b2))
    return ad.add(ad.matmul(h2, net.W3), net.b3)


def mse_loss(predictions: Var, targets: Var) -> Var:
    """Mean of squared residuals over the batch."""
    n = predictions.shape[0] * predictions.shape[1]
    return ad.scalar_div(ad.sq_frobenius(ad.sub(predictions, targets)), float(n))


def inner_adapt(net: BaseNet, train_inputs: Var, train_targets: Var,
                lr: float, steps: int, create_graph: bool) -> BaseNet:
    """Full-batch gradient descent on the train MSE, recorded on the tape.

    With ``create_graph=True`` the result stays differentiable with respect
    to the starting parameters (the second-order path); otherwise inner
    gradients are detached and only the identity path remains.
    """

    def loss_fn(params):
        return mse_loss(forward(BaseNet.from_list(params), train_inputs), train_targets)

    adapted = ad.gradient_descent(loss_fn, net.as_list(), lr, steps, create_graph=create_graph)
    return BaseNet.from_list(adapted)
