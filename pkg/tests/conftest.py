import numpy as np
import pytest

from sympflow.diffeng import Dual2
from sympflow.flows import SympFlowModel
from sympflow.potential import QuadraticPotential


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def quadratic_model():
    """L=1 pair with V_p = V_m = t*z^2/2 (hand-checkable layer maps)."""
    return SympFlowModel.from_pairs(
        [(QuadraticPotential(1), QuadraticPotential(1))], dim=1, dt=1.0
    )


def eval_potential_dual2(net, t, z, direction):
    """Reference scalar evaluation of an MLP potential with Dual2 numbers.

    direction is a (1+d,) input direction in (t, z); the result carries the
    value, the directional first derivative and the directional second
    derivative of the network along it.
    """
    Ws, bs = net.arrays()
    x = [Dual2(float(v), float(w)) for v, w in zip([t, *z], direction)]
    for layer, (W, b) in enumerate(zip(Ws, bs)):
        y = []
        for r in range(W.shape[0]):
            acc = Dual2(float(b[r]))
            for c in range(W.shape[1]):
                acc = acc + x[c] * float(W[r, c])
            if layer < len(Ws) - 1:
                acc = acc.tanh() if net.activation == "tanh" else acc.sin()
            y.append(acc)
        x = y
    return x[0]
