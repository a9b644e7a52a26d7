"""Central finite-difference gradient checking shared by the test modules."""

import numpy as np

from fourlight.tensor import Tape, Tensor

STEP = 1e-5
RTOL = 1e-4
ATOL = 1e-7


def numeric_gradient(forward, inputs, which, eps=STEP):
    """Central finite differences of ``forward(*inputs)`` w.r.t. one input."""
    base = inputs[which].data
    grad = np.zeros(base.shape)
    flat = grad.reshape(-1)
    for i in range(base.size):
        plus = base.copy()
        plus.reshape(-1)[i] += eps
        minus = base.copy()
        minus.reshape(-1)[i] -= eps
        args_p = list(inputs)
        args_p[which] = Tensor(plus)
        args_m = list(inputs)
        args_m[which] = Tensor(minus)
        flat[i] = (forward(*args_p).item() - forward(*args_m).item()) / (2 * eps)
    return grad


def assert_gradients_match(forward, inputs, rtol=RTOL, atol=ATOL):
    """Analytic adjoints vs central differences for every input tensor."""
    with Tape() as tape:
        for t in inputs:
            tape.watch(t)
        loss = forward(*inputs)
    grads = tape.backward(loss)
    for which, t in enumerate(inputs):
        analytic = grads.get(t)
        numeric = numeric_gradient(forward, inputs, which)
        err = np.abs(analytic - numeric)
        bound = atol + rtol * np.maximum(np.abs(analytic), np.abs(numeric))
        assert np.all(err <= bound), (
            f"gradient mismatch for input {which}: max err "
            f"{(err - bound).max():.3e} beyond tolerance\n"
            f"analytic:\n{analytic}\nnumeric:\n{numeric}")
