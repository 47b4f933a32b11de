import numpy as np
import pytest

import seqda.diffengine as de


def numerical_grad(fn, arrs, eps=1e-6):
    """Central finite differences of scalar fn(*arrays) wrt every entry."""
    grads = []
    for ai, a in enumerate(arrs):
        g = np.zeros_like(a)
        flat = a.reshape(-1)
        gf = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = fn(*arrs)
            flat[i] = orig - eps
            fm = fn(*arrs)
            flat[i] = orig
            gf[i] = (fp - fm) / (2 * eps)
        grads.append(g)
    return grads


def analytic_grad(fn, arrs):
    ts = [de.parameter(a.copy()) for a in arrs]
    out = fn(*ts)
    out.backward()
    return [t.grad if t.grad is not None else np.zeros_like(t.data) for t in ts]


def max_rel_err(a, b):
    """Elementwise relative error with a unit floor on the denominator."""
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1.0)))


def check_gradients(fn, arrs, tol=1e-4, eps=1e-6):
    """fn maps Tensors to a scalar Tensor and arrays to a float."""

    def scalar_fn(*xs):
        return fn(*[de.as_tensor(x) for x in xs]).item()

    num = numerical_grad(scalar_fn, [a.copy() for a in arrs], eps=eps)
    ana = analytic_grad(fn, arrs)
    worst = max(max_rel_err(n, a) for n, a in zip(num, ana))
    assert worst < tol, "gradient mismatch: rel err %g" % worst
    return worst


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
