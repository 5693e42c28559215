import numpy as np
import pytest

import fspc
from fspc import autodiff as ad


@pytest.fixture(scope="session")
def tiny_pool():
    """Small synthetic pool shared by episode/training tests."""
    return fspc.build_synthetic_pool(6, 10, 48, seed=11)


def fd_gradient(loss_fn, params, step=1e-5):
    """Central finite differences of loss_fn w.r.t. each tensor in params."""
    grads = {}
    for name, p in params.items():
        g = np.zeros_like(p.data)
        flat, gflat = p.data.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            hi = float(loss_fn().data)
            flat[i] = orig - step
            lo = float(loss_fn().data)
            flat[i] = orig
            gflat[i] = (hi - lo) / (2 * step)
        grads[name] = g
    return grads


def backprop_gradient(loss_fn, params):
    for p in params.values():
        p.grad = None
    loss_fn().backward()
    return {name: (p.grad if p.grad is not None else np.zeros_like(p.data))
            for name, p in params.items()}


def max_rel_err(a, b, floor=1e-8):
    worst = 0.0
    for name in a:
        denom = np.maximum(np.maximum(np.abs(a[name]), np.abs(b[name])), floor)
        worst = max(worst, float((np.abs(a[name] - b[name]) / denom).max()))
    return worst


def check_gradients(loss_fn, params, step=1e-5, tol=1e-4):
    analytic = backprop_gradient(loss_fn, params)
    numeric = fd_gradient(loss_fn, params, step)
    err = max_rel_err(analytic, numeric)
    assert err < tol, f"gradient mismatch: max rel err {err:.3e}"
    return err
