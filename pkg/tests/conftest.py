import numpy as np
import pytest


def finite_diff_grad(build_loss, param, step=1e-5):
    """Central finite differences of a scalar loss w.r.t. one tensor.

    ``build_loss`` must rebuild the forward graph from current tensor data on
    every call; ``param`` is perturbed in place one element at a time.
    """
    grad = np.zeros_like(param.data)
    flat = param.data.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = build_loss().item()
        flat[i] = orig - step
        lo = build_loss().item()
        flat[i] = orig
        gflat[i] = (hi - lo) / (2.0 * step)
    return grad


def assert_grad_close(analytic, numeric, rtol=1e-4, atol=1e-7):
    np.testing.assert_allclose(analytic, numeric, rtol=rtol, atol=atol)


@pytest.fixture
def rng():
    return np.random.default_rng(0)
