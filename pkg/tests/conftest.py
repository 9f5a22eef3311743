import numpy as np
import pytest

from incres_affect.tensor import Rng

FD_STEP = 1e-6
# gradients smaller than this are compared absolutely rather than relatively
REL_FLOOR = 1e-5


def rel_error(analytic, numeric):
    analytic = np.asarray(analytic, dtype=float)
    numeric = np.asarray(numeric, dtype=float)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), REL_FLOOR)
    return np.abs(analytic - numeric) / denom


def numeric_grad(loss_fn, tensor, indices=None, step=FD_STEP):
    """Central differences of ``loss_fn()`` w.r.t. ``tensor`` at flat ``indices``."""
    flat = tensor.data.reshape(-1)
    if indices is None:
        indices = range(flat.size)
    out = []
    for i in indices:
        orig = flat[i]
        flat[i] = orig + step
        up = float(loss_fn().data)
        flat[i] = orig - step
        down = float(loss_fn().data)
        flat[i] = orig
        out.append((up - down) / (2 * step))
    return np.array(out)


def check_grads(loss_fn, tensors, max_entries=None, rng=None):
    """Largest relative error between tape gradients and finite differences."""
    for t in tensors:
        t.grad = None
    loss_fn().backward()
    worst = 0.0
    for t in tensors:
        analytic = t.grad.reshape(-1)
        idx = np.arange(t.size)
        if max_entries is not None and t.size > max_entries:
            idx = (rng or np.random.default_rng(0)).choice(t.size, max_entries, replace=False)
        numeric = numeric_grad(loss_fn, t, idx)
        worst = max(worst, float(rel_error(analytic[idx], numeric).max()))
    return worst


@pytest.fixture
def rng():
    return Rng(1234)


@pytest.fixture
def nprng():
    return np.random.default_rng(1234)
