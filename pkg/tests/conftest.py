import numpy as np
import pytest

from samarl import autodiff as ad
from samarl.autodiff import Graph


def finite_difference(f, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central finite differences of a scalar function of a flat array."""
    g = np.zeros_like(x)
    flat = x.ravel()
    gf = g.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        gf[i] = (fp - fm) / (2 * h)
    return g


def max_rel_err(a: np.ndarray, b: np.ndarray) -> float:
    denom = np.maximum(1.0, np.maximum(np.abs(a), np.abs(b)))
    return float((np.abs(a - b) / denom).max())


def grad_of(build_loss, params):
    """Tape the loss once and return each parameter's gradient."""
    for p in params:
        p.zero_grad()
    with Graph() as g:
        loss = build_loss()
        g.backward(loss)
    return [p.grad for p in params]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
