"""Shared helpers: finite-difference oracles and tiny component builders."""

import numpy as np
import pytest

from dpgdiff.numerics import Tape, Tensor


def central_difference(f, x: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Gradient of scalar f at x by central differences, one coordinate at a time."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = f(x)
        flat[i] = orig - step
        lo = f(x)
        flat[i] = orig
        gflat[i] = (hi - lo) / (2.0 * step)
    return grad


def tape_gradient(f, x: np.ndarray) -> np.ndarray:
    """Gradient of a Tensor-scalar-valued f at x via the reverse-mode tape."""
    leaf = Tensor(np.array(x, dtype=np.float64, copy=True))
    with Tape() as tape:
        tape.watch(leaf)
        out = f(leaf)
    return tape.backward(out)[leaf]


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    a, b = np.asarray(a), np.asarray(b)
    denom = max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-12)
    return float(np.max(np.abs(a - b)) / denom)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
