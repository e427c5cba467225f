from __future__ import annotations

import numpy as np
import pytest

from causalattn.autodiff import Tape, backward


def central_difference(value_fn, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function with respect to the
    buffer ``x``, which the function reads in place."""
    grad = np.zeros_like(x)
    flat = x.ravel()
    gflat = grad.ravel()
    for i in range(flat.size):
        saved = flat[i]
        flat[i] = saved + h
        f_plus = value_fn()
        flat[i] = saved - h
        f_minus = value_fn()
        flat[i] = saved
        gflat[i] = (f_plus - f_minus) / (2.0 * h)
    return grad


def max_rel_err(a: np.ndarray, b: np.ndarray) -> float:
    """Max elementwise |a - b| / max(1, |b|)."""
    denom = np.maximum(1.0, np.abs(b))
    return float(np.max(np.abs(a - b) / denom)) if a.size else 0.0


def assert_gradients_match(build_loss, tensors, rtol: float = 1e-4, h: float = 1e-5):
    """Check reverse-mode gradients of a scalar loss against central
    differences for every tensor in ``tensors``."""
    for t in tensors:
        t.grad = None
    with Tape() as tape:
        loss = build_loss()
    backward(tape, loss)
    for t in tensors:
        assert t.grad is not None, "missing gradient"
        ad_grad = t.grad.copy()
        fd_grad = central_difference(lambda: build_loss().item(), t.values, h=h)
        err = max_rel_err(ad_grad, fd_grad)
        assert err <= rtol, f"gradient mismatch: rel err {err:.3e} > {rtol}"


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
