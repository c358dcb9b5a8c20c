"""Shared oracles for the test suite: finite differences and error metrics."""

import numpy as np


def fd_grad(scalar_fn, arr, h=1e-3):
    """Central-difference gradient of scalar_fn with respect to arr.

    ``arr`` is mutated in place during probing and restored afterwards, so
    ``scalar_fn`` must read it afresh on every call. Use float64 arrays.
    """
    grad = np.zeros(arr.shape, dtype=np.float64)
    flat = arr.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        hi = scalar_fn()
        flat[i] = orig - h
        lo = scalar_fn()
        flat[i] = orig
        gflat[i] = (hi - lo) / (2.0 * h)
    return grad


def rel_err(a, b, floor=1e-6):
    """Elementwise |a-b| / max(|a|, |b|, floor)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
