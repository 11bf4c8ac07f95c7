"""Central finite-difference oracle used across the gradient tests.

Kept independent of the autograd engine: it evaluates the forward
function as a black box on plain numpy arrays.
"""

import numpy as np


def numeric_gradient(fn, arrays, index, h=1e-5):
    """d fn(arrays) / d arrays[index] by central differences.

    ``fn`` maps a list of numpy arrays to a scalar float.
    """
    base = [a.copy() for a in arrays]
    target = base[index]
    grad = np.zeros_like(target)
    flat = target.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        plus = fn(base)
        flat[i] = orig - h
        minus = fn(base)
        flat[i] = orig
        gflat[i] = (plus - minus) / (2.0 * h)
    return grad


def relative_error(analytic, numeric):
    """Norm-based relative discrepancy between two gradients."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = max(np.linalg.norm(numeric.ravel()), 1e-12)
    return float(np.linalg.norm((analytic - numeric).ravel()) / denom)
