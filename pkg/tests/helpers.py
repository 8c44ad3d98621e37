"""Shared numerical oracles for the test suite.

These stay deliberately independent of the library's backward pass:
central finite differences and naive loop implementations only.
"""

import numpy as np


def numeric_gradient(f, x, eps=1e-6):
    """Central-difference gradient of scalar f at x, elementwise."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.ravel()
    gflat = g.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = f(x)
        flat[i] = orig - eps
        fm = f(x)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * eps)
    return g


def rel_err(a, b, floor=1e-8):
    """Max-norm relative disagreement between two gradient arrays."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = max(np.max(np.abs(b)), floor)
    return np.max(np.abs(a - b)) / denom


def naive_conv1d(v, kernel, dilation=1):
    """Loop convolution per the dilated-filter definition, no padding.

    v is (channels, length) with a single-output-channel kernel
    (channels, k); returns the length-(L-(k-1)*d) output sequence.
    """
    v = np.atleast_2d(np.asarray(v, dtype=np.float64))
    kernel = np.atleast_2d(np.asarray(kernel, dtype=np.float64))
    c, length = v.shape
    _, k = kernel.shape
    l_out = length - (k - 1) * dilation
    out = np.zeros(l_out)
    for s in range(l_out):
        acc = 0.0
        for ch in range(c):
            for j in range(k):
                acc += v[ch, s + j * dilation] * kernel[ch, j]
        out[s] = acc
    return out


def away_from_kinks(x, margin=1e-3):
    """Shift entries that sit within ``margin`` of zero, where relu-family
    activations are not differentiable and finite differences lie."""
    x = np.asarray(x, dtype=np.float64).copy()
    x[np.abs(x) < margin] += 3 * margin
    return x
