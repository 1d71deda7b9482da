"""Numpy implementations of the hot kernels.

These are the reference versions; ``_ckernels.pyx`` mirrors them loop for
loop. Both operate on C-contiguous float64 / int64 arrays.
"""
import numpy as np


def softmax_rows(x):
    shifted = x - x.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def log_softmax_rows(x):
    shifted = x - x.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def softmax_rows_backward(y, gy):
    """Vector-Jacobian product of row softmax given its output ``y``."""
    return y * (gy - (gy * y).sum(axis=1, keepdims=True))


def log_softmax_rows_backward(y, gy):
    """Vector-Jacobian product of row log-softmax given its output ``y``."""
    return gy - np.exp(y) * gy.sum(axis=1, keepdims=True)


def pairwise_distances(x):
    diff = x[:, None, :] - x[None, :, :]
    return np.sqrt((diff * diff).sum(axis=2))


def silhouette_samples(x, labels, n_labels):
    d = pairwise_distances(x)
    n = x.shape[0]
    sums = np.zeros((n, n_labels))
    for c in range(n_labels):
        sums[:, c] = d[:, labels == c].sum(axis=1)
    counts = np.bincount(labels, minlength=n_labels).astype(np.float64)
    out = np.zeros(n)
    for i in range(n):
        own = labels[i]
        if counts[own] <= 1:
            continue
        a = sums[i, own] / (counts[own] - 1)
        b = np.inf
        for c in range(n_labels):
            if c != own and counts[c] > 0:
                b = min(b, sums[i, c] / counts[c])
        m = max(a, b)
        out[i] = 0.0 if m == 0 else (b - a) / m
    return out


def confusion_counts(y_true, y_pred, n_classes):
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (y_true, y_pred), 1)
    return cm


def mha_forward(q, k, v, heads):
    """Batch self-attention per column block; returns (output, weights[heads, n, n])."""
    n, width = q.shape
    d = width // heads
    scale = 1.0 / np.sqrt(d)
    out = np.empty((n, width))
    weights = np.empty((heads, n, n))
    for h in range(heads):
        sl = slice(h * d, (h + 1) * d)
        a = softmax_rows((q[:, sl] @ k[:, sl].T) * scale)
        weights[h] = a
        out[:, sl] = a @ v[:, sl]
    return out, weights


def mha_backward(q, k, v, weights, gout, heads):
    n, width = q.shape
    d = width // heads
    scale = 1.0 / np.sqrt(d)
    gq, gk, gv = np.empty_like(q), np.empty_like(k), np.empty_like(v)
    for h in range(heads):
        sl = slice(h * d, (h + 1) * d)
        a = weights[h]
        g = gout[:, sl]
        gv[:, sl] = a.T @ g
        gs = softmax_rows_backward(a, g @ v[:, sl].T) * scale
        gq[:, sl] = gs @ k[:, sl]
        gk[:, sl] = gs.T @ q[:, sl]
    return gq, gk, gv
