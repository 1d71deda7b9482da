"""Backend selection for the hot kernels.

The compiled module is used when importable. Setting ``MOMAKD_PURE_PYTHON=1``
forces the numpy fallback, which is also what you get on an install
without a C toolchain. ``BACKEND`` names the active choice.
"""
import os

import numpy as np

from . import _pykernels

try:
    if os.environ.get("MOMAKD_PURE_PYTHON"):
        raise ImportError("pure-python backend requested")
    from . import _ckernels as _impl
    BACKEND = "cython"
except ImportError:
    _impl = _pykernels
    BACKEND = "python"

__all__ = [
    "BACKEND",
    "softmax_rows",
    "log_softmax_rows",
    "softmax_rows_backward",
    "log_softmax_rows_backward",
    "pairwise_distances",
    "silhouette_samples",
    "confusion_counts",
    "mha_forward",
    "mha_backward",
]


def _f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def _i64(a):
    return np.ascontiguousarray(a, dtype=np.int64)


def softmax_rows(x):
    return _impl.softmax_rows(_f64(x))


def log_softmax_rows(x):
    return _impl.log_softmax_rows(_f64(x))


def softmax_rows_backward(y, gy):
    return _impl.softmax_rows_backward(_f64(y), _f64(gy))


def log_softmax_rows_backward(y, gy):
    return _impl.log_softmax_rows_backward(_f64(y), _f64(gy))


def pairwise_distances(x):
    return _impl.pairwise_distances(_f64(x))


def silhouette_samples(x, labels, n_labels):
    return _impl.silhouette_samples(_f64(x), _i64(labels), int(n_labels))


def confusion_counts(y_true, y_pred, n_classes):
    return _impl.confusion_counts(_i64(y_true), _i64(y_pred), int(n_classes))


def mha_forward(q, k, v, heads):
    return _impl.mha_forward(_f64(q), _f64(k), _f64(v), int(heads))


def mha_backward(q, k, v, weights, gout, heads):
    return _impl.mha_backward(_f64(q), _f64(k), _f64(v), _f64(weights), _f64(gout), int(heads))
