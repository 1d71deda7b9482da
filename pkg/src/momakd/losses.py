"""Objective terms: cross-entropy, temperature-scaled KL distillation and
InfoNCE against a queue of negatives, plus their gated sum.

All terms are negative log-likelihoods (non-negative) averaged over the
batch.
"""
from dataclasses import asdict, dataclass

import numpy as np

from . import kernels
from . import tensor as T
from .errors import ConfigError, DimensionError, InputError, StateError


@dataclass(frozen=True)
class LossBreakdown:
    ce: float
    nce: float
    kl: float
    gamma: int
    total: float
    batch_size: int

    def as_dict(self):
        return asdict(self)


def cross_entropy(logits, labels):
    labels = np.asarray(labels, dtype=np.int64)
    n, c = logits.shape
    if labels.shape != (n,):
        raise DimensionError(f"labels shape {labels.shape} does not match logits {logits.shape}")
    bad = np.flatnonzero((labels < 0) | (labels >= c))
    if bad.size:
        raise InputError(f"label {int(labels[bad[0]])} at index {int(bad[0])} outside [0, {c})")
    logp = T.log_softmax_rows(logits)
    return T.scale(T.sum_all(T.pick(logp, labels)), -1.0 / n)


def kd_kl(logits_teacher, logits_student, temperature):
    """``T^2 * KL(softmax(o_t/T) || softmax(o_s/T))`` averaged over the batch.

    The teacher side is treated as a constant.
    """
    if temperature <= 0:
        raise ConfigError(f"distillation temperature must be positive, got {temperature}")
    if logits_teacher.shape != logits_student.shape:
        raise DimensionError(f"teacher logits {logits_teacher.shape} vs student {logits_student.shape}")
    n = logits_student.shape[0]
    t_logp = kernels.log_softmax_rows(logits_teacher.values / temperature)
    t_p = np.exp(t_logp)
    s_logp = T.log_softmax_rows(T.scale(logits_student, 1.0 / temperature))
    gap = T.sub(T.Tensor(t_logp), s_logp)
    return T.scale(T.sum_all(T.mul(T.Tensor(t_p), gap)), temperature * temperature / n)


def info_nce(z_s, z_t, queue, tau):
    """Contrastive loss with positives ``(z_s[i], z_t[i])`` and queue rows as negatives.

    ``queue`` is a :class:`~momakd.distill.NegativeQueue` or an array of rows;
    its rows are constants.
    """
    if tau <= 0:
        raise ConfigError(f"temperature must be positive, got {tau}")
    if z_s.shape != z_t.shape:
        raise DimensionError(f"student embeddings {z_s.shape} vs teacher {z_t.shape}")
    negatives = queue.rows() if hasattr(queue, "rows") else np.asarray(queue, dtype=np.float64)
    if negatives.size == 0:
        raise StateError("negative queue is empty; prime it or skip the contrastive term during warm-up")
    if negatives.ndim != 2 or negatives.shape[1] != z_s.shape[1]:
        raise DimensionError(f"queue rows {negatives.shape} incompatible with embeddings {z_s.shape}")
    n = z_s.shape[0]
    pos = T.sum_rows(T.mul(z_s, z_t))
    neg = T.matmul(z_s, T.Tensor(negatives.T))
    logits = T.scale(T.concat_cols([pos, neg]), 1.0 / tau)
    logp = T.log_softmax_rows(logits)
    return T.scale(T.sum_all(T.pick(logp, np.zeros(n, dtype=np.int64))), -1.0 / n)


def total_loss(ce, nce, kl, gamma, weights=(1.0, 1.0, 1.0), batch_size=0):
    """Return ``(total_tensor, LossBreakdown)``.

    The KL term enters the sum only when ``gamma == 1`` but is always
    reported. With unit weights ``total == ce + nce + gamma * kl`` exactly.
    """
    if gamma not in (0, 1):
        raise ConfigError(f"gamma must be 0 or 1, got {gamma}")
    w_ce, w_nce, w_kl = weights
    ce_t = ce if w_ce == 1.0 else T.scale(ce, w_ce)
    nce_t = nce if w_nce == 1.0 else T.scale(nce, w_nce)
    total = T.add(ce_t, nce_t)
    if gamma:
        total = T.add(total, kl if w_kl == 1.0 else T.scale(kl, w_kl))
    breakdown = LossBreakdown(
        ce=ce.item(), nce=nce.item(), kl=kl.item(), gamma=int(gamma),
        total=total.item(), batch_size=int(batch_size),
    )
    return total, breakdown
