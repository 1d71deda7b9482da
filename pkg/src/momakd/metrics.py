"""Classification and representation metrics.

Conventions for degenerate cases:

* per-class F1 is 0 when precision + recall is 0 (including classes absent
  from both truth and prediction);
* quadratic kappa with zero expected weighted disagreement is 1.0 if the
  observed weighted disagreement is also zero, else 0.0;
* silhouette of a sample in a singleton class is 0;
* majority-vote ties go to the lowest class index.
"""
import logging
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import InputError

log = logging.getLogger(__name__)

AGGC_WEIGHTS = {"G3": 0.25, "G4": 0.25, "G5": 0.25, "Normal": 0.125, "Stroma": 0.125}


def confusion_matrix(y_true, y_pred, num_classes):
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape:
        raise InputError(f"truth {y_true.shape} and prediction {y_pred.shape} differ in length")
    for arr in (y_true, y_pred):
        if arr.size and (arr.min() < 0 or arr.max() >= num_classes):
            raise InputError(f"class index outside [0, {num_classes})")
    return kernels.confusion_counts(y_true, y_pred, num_classes)


def _check(cm):
    cm = np.asarray(cm)
    if cm.ndim != 2 or cm.shape[0] != cm.shape[1]:
        raise InputError(f"confusion matrix must be square, got shape {cm.shape}")
    if cm.sum() <= 0:
        raise InputError("empty confusion matrix")
    return cm.astype(np.float64)


def accuracy(cm):
    cm = _check(cm)
    return float(np.trace(cm) / cm.sum())


def per_class_f1(cm):
    cm = _check(cm)
    tp = np.diag(cm)
    pred = cm.sum(axis=0)
    true = cm.sum(axis=1)
    # 2PR/(P+R) == 2TP/(pred + true); zero when both are zero
    denom = pred + true
    return np.where(denom > 0, 2 * tp / np.where(denom > 0, denom, 1), 0.0)


def macro_f1(cm):
    return float(per_class_f1(cm).mean())


def weighted_f1_aggc(per_class):
    """Challenge-weighted F1 over the five named tissue classes."""
    missing = [k for k in AGGC_WEIGHTS if k not in per_class]
    if missing:
        raise InputError(f"missing per-class F1 for {', '.join(missing)}")
    return float(sum(w * float(per_class[k]) for k, w in AGGC_WEIGHTS.items()))


def kappa_quadratic(cm):
    cm = _check(cm)
    c = cm.shape[0]
    if c < 2:
        raise InputError("quadratic kappa needs at least two classes")
    idx = np.arange(c)
    w = (idx[:, None] - idx[None, :]) ** 2 / (c - 1) ** 2
    obs = cm / cm.sum()
    exp = np.outer(obs.sum(axis=1), obs.sum(axis=0))
    num = float((w * obs).sum())
    den = float((w * exp).sum())
    if den == 0.0:
        return 1.0 if num == 0.0 else 0.0
    return 1.0 - num / den


def silhouette(embeddings, labels):
    x = np.asarray(embeddings, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if x.ndim != 2 or x.shape[0] != labels.shape[0]:
        raise InputError(f"embeddings {x.shape} and labels {labels.shape} do not align")
    uniq, dense = np.unique(labels, return_inverse=True)
    if uniq.size < 2:
        raise InputError("silhouette needs at least two classes")
    return float(kernels.silhouette_samples(x, dense, uniq.size).mean())


def _pearson_rows(a, b):
    ac = a - a.mean(axis=1, keepdims=True)
    bc = b - b.mean(axis=1, keepdims=True)
    na = np.sqrt((ac * ac).sum(axis=1))
    nb = np.sqrt((bc * bc).sum(axis=1))
    out = np.zeros((a.shape[0], b.shape[0]))
    good_a, good_b = na > 0, nb > 0
    if not good_a.all() or not good_b.all():
        log.warning("zero-variance embedding rows: %d in A, %d in B; their correlations are set to 0",
                    int((~good_a).sum()), int((~good_b).sum()))
    sub = (ac[good_a] @ bc[good_b].T) / np.outer(na[good_a], nb[good_b])
    out[np.ix_(good_a, good_b)] = np.clip(sub, -1.0, 1.0)
    return out


def class_correlations(emb_a, labels_a, emb_b=None, labels_b=None):
    """Pearson correlation between every pair of samples, rows and columns
    sorted by class.

    Returns ``(matrix, sorted_labels_a, sorted_labels_b)``. With ``emb_b``
    omitted the set is correlated with itself.
    """
    emb_a = np.asarray(emb_a, dtype=np.float64)
    labels_a = np.asarray(labels_a)
    if emb_b is None:
        emb_b, labels_b = emb_a, labels_a
    emb_b = np.asarray(emb_b, dtype=np.float64)
    labels_b = np.asarray(labels_b)
    oa = np.argsort(labels_a, kind="stable")
    ob = np.argsort(labels_b, kind="stable")
    m = _pearson_rows(emb_a[oa], emb_b[ob])
    if emb_b is emb_a:
        np.fill_diagonal(m, np.where(np.diag(m) != 0, 1.0, 0.0))
    return m, labels_a[oa], labels_b[ob]


def sample_per_class(labels, per_class, rng):
    """Indices of ``per_class`` randomly chosen samples from each class."""
    labels = np.asarray(labels)
    picks = []
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        if idx.size < per_class:
            raise InputError(f"class {c} has {idx.size} samples, need {per_class}")
        picks.append(np.sort(rng.choice(idx, per_class, replace=False)))
    return np.concatenate(picks)


def majority_vote(preds, groups):
    preds = list(preds)
    groups = list(groups)
    if not preds or len(preds) != len(groups):
        raise InputError("majority vote needs equally long, nonempty predictions and group ids")
    votes = {}
    for p, g in zip(preds, groups):
        votes.setdefault(g, Counter())[int(p)] += 1
    return {g: min(cnt, key=lambda c: (-cnt[c], c)) for g, cnt in votes.items()}


@dataclass
class MetricsReport:
    accuracy: float
    macro_f1: float
    kappa_quadratic: float
    confusion: np.ndarray
    silhouette: float = None
    weighted_f1: float = None
    group_accuracy: float = None
    extra: dict = field(default_factory=dict)

    def as_lines(self):
        lines = []
        for key, val in self.extra.items():
            lines.append(f"{key}: {val}")
        lines.append(f"accuracy: {self.accuracy!r}")
        lines.append(f"macro_f1: {self.macro_f1!r}")
        lines.append(f"kappa_quadratic: {self.kappa_quadratic!r}")
        for key in ("weighted_f1", "silhouette", "group_accuracy"):
            val = getattr(self, key)
            if val is not None:
                lines.append(f"{key}: {val!r}")
        lines.append("confusion: " + ";".join(",".join(str(int(v)) for v in row) for row in self.confusion))
        return lines


def evaluate(y_true, y_pred, num_classes, embeddings=None, groups=None, aggc_names=None):
    cm = confusion_matrix(y_true, y_pred, num_classes)
    report = MetricsReport(accuracy(cm), macro_f1(cm), kappa_quadratic(cm), cm)
    if embeddings is not None and len(np.unique(y_true)) >= 2:
        report.silhouette = silhouette(embeddings, y_true)
    if aggc_names is not None:
        f1 = per_class_f1(cm)
        report.weighted_f1 = weighted_f1_aggc(dict(zip(aggc_names, f1)))
    if groups is not None:
        voted = majority_vote(y_pred, groups)
        truth = majority_vote(y_true, groups)
        report.group_accuracy = float(np.mean([voted[g] == truth[g] for g in truth]))
    return report


def read_report(path):
    """Parse a report file back into ``{key: str}``; ``#`` lines are skipped."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line or line.startswith("#") or ": " not in line:
                continue
            k, v = line.split(": ", 1)
            out[k] = v
    return out
