"""Seeded Gaussian-mixture tasks for same, relevant and irrelevant
teacher/student pairings, plus augmentation and constant-size batching."""
import csv
from dataclasses import dataclass

import numpy as np

from .config import REGIMES
from .errors import InputError, SpecError

GROUP_SIZE = 8


@dataclass(frozen=True)
class TaskSpec:
    regime: str
    input_dim: int
    source_classes: int
    target_classes: int
    source_centers: np.ndarray
    target_centers: np.ndarray
    noise: float
    # target class -> source class, -1 when the target class has no counterpart
    label_map: tuple
    source_train_per_class: int
    target_per_class: int
    eval_per_class: int
    imbalance: float
    seed: int

    @property
    def shift(self):
        shared = [(t, s) for t, s in enumerate(self.label_map) if s >= 0]
        if not shared:
            return float("nan")
        d = [np.linalg.norm(self.target_centers[t] - self.source_centers[s]) for t, s in shared]
        return float(np.mean(d))


@dataclass
class Dataset:
    inputs: np.ndarray
    labels: np.ndarray
    split: str
    num_classes: int
    groups: np.ndarray = None

    def __len__(self):
        return self.labels.shape[0]


@dataclass
class Domain:
    train: Dataset
    val: Dataset
    test: Dataset

    def split(self, name):
        if name not in ("train", "val", "test"):
            raise InputError(f"unknown split {name!r}")
        return getattr(self, name)


def _random_directions(rng, n, dim):
    u = rng.standard_normal((n, dim))
    return u / np.linalg.norm(u, axis=1, keepdims=True)


def make_task_spec(regime, input_dim, source_classes, target_classes, *, center_scale=2.0,
                   noise=1.0, shift=1.0, target_per_class=16, eval_per_class=100,
                   source_ratio=10, imbalance=1.0, seed=0):
    """Draw cluster centres for both tasks and fix the class correspondence.

    same: identical classes, each target centre moved by ``shift`` in a
    random direction. relevant: the first ``k`` target classes are shifted
    copies of source classes and the rest are new. irrelevant: all target
    centres are fresh draws with no correspondence.
    """
    if regime not in REGIMES:
        raise SpecError(f"unknown regime {regime!r}")
    if regime == "same" and source_classes != target_classes:
        raise SpecError(f"same regime needs equal class counts, got {source_classes} and {target_classes}")
    if min(source_classes, target_classes) < 2:
        raise SpecError("each task needs at least two classes")
    rng = np.random.default_rng([seed, 101])
    src = rng.standard_normal((source_classes, input_dim)) * center_scale
    fresh = rng.standard_normal((target_classes, input_dim)) * center_scale
    moved = _random_directions(rng, target_classes, input_dim) * shift
    if regime == "same":
        shared = target_classes
    elif regime == "relevant":
        shared = min(source_classes, target_classes)
        if shared == target_classes:
            shared -= 1
        if shared < 1:
            raise SpecError("relevant regime needs at least one shared class")
    else:
        shared = 0
    tgt = fresh.copy()
    tgt[:shared] = src[:shared] + moved[:shared]
    label_map = tuple(c if c < shared else -1 for c in range(target_classes))
    total_target = target_per_class * target_classes
    src_per_class = max(1, int(np.ceil(source_ratio * total_target / source_classes)))
    return TaskSpec(regime, input_dim, source_classes, target_classes, src, tgt, float(noise),
                    label_map, src_per_class, target_per_class, eval_per_class, float(imbalance), seed)


def task_spec_from_config(cfg):
    return make_task_spec(
        cfg.regime, cfg.input_dim, cfg.source_classes, cfg.target_classes,
        center_scale=cfg.center_scale, noise=cfg.noise, shift=cfg.shift,
        target_per_class=cfg.target_per_class, eval_per_class=cfg.eval_per_class,
        source_ratio=cfg.source_ratio, imbalance=cfg.imbalance, seed=cfg.seed,
    )


def class_counts(per_class, num_classes, imbalance):
    """Geometric decay from ``per_class`` down to ``per_class / imbalance``."""
    if num_classes == 1 or imbalance == 1.0:
        return [per_class] * num_classes
    return [max(1, int(round(per_class * imbalance ** (-c / (num_classes - 1))))) for c in range(num_classes)]


def _sample(rng, centers, counts, noise, split):
    xs, ys = [], []
    for c, n in enumerate(counts):
        xs.append(centers[c] + noise * rng.standard_normal((n, centers.shape[1])))
        ys.append(np.full(n, c, dtype=np.int64))
    x, y = np.concatenate(xs), np.concatenate(ys)
    groups = None
    if split != "train":
        # consecutive same-class runs play the role of slides
        groups = np.zeros(len(y), dtype=np.int64)
        gid, start = 0, 0
        for n in counts:
            for k in range(n):
                groups[start + k] = gid + k // GROUP_SIZE
            gid += -(-n // GROUP_SIZE)
            start += n
    perm = rng.permutation(len(y))
    return Dataset(x[perm], y[perm], split, centers.shape[0], None if groups is None else groups[perm])


def generate(spec):
    """Return ``(source, target)`` domains, each with train/val/test splits."""
    rng_src = np.random.default_rng([spec.seed, 202])
    rng_tgt = np.random.default_rng([spec.seed, 303])
    out = []
    for rng, centers, train_n, imbalance in (
        (rng_src, spec.source_centers, spec.source_train_per_class, 1.0),
        (rng_tgt, spec.target_centers, spec.target_per_class, spec.imbalance),
    ):
        k = centers.shape[0]
        train = _sample(rng, centers, class_counts(train_n, k, imbalance), spec.noise, "train")
        val = _sample(rng, centers, [spec.eval_per_class] * k, spec.noise, "val")
        test = _sample(rng, centers, [spec.eval_per_class] * k, spec.noise, "test")
        out.append(Domain(train, val, test))
    return out[0], out[1]


def augment(x, strength, rng):
    """Per-column random scaling plus additive Gaussian jitter; 0 is the identity."""
    if strength < 0:
        raise InputError(f"augmentation strength must be >= 0, got {strength}")
    x = np.asarray(x, dtype=np.float64)
    if strength == 0:
        return x.copy()
    col_scale = 1.0 + 0.1 * strength * rng.standard_normal(x.shape[1])
    return x * col_scale + 0.1 * strength * rng.standard_normal(x.shape)


def epoch_order(n, seed, epoch, shuffle=True):
    if not shuffle:
        return np.arange(n)
    return np.random.default_rng([seed, 404, epoch]).permutation(n)


def batches(d, batch_size, seed=0, shuffle=True, epoch=0):
    """Yield ``(x, y)`` batches of exactly ``batch_size`` rows; the tail is dropped."""
    n = len(d)
    if batch_size > n:
        raise InputError(f"batch size {batch_size} exceeds dataset size {n}")
    order = epoch_order(n, seed, epoch, shuffle)
    for k in range(n // batch_size):
        idx = order[k * batch_size:(k + 1) * batch_size]
        yield d.inputs[idx], d.labels[idx]


def export_csv(path, domain, header_lines=()):
    """Write every split as rows ``x0..xd,label,group,split``."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        w = csv.writer(fh)
        dim = domain.train.inputs.shape[1]
        w.writerow([f"x{i}" for i in range(dim)] + ["label", "group", "split"])
        for ds in (domain.train, domain.val, domain.test):
            for i in range(len(ds)):
                g = "" if ds.groups is None else int(ds.groups[i])
                w.writerow([repr(float(v)) for v in ds.inputs[i]] + [int(ds.labels[i]), g, ds.split])
