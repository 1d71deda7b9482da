"""Mutable distillation state: the momentum teacher, the negative queue and
the KL gating rule."""
import numpy as np

from . import tensor as T
from .config import gamma_for_regime
from .errors import ConfigError, DimensionError, DegenerateInputError, StateError

# Blocks that follow the student by exponential moving average. The teacher
# attention head is trained by gradient and the teacher classifier is frozen.
MOMENTUM_BLOCKS = ("enc", "proj")


class NegativeQueue:
    """Fixed-capacity FIFO ring of embedding rows.

    :meth:`rows` always returns the stored rows oldest first, independent of
    where the write cursor sits, so downstream sums see a canonical order.
    """

    def __init__(self, capacity, dim, batch_size=None, require_unit=True):
        if capacity < 1 or dim < 1:
            raise ConfigError(f"queue capacity and dim must be >= 1, got {capacity}, {dim}")
        if batch_size is not None and batch_size > capacity:
            raise ConfigError(f"batch size {batch_size} exceeds queue capacity {capacity}")
        self.capacity, self.dim = capacity, dim
        self.require_unit = require_unit
        self.storage = np.zeros((capacity, dim))
        self.cursor = 0
        self.fill = 0

    def __len__(self):
        return self.fill

    def enqueue(self, batch):
        """Write ``batch`` at the cursor, overwriting the oldest rows once full."""
        rows = batch.values if isinstance(batch, T.Tensor) else np.asarray(batch, dtype=np.float64)
        if rows.ndim != 2 or rows.shape[1] != self.dim:
            raise DimensionError(f"queue expects rows of width {self.dim}, got shape {rows.shape}")
        n = rows.shape[0]
        if n > self.capacity:
            raise ConfigError(f"batch of {n} rows exceeds queue capacity {self.capacity}")
        if self.require_unit:
            norms = np.sqrt((rows * rows).sum(axis=1))
            bad = np.flatnonzero(np.abs(norms - 1.0) > 1e-10)
            if bad.size:
                raise DegenerateInputError(f"queue row {int(bad[0])} is not unit-norm ({norms[bad[0]]!r})")
        idx = (self.cursor + np.arange(n)) % self.capacity
        self.storage[idx] = rows
        self.cursor = int((self.cursor + n) % self.capacity)
        self.fill = min(self.capacity, self.fill + n)

    enqueue_dequeue = enqueue

    def rows(self):
        if self.fill < self.capacity:
            return self.storage[: self.fill].copy()
        return np.roll(self.storage, -self.cursor, axis=0)

    def load_rows(self, rows):
        """Reset and refill from rows given oldest first."""
        self.storage[:] = 0.0
        self.cursor = self.fill = 0
        rows = np.asarray(rows, dtype=np.float64).reshape(-1, self.dim)
        if rows.shape[0] > self.capacity:
            raise DimensionError(f"{rows.shape[0]} rows exceed capacity {self.capacity}")
        if rows.shape[0]:
            self.storage[: rows.shape[0]] = rows
            self.fill = rows.shape[0]
            self.cursor = self.fill % self.capacity


def enqueue_dequeue(queue, batch):
    queue.enqueue(batch)


class MomentumPair:
    """Pairs student and teacher parameter names for the EMA update."""

    def __init__(self, names, alpha):
        if not 0.0 <= alpha <= 1.0:
            raise ConfigError(f"momentum coefficient must lie in [0, 1], got {alpha}")
        self.names = list(names)
        self.alpha = float(alpha)

    @classmethod
    def for_stacks(cls, student, teacher, alpha):
        names = [n for n in student.parameters() if n.split(".", 1)[0] in MOMENTUM_BLOCKS]
        t_params = teacher.parameters()
        for n in names:
            if n not in t_params:
                raise ConfigError(f"teacher has no parameter {n!r} to pair with the student")
            if t_params[n].shape != student.parameters()[n].shape:
                raise ConfigError(f"{n}: student {student.parameters()[n].shape} vs teacher {t_params[n].shape}")
        return cls(names, alpha)


def momentum_update(pair, student_params, teacher_params):
    """teacher <- alpha * teacher + (1 - alpha) * student for every paired name."""
    a = pair.alpha
    for name in pair.names:
        if name not in student_params or name not in teacher_params:
            raise ConfigError(f"momentum pair name {name!r} missing from a parameter set")
        s, t = student_params[name], teacher_params[name]
        if s.shape != t.shape:
            raise DimensionError(f"{name}: student {s.shape} vs teacher {t.shape}")
        t.values = a * t.values + (1.0 - a) * s.values


def gamma_for_task(task_kind):
    return gamma_for_regime(task_kind)


def teacher_forward_pipeline(teacher, x, normalize=True):
    """Teacher embeddings for the contrastive term and logits for the KL term.

    Encoder, projection and classifier run outside the tape; only the
    teacher attention head is recorded, on the detached projection output.
    """
    if not getattr(teacher, "loaded", False):
        raise StateError("teacher stack has not been initialised from a pretrained checkpoint")
    with T.no_grad():
        embed = teacher.encoder(x)
        logits = teacher.classifier(embed)
        proj = teacher.projection(embed)
    z = teacher.attention(T.Tensor(proj.values))
    if normalize:
        z = T.l2_normalize_rows(z)
    return z, T.Tensor(logits.values)


def freeze_teacher(teacher):
    """Mark gradient ownership: only the teacher attention head is trainable."""
    for name, p in teacher.parameters().items():
        p.requires_grad = name.startswith("attn.")
