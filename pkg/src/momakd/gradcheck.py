"""Central-difference check of the full distillation objective, block by block."""
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .config import RunConfig
from .errors import ConfigError
from .networks import ModelStack
from .trainer import STUDENT_SEED, TEACHER_SEED, TrainRun, distill_loss

TRAINABLE_BLOCKS = ("student.enc", "student.proj", "student.attn", "student.cls", "teacher.attn")
FROZEN_BLOCKS = ("teacher.enc", "teacher.proj", "teacher.cls")
MAX_DIM = 8
TOLERANCE = 1e-4


@dataclass
class BlockResult:
    block: str
    n_params: int
    max_rel_error: float
    trainable: bool
    passed: bool

    def row(self):
        err = "-" if not self.trainable else f"{self.max_rel_error:.3e}"
        kind = "grad" if self.trainable else "frozen"
        return f"{self.block:<14} {kind:<6} {self.n_params:>6} {err:>11}  {'PASS' if self.passed else 'FAIL'}"


def tiny_config(seed=0, **overrides):
    base = dict(input_dim=5, encoder_hidden=(6,), embed_dim=6, proj_dim=8, proj_hidden=6, heads=4,
                source_classes=3, target_classes=3, queue_size=8, batch_size=4, seed=seed)
    base.update(overrides)
    return RunConfig(**base)


def check_dims(cfg):
    dims = {"input_dim": cfg.input_dim, "embed_dim": cfg.embed_dim, "proj_dim": cfg.proj_dim,
            "proj_hidden": cfg.projection_hidden, "batch_size": cfg.batch_size,
            "queue_size": cfg.queue_size, "source_classes": cfg.source_classes,
            "target_classes": cfg.target_classes}
    dims.update({f"encoder_hidden[{i}]": w for i, w in enumerate(cfg.encoder_hidden)})
    big = {k: v for k, v in dims.items() if v > MAX_DIM}
    if big:
        raise ConfigError(f"gradient check needs dimensions <= {MAX_DIM}; too large: {big}")


def build_probe(cfg):
    """A distillation run on random weights with a pre-filled queue and one batch."""
    rng = np.random.default_rng([cfg.seed, 909])
    teacher = ModelStack(cfg, cfg.source_classes, [cfg.seed, TEACHER_SEED])
    teacher.loaded = True
    student = ModelStack(cfg, cfg.target_classes, [cfg.seed, STUDENT_SEED])
    run = TrainRun(cfg, "distill", student, teacher)
    negatives = rng.standard_normal((cfg.queue_size, cfg.proj_dim))
    if cfg.normalize_embeddings:
        negatives /= np.linalg.norm(negatives, axis=1, keepdims=True)
    run.queue.load_rows(negatives)
    x = rng.standard_normal((cfg.batch_size, cfg.input_dim))
    y = rng.integers(0, cfg.target_classes, cfg.batch_size)
    return run, x, y


def _all_params(run):
    out = {f"student.{n}": p for n, p in run.student.parameters().items()}
    out.update({f"teacher.{n}": p for n, p in run.teacher.parameters().items()})
    return out


def _block_of(name):
    return ".".join(name.split(".")[:2])


def gradient_check(cfg, h=1e-5, tol=TOLERANCE, corrupt=None):
    """Compare analytic and central-difference gradients for every block.

    ``corrupt`` names a block whose analytic gradient is perturbed before
    comparison; it exists to prove the harness can fail.
    """
    run, x, y = build_probe(cfg)
    params = _all_params(run)
    for p in params.values():
        p.grad = None
    tape = T.Tape()
    with tape:
        total, _, _ = distill_loss(run, x, y)
    tape.backward(total)

    def loss():
        return distill_loss(run, x, y)[0]

    results = []
    for block in TRAINABLE_BLOCKS:
        names = [n for n in params if _block_of(n) == block]
        worst, count = 0.0, 0
        for n in names:
            p = params[n]
            analytic = np.zeros_like(p.values) if p.grad is None else p.grad.copy()
            if corrupt == block:
                analytic = analytic + 1e-2 * (1.0 + np.abs(analytic))
            numeric = T.numerical_grad(loss, p, h)
            worst = max(worst, T.relative_error(analytic, numeric))
            count += p.size
        results.append(BlockResult(block, count, worst, True, worst <= tol))
    for block in FROZEN_BLOCKS:
        names = [n for n in params if _block_of(n) == block]
        clean = all(params[n].grad is None or not np.any(params[n].grad) for n in names)
        results.append(BlockResult(block, sum(params[n].size for n in names), 0.0, False, clean))
    return results


def format_table(results):
    head = f"{'block':<14} {'kind':<6} {'params':>6} {'max rel err':>11}  result"
    return "\n".join([head] + [r.row() for r in results])
