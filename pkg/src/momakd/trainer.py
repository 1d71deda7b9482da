"""Training procedures: teacher pretraining, cross-entropy baselines and the
momentum-contrast distillation loop, with checkpoint round-tripping.

One distillation step runs, in order: student forward; teacher forward
with the encoder and projection detached; losses; backward; Adam on the
student and the teacher attention head; momentum update of the teacher
encoder and projection; enqueue of the teacher batch. The queue therefore
never holds the current batch while its contrastive loss is computed.
"""
import logging

import numpy as np

from . import checkpoint as ckpt_io
from . import distill, losses
from . import tensor as T
from .config import parse_config
from .errors import ConfigError, FormatError, MomaError, SchemaError, StateError
from .metrics import evaluate
from .networks import Classifier, MlpEncoder, ModelStack, encode
from .optim import AdamState, adam_step
from .synthdata import augment, epoch_order, generate, task_spec_from_config

log = logging.getLogger(__name__)

KINDS = ("pretrain", "finetune", "distill")
TEACHER_SEED, STUDENT_SEED = 7, 11


def _stack_seed(cfg, which):
    return [cfg.seed, which]


class TrainRun:
    """Everything that evolves during one training run."""

    def __init__(self, cfg, kind, student, teacher=None, tag=None):
        if kind not in KINDS:
            raise ConfigError(f"unknown run kind {kind!r}")
        if kind == "distill" and teacher is None:
            raise StateError("a distillation run needs a teacher stack")
        self.cfg, self.kind = cfg, kind
        self.tag = tag or kind
        self.student, self.teacher = student, teacher
        self.adam = AdamState(cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
        self.step = 0
        self.log = []
        self.queue = None
        self.pair = None
        self.gamma = 0
        if kind == "distill":
            distill.freeze_teacher(teacher)
            self.queue = distill.NegativeQueue(cfg.queue_size, cfg.proj_dim, cfg.batch_size,
                                               require_unit=cfg.normalize_embeddings)
            self.pair = distill.MomentumPair.for_stacks(student, teacher, cfg.alpha)
            self.gamma = cfg.resolved_gamma()
            if self.gamma and teacher.num_classes != student.num_classes:
                raise ConfigError(
                    f"KL term enabled but teacher has {teacher.num_classes} classes "
                    f"and student {student.num_classes}")
        self._data = None

    # -- data ---------------------------------------------------------------

    @property
    def data(self):
        if self._data is None:
            self._data = generate(task_spec_from_config(self.cfg))
        return self._data

    @property
    def source(self):
        return self.data[0]

    @property
    def target(self):
        return self.data[1]

    @property
    def train_set(self):
        return self.source.train if self.kind == "pretrain" else self.target.train

    @property
    def steps_per_epoch(self):
        n = len(self.train_set)
        if self.cfg.batch_size > n:
            raise ConfigError(f"batch_size={self.cfg.batch_size} exceeds training set size {n}")
        return n // self.cfg.batch_size

    @property
    def total_steps(self):
        epochs = self.cfg.pretrain_epochs if self.kind == "pretrain" else self.cfg.epochs
        return epochs * self.steps_per_epoch

    def batch_at(self, step):
        """The batch consumed at ``step``; a pure function of (config, step)."""
        spe = self.steps_per_epoch
        epoch, k = divmod(step, spe)
        d = self.train_set
        idx = epoch_order(len(d), self.cfg.seed, epoch)[k * self.cfg.batch_size:(k + 1) * self.cfg.batch_size]
        x = d.inputs[idx]
        if self.cfg.augment > 0:
            x = augment(x, self.cfg.augment, np.random.default_rng([self.cfg.seed, 505, step]))
        return x, d.labels[idx]

    # -- parameters ---------------------------------------------------------

    def trainable(self):
        """``{qualified name: tensor}`` updated by the optimizer."""
        out = {}
        if self.kind == "distill":
            for n, p in self.student.parameters().items():
                out[f"student.{n}"] = p
            for n, p in self.teacher.block_parameters("attn").items():
                out[f"teacher.{n}"] = p
        else:
            for block in ("enc", "cls"):
                for n, p in self.student.block_parameters(block).items():
                    out[f"student.{n}"] = p
        return out


def _kl_logits(teacher_logits, student_logits):
    """Align class axes; when the counts differ only the shared leading
    classes are compared (the value is then diagnostic only, gamma is 0)."""
    c = min(teacher_logits.shape[1], student_logits.shape[1])
    if c == teacher_logits.shape[1] == student_logits.shape[1]:
        return teacher_logits, student_logits
    return T.Tensor(teacher_logits.values[:, :c]), T.slice_cols(student_logits, 0, c)


def student_forward(run, x):
    """Student embedding, logits and attended contrastive features."""
    cfg = run.cfg
    embed, logits = encode(run.student, x)
    z = run.student.attention(run.student.projection(embed))
    if cfg.normalize_embeddings:
        z = T.l2_normalize_rows(z)
    return embed, logits, z


def distill_loss(run, x, y, queue_rows=None):
    """Composite objective on one batch without touching any run state.

    Must be called with an active tape for gradients. Returns
    ``(total, breakdown, z_teacher)``.
    """
    cfg = run.cfg
    xt = T.Tensor(x)
    _, logits_s, z_s = student_forward(run, xt)
    z_t, logits_t = distill.teacher_forward_pipeline(run.teacher, xt, cfg.normalize_embeddings)
    ce = losses.cross_entropy(logits_s, y)
    negatives = run.queue.rows() if queue_rows is None else queue_rows
    if len(negatives) == 0:
        # warm-up: no negatives exist before the first enqueue
        nce = T.Tensor(0.0)
    else:
        nce = losses.info_nce(z_s, z_t, negatives, cfg.tau)
    kl = losses.kd_kl(*_kl_logits(logits_t, logits_s), cfg.kd_temperature)
    total, breakdown = losses.total_loss(
        ce, nce, kl, run.gamma, (cfg.ce_weight, cfg.nce_weight, cfg.kl_weight), batch_size=len(y))
    return total, breakdown, z_t


def supervised_loss(run, x, y):
    _, logits = encode(run.student, T.Tensor(x))
    ce = losses.cross_entropy(logits, y)
    zero = T.Tensor(0.0)
    return losses.total_loss(ce, zero, zero, 0, batch_size=len(y))


def train_step(run, batch=None):
    """Advance ``run`` by one optimisation step and return its LossBreakdown."""
    step = run.step
    try:
        x, y = run.batch_at(step) if batch is None else batch
        params = run.trainable()
        warmup = run.kind == "distill" and len(run.queue) == 0
        tape = T.Tape()
        with tape:
            if run.kind == "distill":
                total, breakdown, z_t = distill_loss(run, x, y)
            else:
                total, breakdown = supervised_loss(run, x, y)
        for p in params.values():
            p.grad = None
        tape.backward(total)
        if warmup:
            for p in params.values():
                if p.grad is None:
                    # parameters that only feed the contrastive term
                    p.grad = np.zeros_like(p.values)
        adam_step(run.adam, params)
        if run.kind == "distill":
            distill.momentum_update(run.pair, run.student.parameters(), run.teacher.parameters())
            run.queue.enqueue(z_t.values)
    except MomaError as exc:
        raise type(exc)(f"step {step}: {exc}") from exc
    run.step += 1
    run.log.append(breakdown)
    return breakdown


def fit(run, steps=None):
    """Run until ``run.total_steps`` (or for ``steps`` more steps)."""
    end = run.total_steps if steps is None else run.step + steps
    while run.step < end:
        train_step(run)
    return run.log


# -- constructors ------------------------------------------------------------

def new_pretrain_run(cfg):
    student = ModelStack(cfg, cfg.source_classes, _stack_seed(cfg, TEACHER_SEED))
    return TrainRun(cfg, "pretrain", student, tag="TC")


def teacher_stack_from(cfg, teacher_ckpt):
    """Rebuild the pretrained network as a teacher stack."""
    kind = _run_meta(teacher_ckpt.config_text).get("kind")
    if kind not in (None, "pretrain"):
        raise SchemaError(f"expected a pretrained teacher checkpoint, got kind {kind!r}")
    teacher = ModelStack(cfg, cfg.source_classes, _stack_seed(cfg, TEACHER_SEED))
    values = _prefixed(teacher_ckpt.params, "student.")
    if not values:
        raise SchemaError("teacher checkpoint contains no network parameters")
    teacher.load_values(values)
    return teacher


def _init_student(cfg, teacher_values):
    student = ModelStack(cfg, cfg.target_classes, _stack_seed(cfg, STUDENT_SEED))
    if teacher_values is not None:
        params = student.parameters()
        student.load_values({n: v for n, v in teacher_values.items()
                             if n in params and params[n].shape == v.shape}, strict=False)
        student.loaded = False
    return student


def new_finetune_run(cfg, teacher_ckpt=None):
    values = None
    if teacher_ckpt is not None:
        values = teacher_stack_from(cfg, teacher_ckpt).state()
    tag = "FT_Teacher" if teacher_ckpt is not None else "FT_None"
    return TrainRun(cfg, "finetune", _init_student(cfg, values), tag=tag)


def new_distill_run(cfg, teacher_ckpt):
    if teacher_ckpt is None:
        raise StateError("distillation needs a pretrained teacher checkpoint")
    teacher = teacher_stack_from(cfg, teacher_ckpt)
    values = teacher.state() if cfg.student_init == "teacher" else None
    return TrainRun(cfg, "distill", _init_student(cfg, values), teacher, tag="MoMA")


def pretrain_teacher(cfg):
    """Supervised cross-entropy training on the source task.

    Returns ``(run, checkpoint)``; the checkpoint feeds distillation and
    fine-tuning runs.
    """
    run = new_pretrain_run(cfg)
    if run.student.num_classes != run.source.train.num_classes:
        raise ConfigError("source class count does not match the configuration")
    fit(run)
    return run, run_to_checkpoint(run)


def finetune_baseline(cfg, teacher_ckpt=None, init="none"):
    """Cross-entropy-only student training, optionally from teacher weights.

    Returns ``(run, report)`` with the report on the target test split.
    """
    if init == "teacher" and teacher_ckpt is None:
        raise StateError("init='teacher' requires a teacher checkpoint")
    run = new_finetune_run(cfg, teacher_ckpt if init == "teacher" else None)
    fit(run)
    return run, evaluate_stack(run.student, run.target.test)


def distill_run(cfg, teacher_ckpt):
    run = new_distill_run(cfg, teacher_ckpt)
    fit(run)
    return run, evaluate_stack(run.student, run.target.test)


# -- evaluation and inference --------------------------------------------------

def predict_stack(stack, x):
    with T.no_grad():
        embed, logits = encode(stack, T.Tensor(x))
    return embed.values, logits.values


def evaluate_stack(stack, dataset, aggc_names=None):
    embed, logits = predict_stack(stack, dataset.inputs)
    return evaluate(dataset.labels, logits.argmax(axis=1), stack.num_classes,
                    embeddings=embed, groups=dataset.groups, aggc_names=aggc_names)


class InferenceModel:
    """Student encoder and classifier only; everything else is discarded."""

    def __init__(self, cfg, num_classes):
        rng = np.random.default_rng(0)
        self.cfg = cfg
        self.num_classes = num_classes
        self.encoder = MlpEncoder(cfg.input_dim, cfg.encoder_hidden, cfg.embed_dim, rng)
        self.classifier = Classifier(cfg.embed_dim, num_classes, rng)

    def parameters(self):
        return {p.name: p for p in self.encoder.parameters() + self.classifier.parameters()}

    def predict_logits(self, x):
        with T.no_grad():
            return self.classifier(self.encoder(T.Tensor(x))).values

    def predict(self, x):
        return self.predict_logits(x).argmax(axis=1)

    def to_checkpoint(self):
        text = self.cfg.to_text() + _meta_text("inference", "inference")
        return ckpt_io.Checkpoint(text, {f"student.{n}": p.values.copy() for n, p in self.parameters().items()})


def export_inference(run):
    model = InferenceModel(run.cfg, run.student.num_classes)
    src = run.student.parameters()
    for name, p in model.parameters().items():
        p.values = src[name].values.copy()
    return model


# -- checkpoints -------------------------------------------------------------

def _meta_text(kind, tag):
    return f"\n[run]\nkind = {kind}\ntag = {tag}\n"


def _split_config_text(text):
    head, sep, tail = text.partition("\n[run]\n")
    return head, tail if sep else ""


def _run_meta(text):
    _, tail = _split_config_text(text)
    meta = {}
    for line in tail.splitlines():
        if "=" in line:
            k, v = (s.strip() for s in line.split("=", 1))
            meta[k] = v
    return meta


def _prefixed(tensors, prefix):
    return {k[len(prefix):]: v for k, v in tensors.items() if k.startswith(prefix)}


def run_to_checkpoint(run, include_queue=None):
    if include_queue is None:
        include_queue = run.cfg.save_queue
    params = {f"student.{n}": p.values.copy() for n, p in run.student.parameters().items()}
    if run.teacher is not None:
        params.update({f"teacher.{n}": p.values.copy() for n, p in run.teacher.parameters().items()})
    extras = {"adam.t": np.array(float(run.adam.t)),
              "rng.state": np.array([float(run.cfg.seed), float(run.step)])}
    for name in run.trainable():
        if name in run.adam.m:
            extras[f"adam.m.{name}"] = run.adam.m[name].copy()
            extras[f"adam.v.{name}"] = run.adam.v[name].copy()
    if include_queue and run.queue is not None:
        extras["queue.rows"] = run.queue.rows()
    return ckpt_io.Checkpoint(run.cfg.to_text() + _meta_text(run.kind, run.tag), params, extras)


def save_checkpoint(run, path, include_queue=None):
    return ckpt_io.save(path, run_to_checkpoint(run, include_queue))


def config_from_checkpoint(ck):
    head, _ = _split_config_text(ck.config_text)
    try:
        return parse_config(head, source="<checkpoint config>")
    except ConfigError as exc:
        raise FormatError(f"checkpoint carries an invalid config: {exc}") from None


def run_from_checkpoint(ck):
    cfg = config_from_checkpoint(ck)
    meta = _run_meta(ck.config_text)
    kind = meta.get("kind")
    if kind not in KINDS:
        raise SchemaError(f"checkpoint run kind {kind!r} cannot be resumed")
    n_classes = cfg.source_classes if kind == "pretrain" else cfg.target_classes
    student = ModelStack(cfg, n_classes, _stack_seed(cfg, TEACHER_SEED if kind == "pretrain" else STUDENT_SEED))
    student.load_values(_prefixed(ck.params, "student."))
    student.loaded = False
    teacher = None
    teacher_values = _prefixed(ck.params, "teacher.")
    if kind == "distill":
        if not teacher_values:
            raise SchemaError("distillation checkpoint lacks teacher parameters")
        teacher = ModelStack(cfg, cfg.source_classes, _stack_seed(cfg, TEACHER_SEED))
        teacher.load_values(teacher_values)
    elif teacher_values:
        raise SchemaError(f"unexpected teacher parameters in a {kind} checkpoint")
    run = TrainRun(cfg, kind, student, teacher, tag=meta.get("tag"))
    ex = ck.extras
    if "adam.t" not in ex or "rng.state" not in ex:
        raise SchemaError("checkpoint lacks optimizer or rng state")
    run.adam.t = int(ex["adam.t"].reshape(-1)[0])
    seed, step = (int(v) for v in ex["rng.state"])
    if seed != cfg.seed:
        raise SchemaError(f"rng seed {seed} does not match config seed {cfg.seed}")
    run.step = step
    trainable = run.trainable()
    for name, p in trainable.items():
        m, v = ex.get(f"adam.m.{name}"), ex.get(f"adam.v.{name}")
        if (m is None) != (v is None):
            raise SchemaError(f"incomplete optimizer state for {name}")
        if m is not None:
            if m.shape != p.shape or v.shape != p.shape:
                raise SchemaError(f"optimizer state shape mismatch for {name}")
            run.adam.m[name], run.adam.v[name] = m.copy(), v.copy()
    if "queue.rows" in ex:
        if run.queue is None:
            raise SchemaError("queue contents stored for a run without a queue")
        run.queue.load_rows(ex["queue.rows"])
    return run


def load_checkpoint(path):
    return run_from_checkpoint(ckpt_io.load(path))


def inference_from_checkpoint(ck):
    """Build an inference model from any checkpoint that carries a student."""
    cfg = config_from_checkpoint(ck)
    kind = _run_meta(ck.config_text).get("kind")
    n_classes = cfg.source_classes if kind == "pretrain" else cfg.target_classes
    model = InferenceModel(cfg, n_classes)
    values = _prefixed(ck.params, "student.")
    params = model.parameters()
    missing = sorted(set(params) - set(values))
    if missing:
        raise SchemaError(f"checkpoint lacks inference parameters {missing}")
    for name, p in params.items():
        if values[name].shape != p.shape:
            raise SchemaError(f"{name}: shape {values[name].shape} does not match expected {p.shape}")
    for name, p in params.items():
        p.values = values[name].copy()
    return model, kind
