"""Run configuration: a flat set of hyperparameters grouped into sections.

The on-disk format is plain ``key = value`` lines under ``[section]``
headers. Parsing is strict: unknown keys, keys in the wrong section and
malformed values are errors that carry the offending line number.
"""
from dataclasses import dataclass, fields, replace

from .errors import ConfigError

REGIMES = ("same", "relevant", "irrelevant")

SECTIONS = {
    "data": (
        "regime", "input_dim", "source_classes", "target_classes", "center_scale",
        "noise", "shift", "target_per_class", "eval_per_class", "source_ratio",
        "imbalance", "augment",
    ),
    "model": ("encoder_hidden", "embed_dim", "proj_dim", "proj_hidden", "heads", "output_proj"),
    "distill": (
        "alpha", "tau", "kd_temperature", "gamma_auto", "gamma", "queue_size",
        "normalize_embeddings", "ce_weight", "nce_weight", "kl_weight", "student_init",
    ),
    "optim": ("batch_size", "lr", "beta1", "beta2", "eps", "epochs", "pretrain_epochs", "seed"),
    "io": ("out_dir", "save_queue"),
}

_SECTION_OF = {key: sec for sec, keys in SECTIONS.items() for key in keys}


@dataclass(frozen=True)
class RunConfig:
    # data
    regime: str = "same"
    input_dim: int = 16
    source_classes: int = 4
    target_classes: int = 4
    center_scale: float = 2.0
    noise: float = 1.0
    shift: float = 1.0
    target_per_class: int = 16
    eval_per_class: int = 100
    source_ratio: int = 10
    imbalance: float = 1.0
    augment: float = 0.0
    # model
    encoder_hidden: tuple = (32,)
    embed_dim: int = 16
    proj_dim: int = 16
    proj_hidden: int = 0
    heads: int = 4
    output_proj: bool = True
    # distill
    alpha: float = 0.9999
    tau: float = 0.07
    kd_temperature: float = 4.0
    gamma_auto: bool = True
    gamma: int = 1
    queue_size: int = 512
    normalize_embeddings: bool = True
    ce_weight: float = 1.0
    nce_weight: float = 1.0
    kl_weight: float = 1.0
    student_init: str = "teacher"
    # optim
    batch_size: int = 32
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.9999
    eps: float = 1e-8
    epochs: int = 50
    pretrain_epochs: int = 20
    seed: int = 0
    # io
    out_dir: str = "runs"
    save_queue: bool = False

    def __post_init__(self):
        self.validate()

    @property
    def projection_hidden(self):
        return self.proj_hidden or self.proj_dim

    def resolved_gamma(self):
        """0/1 switch for the KL term: derived from the regime unless overridden."""
        if self.gamma_auto:
            return gamma_for_regime(self.regime)
        return self.gamma

    def validate(self):
        if self.regime not in REGIMES:
            raise ConfigError(f"regime must be one of {REGIMES}, got {self.regime!r}")
        for name in ("input_dim", "source_classes", "target_classes", "embed_dim", "proj_dim",
                     "heads", "queue_size", "batch_size", "target_per_class",
                     "eval_per_class", "source_ratio"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if min(self.source_classes, self.target_classes) < 2:
            raise ConfigError("at least two classes are needed on both tasks")
        if any(w < 1 for w in self.encoder_hidden):
            raise ConfigError(f"encoder_hidden widths must be >= 1, got {self.encoder_hidden}")
        if self.proj_dim % self.heads:
            raise ConfigError(f"heads={self.heads} does not divide proj_dim={self.proj_dim}")
        if self.batch_size > self.queue_size:
            raise ConfigError(f"batch_size={self.batch_size} exceeds queue_size={self.queue_size}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.tau <= 0 or self.kd_temperature <= 0:
            raise ConfigError("tau and kd_temperature must be positive")
        if self.gamma not in (0, 1):
            raise ConfigError(f"gamma must be 0 or 1, got {self.gamma}")
        if self.student_init not in ("none", "teacher"):
            raise ConfigError(f"student_init must be 'none' or 'teacher', got {self.student_init!r}")
        if self.lr < 0 or self.eps <= 0 or not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("invalid optimizer settings")
        if self.noise <= 0 or self.shift < 0 or self.augment < 0 or self.imbalance < 1:
            raise ConfigError("noise must be > 0, shift/augment >= 0, imbalance >= 1")
        if self.epochs < 0 or self.pretrain_epochs < 0:
            raise ConfigError("epoch counts must be >= 0")

    def with_(self, **changes):
        return replace(self, **changes)

    def to_text(self):
        """Canonical text form; ``parse_config(cfg.to_text()) == cfg``."""
        lines = []
        for sec, keys in SECTIONS.items():
            lines.append(f"[{sec}]")
            for key in keys:
                lines.append(f"{key} = {_format(getattr(self, key))}")
            lines.append("")
        return "\n".join(lines)


def gamma_for_regime(regime):
    """KL switch: 1 when teacher and student solve the same task, else 0."""
    if regime not in REGIMES:
        raise ConfigError(f"unknown task kind {regime!r}")
    return 1 if regime == "same" else 0


_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _format(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    return repr(v) if isinstance(v, float) else str(v)


def _convert(key, raw):
    kind = _TYPES[key]
    if kind is bool or kind == "bool":
        low = raw.lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if kind is int or kind == "int":
        return int(raw)
    if kind is float or kind == "float":
        return float(raw)
    if kind is tuple or kind == "tuple":
        return tuple(int(p) for p in raw.split(",") if p.strip())
    return raw


def parse_config(text, source="<config>"):
    values = {}
    section = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        s = line.split("#", 1)[0].strip()
        if not s:
            continue
        if s.startswith("[") and s.endswith("]"):
            section = s[1:-1].strip()
            if section not in SECTIONS:
                raise ConfigError(f"{source}:{lineno}: unknown section [{section}]")
            continue
        if "=" not in s:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {s!r}")
        key, raw = (p.strip() for p in s.split("=", 1))
        if key not in _SECTION_OF:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if section is None:
            raise ConfigError(f"{source}:{lineno}: key {key!r} appears before any section header")
        if _SECTION_OF[key] != section:
            raise ConfigError(
                f"{source}:{lineno}: key {key!r} belongs in [{_SECTION_OF[key]}], not [{section}]")
        if key in values:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        try:
            values[key] = _convert(key, raw)
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for {key!r}: {exc}") from None
    try:
        return RunConfig(**values)
    except ConfigError as exc:
        raise ConfigError(f"{source}: {exc}") from None


def load_config(path):
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read(), source=str(path))
