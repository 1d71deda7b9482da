"""Differentiable blocks: MLP encoder, projection head, multi-head
self-attention over the batch, and the linear classifier.

Every parameter is a named :class:`Tensor`; a :class:`ModelStack` exposes
them as one flat ``{name: tensor}`` map whose names are stable across
checkpoints (``enc.0.w``, ``proj.1.b``, ``attn.wq``, ``cls.w``, ...).
"""
import math

import numpy as np

from . import tensor as T
from .errors import ConfigError, DimensionError, SchemaError


def _uniform(rng, fan_in, shape):
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Linear:
    def __init__(self, n_in, n_out, rng, name, bias=True):
        self.n_in, self.n_out = n_in, n_out
        self.w = T.Tensor(_uniform(rng, n_in, (n_in, n_out)), requires_grad=True, name=f"{name}.w")
        self.b = None
        if bias:
            self.b = T.Tensor(_uniform(rng, n_in, (n_out,)), requires_grad=True, name=f"{name}.b")

    def __call__(self, x):
        if x.values.ndim != 2 or x.shape[1] != self.n_in:
            raise DimensionError(f"{self.w.name}: expected input width {self.n_in}, got shape {x.shape}")
        y = T.matmul(x, self.w)
        return y if self.b is None else T.add_bias(y, self.b)

    def parameters(self):
        return [self.w] if self.b is None else [self.w, self.b]


class MlpEncoder:
    """input_dim -> hidden widths -> embed_dim, ReLU between layers."""

    def __init__(self, input_dim, hidden, embed_dim, rng, name="enc"):
        widths = [input_dim, *hidden, embed_dim]
        self.layers = [Linear(a, b, rng, f"{name}.{i}") for i, (a, b) in enumerate(zip(widths, widths[1:]))]
        self.input_dim = input_dim

    def __call__(self, x):
        if x.values.ndim != 2 or x.shape[1] != self.input_dim:
            raise DimensionError(f"encoder expects input width {self.input_dim}, got shape {x.shape}")
        h = x
        for i, layer in enumerate(self.layers):
            h = layer(h)
            if i < len(self.layers) - 1:
                h = T.relu(h)
        return h

    def parameters(self):
        return [p for layer in self.layers for p in layer.parameters()]


class ProjectionHead:
    """FC -> ReLU -> FC."""

    def __init__(self, embed_dim, hidden, out_dim, rng, name="proj"):
        self.fc0 = Linear(embed_dim, hidden, rng, f"{name}.0")
        self.fc1 = Linear(hidden, out_dim, rng, f"{name}.1")

    def __call__(self, e):
        return self.fc1(T.relu(self.fc0(e)))

    def parameters(self):
        return self.fc0.parameters() + self.fc1.parameters()


class MultiHeadAttention:
    """Scaled dot-product self-attention across the rows of a batch.

    Head ``k`` uses the column block ``[k*d, (k+1)*d)`` of the fused
    query/key/value matrices, with ``d = width // heads``.
    """

    def __init__(self, width, heads, rng, output_proj=True, name="attn"):
        if heads < 1 or width % heads:
            raise ConfigError(f"heads={heads} must divide attention width {width}")
        self.width, self.heads, self.head_dim = width, heads, width // heads
        self.wq = T.Tensor(_uniform(rng, width, (width, width)), requires_grad=True, name=f"{name}.wq")
        self.wk = T.Tensor(_uniform(rng, width, (width, width)), requires_grad=True, name=f"{name}.wk")
        self.wv = T.Tensor(_uniform(rng, width, (width, width)), requires_grad=True, name=f"{name}.wv")
        self.wo = None
        if output_proj:
            self.wo = T.Tensor(_uniform(rng, width, (width, width)), requires_grad=True, name=f"{name}.wo")

    def __call__(self, z, return_weights=False):
        if z.values.ndim != 2 or z.shape[1] != self.width:
            raise DimensionError(f"attention expects width {self.width}, got shape {z.shape}")
        q, k, v = T.matmul(z, self.wq), T.matmul(z, self.wk), T.matmul(z, self.wv)
        out, weights = T.multi_head_attention(q, k, v, self.heads)
        if self.wo is not None:
            out = T.matmul(out, self.wo)
        return (out, weights) if return_weights else out

    def parameters(self):
        ps = [self.wq, self.wk, self.wv]
        return ps + [self.wo] if self.wo is not None else ps


class Classifier(Linear):
    def __init__(self, embed_dim, num_classes, rng, name="cls"):
        super().__init__(embed_dim, num_classes, rng, name)


class ModelStack:
    """Encoder, projection head, attention head and classifier of one network.

    Parameters are drawn from ``seed`` in construction order, so two stacks
    built from the same config and seed are identical.
    """

    ENCODER, PROJECTION, ATTENTION, CLASSIFIER = "enc", "proj", "attn", "cls"

    def __init__(self, cfg, num_classes, seed):
        rng = np.random.default_rng(seed)
        self.num_classes = num_classes
        self.loaded = False
        self.encoder = MlpEncoder(cfg.input_dim, cfg.encoder_hidden, cfg.embed_dim, rng)
        self.projection = ProjectionHead(cfg.embed_dim, cfg.projection_hidden, cfg.proj_dim, rng)
        self.attention = MultiHeadAttention(cfg.proj_dim, cfg.heads, rng, output_proj=cfg.output_proj)
        self.classifier = Classifier(cfg.embed_dim, num_classes, rng)

    def parameters(self):
        """Flat ordered ``{name: tensor}`` map."""
        out = {}
        for block in (self.encoder, self.projection, self.attention, self.classifier):
            for p in block.parameters():
                out[p.name] = p
        return out

    def block_parameters(self, block):
        return {n: p for n, p in self.parameters().items() if n.split(".", 1)[0] == block}

    def load_values(self, values, strict=True):
        """Copy arrays from ``{name: ndarray}`` into the matching parameters."""
        params = self.parameters()
        if strict and set(values) != set(params):
            missing = sorted(set(params) - set(values))
            extra = sorted(set(values) - set(params))
            raise SchemaError(f"parameter name mismatch; missing={missing} unexpected={extra}")
        staged = {}
        for name, arr in values.items():
            if name not in params:
                continue
            arr = np.array(arr, dtype=np.float64)
            if arr.shape != params[name].shape:
                raise SchemaError(f"{name}: shape {arr.shape} does not match expected {params[name].shape}")
            staged[name] = arr
        for name, arr in staged.items():
            params[name].values = arr
        self.loaded = True

    def state(self):
        return {n: p.values.copy() for n, p in self.parameters().items()}

    def encode(self, x):
        return encode(self, x)


def encode(stack, x):
    """Return ``(embedding, logits)`` for a batch."""
    embed = stack.encoder(x)
    return embed, stack.classifier(embed)


def project(head, e):
    return head(e)


def attend(msa, z):
    return msa(z)
