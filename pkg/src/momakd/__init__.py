"""Momentum-contrast knowledge distillation with attention-reweighted
features, at desk scale."""
__version__ = "0.1.0"

from .config import RunConfig, load_config, parse_config
from .kernels import BACKEND

__all__ = ["RunConfig", "load_config", "parse_config", "BACKEND", "__version__"]
