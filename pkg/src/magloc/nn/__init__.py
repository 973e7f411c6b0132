"""Minimal float64 neural-network engine on numpy.

Layers are declared as frozen dataclass specs (see :mod:`.layers`), built
into a :class:`~.network.Network` of stateful layer objects, and trained
with plain SGD under a cyclic triangular learning-rate schedule
(:mod:`.optim`). Convolution and pooling run through dual-backend kernels
(:mod:`.kernels`). Everything is float64 and seed-deterministic; there is
no autograd, each layer implements its own backward pass (verified against
central finite differences in the test suite).
"""

from .layers import FC, GRU, Conv2D, Flatten, MaxPool, Output
from .losses import LOSSES, loss_fn
from .network import Network
from .optim import SGD, CyclicLR, cyclic_lr
from .serialize import load_model, save_model

__all__ = [
    "Conv2D", "MaxPool", "Flatten", "FC", "GRU", "Output",
    "Network", "SGD", "CyclicLR", "cyclic_lr",
    "LOSSES", "loss_fn", "save_model", "load_model",
]
