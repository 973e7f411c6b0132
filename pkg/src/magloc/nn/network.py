"""Network assembly: spec tuple -> layer objects, with shape inference.

Feed-forward networks expose forward/backward over a (B, ...) batch. A
network containing a GRU splits into three stages: ``embed`` (all layers
before the GRU, batched over windows), the GRU itself, and ``head``
(layers after the GRU). Training code drives the stages explicitly
because the recurrent stage consumes sequences, not batches.
"""

from __future__ import annotations

import numpy as np

from ..errors import ConfigError, ShapeError
from .layers import (FC, GRU, Conv2D, ConvLayer, DenseLayer, Flatten,
                     FlattenLayer, GRULayer, MaxPool, MaxPoolLayer, Output)


def _build_layer(spec, in_shape, rng):
    if isinstance(spec, Conv2D):
        if len(in_shape) != 3:
            raise ShapeError(f"conv layer needs (C, H, W) input, got {in_shape}")
        return ConvLayer(spec, in_shape, rng)
    if isinstance(spec, MaxPool):
        if len(in_shape) != 3:
            raise ShapeError(f"pool layer needs (C, H, W) input, got {in_shape}")
        return MaxPoolLayer(spec, in_shape)
    if isinstance(spec, Flatten):
        return FlattenLayer(in_shape)
    if isinstance(spec, FC):
        if len(in_shape) != 1:
            raise ShapeError(f"fully connected layer needs flat input, got {in_shape}")
        return DenseLayer(in_shape[0], spec.out_dim, spec.activation, rng)
    if isinstance(spec, GRU):
        if len(in_shape) != 1:
            raise ShapeError(f"GRU needs flat input, got {in_shape}")
        return GRULayer(spec, in_shape[0] + spec.extra_inputs, rng)
    if isinstance(spec, Output):
        if len(in_shape) != 1:
            raise ShapeError(f"output layer needs flat input, got {in_shape}")
        return DenseLayer(in_shape[0], spec.dim, "linear", rng)
    raise ConfigError(f"unknown layer spec {spec!r}")


class Network:
    def __init__(self, specs, input_shape, seed: int = 0):
        specs = tuple(specs)
        if not specs or not isinstance(specs[-1], Output):
            raise ConfigError("network must end with an Output layer")
        if any(isinstance(s, Output) for s in specs[:-1]):
            raise ConfigError("Output must be the last layer")
        if sum(isinstance(s, GRU) for s in specs) > 1:
            raise ConfigError("at most one GRU layer is supported")
        self.specs = specs
        self.input_shape = tuple(int(d) for d in input_shape)
        rng = np.random.default_rng(seed)
        self.layers = []
        self.gru_index = None
        shape = self.input_shape
        for i, spec in enumerate(specs):
            layer = _build_layer(spec, shape, rng)
            if isinstance(spec, GRU):
                self.gru_index = i
            self.layers.append(layer)
            shape = layer.out_shape
        self.output_dim = shape[0]

    # -- feed-forward path ------------------------------------------------
    @property
    def recurrent(self) -> bool:
        return self.gru_index is not None

    def forward(self, x: np.ndarray) -> np.ndarray:
        if self.recurrent:
            raise ConfigError("recurrent network: use embed/gru/head stages")
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def backward(self, dout: np.ndarray) -> np.ndarray:
        if self.recurrent:
            raise ConfigError("recurrent network: use embed/gru/head stages")
        for layer in reversed(self.layers):
            dout = layer.backward(dout)
        return dout

    # -- staged path for recurrent networks -------------------------------
    @property
    def gru(self) -> GRULayer:
        if self.gru_index is None:
            raise ConfigError("network has no GRU layer")
        return self.layers[self.gru_index]

    def embed(self, x: np.ndarray) -> np.ndarray:
        for layer in self.layers[:self.gru_index]:
            x = layer.forward(x)
        return x

    def embed_backward(self, demb: np.ndarray) -> np.ndarray:
        for layer in reversed(self.layers[:self.gru_index]):
            demb = layer.backward(demb)
        return demb

    def head(self, h: np.ndarray) -> np.ndarray:
        for layer in self.layers[self.gru_index + 1:]:
            h = layer.forward(h)
        return h

    def head_backward(self, dy: np.ndarray) -> np.ndarray:
        for layer in reversed(self.layers[self.gru_index + 1:]):
            dy = layer.backward(dy)
        return dy

    # -- parameter access --------------------------------------------------
    def param_triples(self):
        """Yield (name, param, grad) with stable, serializable names."""
        for i, layer in enumerate(self.layers):
            for name, p, g in layer.params():
                yield f"{i}.{name}", p, g

    def params(self) -> dict[str, np.ndarray]:
        return {name: p for name, p, _ in self.param_triples()}

    def set_params(self, params: dict[str, np.ndarray]) -> None:
        own = {name: p for name, p, _ in self.param_triples()}
        if set(own) != set(params):
            missing = set(own) ^ set(params)
            raise ConfigError(f"parameter names do not match network: {sorted(missing)}")
        for name, p in own.items():
            src = np.asarray(params[name], dtype=np.float64)
            if src.shape != p.shape:
                raise ShapeError(f"parameter {name}: shape {src.shape} != {p.shape}")
            p[...] = src

    def zero_grads(self) -> None:
        for _, _, g in self.param_triples():
            g[...] = 0.0

    def n_params(self) -> int:
        return sum(p.size for _, p, _ in self.param_triples())
