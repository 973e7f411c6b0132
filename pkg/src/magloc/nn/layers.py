"""Layer specs and their stateful implementations.

A network is declared as a tuple of frozen spec dataclasses (Conv2D,
MaxPool, Flatten, FC, GRU, Output) and built into layer objects that hold
parameters, gradients and forward caches. Weights start at
U(-1/sqrt(fan_in), +1/sqrt(fan_in)), biases at zero.

The GRU follows the reset-before-candidate convention: the reset gate
multiplies the previous hidden state inside the candidate's recurrent
term, and the update gate interpolates h' = z*h + (1-z)*n, so z -> 1
preserves the old state. Its windowed forward takes a right-aligned
(W, B, D) block with an activity mask; hidden state starts at zero and
inactive slots pass the state through unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, ShapeError
from . import kernels

ACTIVATIONS = ("relu", "tanh", "linear")


@dataclass(frozen=True)
class Conv2D:
    out_channels: int
    kernel: int = 3
    stride: int = 1
    activation: str = "relu"


@dataclass(frozen=True)
class MaxPool:
    k: int = 2


@dataclass(frozen=True)
class Flatten:
    pass


@dataclass(frozen=True)
class FC:
    out_dim: int
    activation: str = "relu"


@dataclass(frozen=True)
class GRU:
    hidden_dim: int = 128
    layers: int = 2
    # inputs concatenated to the previous layer's features at every step
    # (the sequence regressor appends the fed-back position here)
    extra_inputs: int = 0


@dataclass(frozen=True)
class Output:
    dim: int


def _uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def _activate(name: str, pre: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(pre, 0.0)
    if name == "tanh":
        return np.tanh(pre)
    return pre


def _activate_backward(name: str, dy: np.ndarray, pre: np.ndarray, out: np.ndarray) -> np.ndarray:
    if name == "relu":
        return dy * (pre > 0.0)
    if name == "tanh":
        return dy * (1.0 - out * out)
    return dy


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


class ConvLayer:
    def __init__(self, spec: Conv2D, in_shape, rng):
        if spec.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {spec.activation!r}")
        c, h, w = in_shape
        ho = (h - spec.kernel) // spec.stride + 1
        wo = (w - spec.kernel) // spec.stride + 1
        if ho < 1 or wo < 1:
            raise ShapeError(f"conv kernel {spec.kernel} does not fit input {h}x{w}")
        self.spec = spec
        self.out_shape = (spec.out_channels, ho, wo)
        fan_in = c * spec.kernel * spec.kernel
        self.w = _uniform(rng, (spec.out_channels, c, spec.kernel, spec.kernel), fan_in)
        self.b = np.zeros(spec.out_channels)
        self.dw = np.zeros_like(self.w)
        self.db = np.zeros_like(self.b)
        self._cache = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        pre = kernels.conv2d_forward(x, self.w, self.b, self.spec.stride)
        out = _activate(self.spec.activation, pre)
        self._cache = (x, pre, out)
        return out

    def backward(self, dy: np.ndarray) -> np.ndarray:
        x, pre, out = self._cache
        dpre = _activate_backward(self.spec.activation, dy, pre, out)
        dx, dw, db = kernels.conv2d_backward(x, self.w, dpre, self.spec.stride)
        self.dw += dw
        self.db += db
        return dx

    def params(self):
        return [("w", self.w, self.dw), ("b", self.b, self.db)]


class MaxPoolLayer:
    def __init__(self, spec: MaxPool, in_shape):
        c, h, w = in_shape
        if h < spec.k or w < spec.k:
            raise ShapeError(f"pool size {spec.k} does not fit input {h}x{w}")
        self.spec = spec
        self.in_hw = (h, w)
        self.out_shape = (c, h // spec.k, w // spec.k)
        self._idx = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        out, idx = kernels.maxpool_forward(x, self.spec.k)
        self._idx = idx
        return out

    def backward(self, dy: np.ndarray) -> np.ndarray:
        h, w = self.in_hw
        return kernels.maxpool_backward(dy, self._idx, self.spec.k, h, w)

    def params(self):
        return []


class FlattenLayer:
    def __init__(self, in_shape):
        self.in_shape = tuple(in_shape)
        self.out_shape = (int(np.prod(in_shape)),)

    def forward(self, x: np.ndarray) -> np.ndarray:
        return x.reshape(x.shape[0], -1)

    def backward(self, dy: np.ndarray) -> np.ndarray:
        return dy.reshape((dy.shape[0],) + self.in_shape)

    def params(self):
        return []


class DenseLayer:
    def __init__(self, in_dim: int, out_dim: int, activation: str, rng):
        if activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {activation!r}")
        self.activation = activation
        self.out_shape = (out_dim,)
        self.w = _uniform(rng, (in_dim, out_dim), in_dim)
        self.b = np.zeros(out_dim)
        self.dw = np.zeros_like(self.w)
        self.db = np.zeros_like(self.b)
        self._cache = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        pre = x @ self.w + self.b
        out = _activate(self.activation, pre)
        self._cache = (x, pre, out)
        return out

    def backward(self, dy: np.ndarray) -> np.ndarray:
        x, pre, out = self._cache
        dpre = _activate_backward(self.activation, dy, pre, out)
        self.dw += x.T @ dpre
        self.db += dpre.sum(axis=0)
        return dpre @ self.w.T

    def params(self):
        return [("w", self.w, self.dw), ("b", self.b, self.db)]


class GRULayer:
    """Stacked GRU over a right-aligned context window.

    ``forward`` consumes (W, B, D) inputs with an optional (W, B) activity
    mask and returns the top layer's hidden state after the last step;
    ``backward`` takes the gradient of that state only, which suits a head
    that reads just the final state. ``step`` advances a (L, B, H) state by
    one input without caching, for incremental rollouts.
    """

    def __init__(self, spec: GRU, in_dim: int, rng):
        if spec.layers < 1 or spec.hidden_dim < 1:
            raise ConfigError("GRU needs at least one layer and one hidden unit")
        self.spec = spec
        self.in_dim = in_dim
        self.out_shape = (spec.hidden_dim,)
        h = spec.hidden_dim
        self.weights = []
        for layer in range(spec.layers):
            d = in_dim if layer == 0 else h
            lw = {}
            for gate in ("r", "z", "n"):
                lw["w" + gate] = _uniform(rng, (d, h), d)
                lw["u" + gate] = _uniform(rng, (h, h), h)
                lw["b" + gate] = np.zeros(h)
            self.weights.append(lw)
        self.grads = [{k: np.zeros_like(v) for k, v in lw.items()} for lw in self.weights]
        self._cache = None

    def _step_layer(self, layer: int, x: np.ndarray, h: np.ndarray):
        lw = self.weights[layer]
        r = _sigmoid(x @ lw["wr"] + h @ lw["ur"] + lw["br"])
        z = _sigmoid(x @ lw["wz"] + h @ lw["uz"] + lw["bz"])
        n = np.tanh(x @ lw["wn"] + (r * h) @ lw["un"] + lw["bn"])
        h_new = z * h + (1.0 - z) * n
        return r, z, n, h_new

    def step(self, x: np.ndarray, h: np.ndarray) -> np.ndarray:
        """One ungated step: (B, D) input, (L, B, H) state -> new state."""
        out = np.empty_like(h)
        inp = x
        for layer in range(self.spec.layers):
            _, _, _, h_new = self._step_layer(layer, inp, h[layer])
            out[layer] = h_new
            inp = h_new
        return out

    def init_state(self, batch: int) -> np.ndarray:
        return np.zeros((self.spec.layers, batch, self.spec.hidden_dim))

    def forward(self, x_seq: np.ndarray, active: np.ndarray | None = None) -> np.ndarray:
        w_steps, batch, d = x_seq.shape
        if d != self.in_dim:
            raise ShapeError(f"GRU input dim {d}, expected {self.in_dim}")
        if active is None:
            active = np.ones((w_steps, batch), dtype=bool)
        mask = active.astype(np.float64)[..., None]  # (W, B, 1)
        h = self.init_state(batch)
        steps = []
        for t in range(w_steps):
            inp = x_seq[t]
            layer_caches = []
            h_next = np.empty_like(h)
            for layer in range(self.spec.layers):
                h_prev = h[layer]
                r, z, n, h_new = self._step_layer(layer, inp, h_prev)
                h_masked = mask[t] * h_new + (1.0 - mask[t]) * h_prev
                layer_caches.append((inp, h_prev, r, z, n))
                h_next[layer] = h_masked
                inp = h_masked
            steps.append(layer_caches)
            h = h_next
        self._cache = (x_seq, mask, steps)
        return h[-1]

    def backward(self, d_h_last: np.ndarray) -> np.ndarray:
        x_seq, mask, steps = self._cache
        w_steps, batch, _ = x_seq.shape
        nl = self.spec.layers
        dh = [np.zeros((batch, self.spec.hidden_dim)) for _ in range(nl)]
        dh[-1] = d_h_last.copy()
        dx_seq = np.zeros_like(x_seq)
        for t in range(w_steps - 1, -1, -1):
            m = mask[t]
            d_from_above = None
            for layer in range(nl - 1, -1, -1):
                x_in, h_prev, r, z, n = steps[t][layer]
                d_total = dh[layer]
                if d_from_above is not None:
                    d_total = d_total + d_from_above
                # masked update: h' = m*step(x, h) + (1-m)*h
                d_step = d_total * m
                d_pass = d_total * (1.0 - m)
                lw = self.weights[layer]
                lg = self.grads[layer]
                dz = d_step * (h_prev - n)
                dn = d_step * (1.0 - z)
                dh_prev = d_step * z
                dn_pre = dn * (1.0 - n * n)
                lg["wn"] += x_in.T @ dn_pre
                lg["bn"] += dn_pre.sum(axis=0)
                drh = dn_pre @ lw["un"].T
                lg["un"] += (r * h_prev).T @ dn_pre
                dr = drh * h_prev
                dh_prev += drh * r
                dz_pre = dz * z * (1.0 - z)
                dr_pre = dr * r * (1.0 - r)
                lg["wz"] += x_in.T @ dz_pre
                lg["uz"] += h_prev.T @ dz_pre
                lg["bz"] += dz_pre.sum(axis=0)
                dh_prev += dz_pre @ lw["uz"].T
                lg["wr"] += x_in.T @ dr_pre
                lg["ur"] += h_prev.T @ dr_pre
                lg["br"] += dr_pre.sum(axis=0)
                dh_prev += dr_pre @ lw["ur"].T
                dx_in = dn_pre @ lw["wn"].T + dz_pre @ lw["wz"].T + dr_pre @ lw["wr"].T
                dh[layer] = dh_prev + d_pass
                if layer == 0:
                    dx_seq[t] = dx_in
                else:
                    d_from_above = dx_in
        return dx_seq

    def params(self):
        out = []
        for layer, (lw, lg) in enumerate(zip(self.weights, self.grads)):
            for key in sorted(lw):
                out.append((f"l{layer}.{key}", lw[key], lg[key]))
        return out
