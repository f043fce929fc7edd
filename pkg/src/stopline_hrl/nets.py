"""Minimal dense feed-forward networks with exact backprop.

Supports fully-connected layers with ReLU, linear and softmax
activations, squared-error style training via externally supplied output
gradients, importance-weighted SGD steps, and a little-endian binary
checkpoint format that round-trips bit-exactly.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass

import numpy as np


class Activation(enum.IntEnum):
    RELU = 0
    LINEAR = 1
    SOFTMAX = 2


_CKPT_MAGIC = b"HRLN"
_CKPT_VERSION = 1


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class Layer:
    weights: np.ndarray       # (out, in)
    biases: np.ndarray        # (out,)
    activation: Activation

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]


class GradientTape:
    """Per-layer parameter gradients, shapes mirroring the owning net."""

    def __init__(self, d_weights: list[np.ndarray], d_biases: list[np.ndarray]):
        self.d_weights = d_weights
        self.d_biases = d_biases


class DenseNet:
    """A stack of dense layers.  forward() caches intermediates so that a
    following backward() can produce exact gradients; backward() also
    returns the gradient w.r.t. the network input (used to chain the
    attention head through the action-value loss)."""

    def __init__(self, layers: list[Layer]):
        for a, b in zip(layers, layers[1:]):
            if a.out_dim != b.in_dim:
                raise ValueError("layer dimensions do not chain")
        self.layers = layers
        self._inputs: list[np.ndarray] | None = None
        self._outputs: list[np.ndarray] | None = None

    # -- construction -------------------------------------------------

    @classmethod
    def create(cls, sizes: list[int], rng: np.random.Generator,
               output_activation: Activation = Activation.LINEAR) -> "DenseNet":
        """Glorot-uniform initialized net; all hidden layers ReLU."""
        layers = []
        for i, (n_in, n_out) in enumerate(zip(sizes, sizes[1:])):
            limit = np.sqrt(6.0 / (n_in + n_out))
            w = rng.uniform(-limit, limit, size=(n_out, n_in))
            b = np.zeros(n_out)
            act = output_activation if i == len(sizes) - 2 else Activation.RELU
            layers.append(Layer(weights=w, biases=b, activation=act))
        return cls(layers)

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    @property
    def parameter_count(self) -> int:
        return sum(l.weights.size + l.biases.size for l in self.layers)

    # -- forward / backward -------------------------------------------

    def forward(self, x: np.ndarray) -> np.ndarray:
        """x: (in,) or (n, in).  Returns matching (out,) or (n, out)."""
        x = np.asarray(x, dtype=float)
        squeeze = x.ndim == 1
        h = np.atleast_2d(x)
        if h.shape[1] != self.in_dim:
            raise ValueError(f"input dim {h.shape[1]} != {self.in_dim}")
        inputs, outputs = [], []
        for layer in self.layers:
            inputs.append(h)
            z = h @ layer.weights.T + layer.biases
            if layer.activation is Activation.RELU:
                h = np.maximum(z, 0.0)
            elif layer.activation is Activation.SOFTMAX:
                h = _softmax(z)
            else:
                h = z
            outputs.append(h)
        self._inputs, self._outputs = inputs, outputs
        return h[0] if squeeze else h

    def backward(self, output_grad: np.ndarray) -> tuple[GradientTape, np.ndarray]:
        """Gradients of a scalar loss given d(loss)/d(output).

        output_grad: (out,) or (n, out) matching the cached forward.
        Returns (tape summed over the batch, d(loss)/d(input) per sample).
        """
        if self._inputs is None:
            raise RuntimeError("backward() without a cached forward()")
        g = np.atleast_2d(np.asarray(output_grad, dtype=float))
        squeeze = np.asarray(output_grad).ndim == 1

        d_w = [None] * len(self.layers)
        d_b = [None] * len(self.layers)
        for i in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[i]
            out = self._outputs[i]
            if layer.activation is Activation.RELU:
                dz = g * (out > 0.0)
            elif layer.activation is Activation.SOFTMAX:
                dot = (g * out).sum(axis=1, keepdims=True)
                dz = out * (g - dot)
            else:
                dz = g
            d_w[i] = dz.T @ self._inputs[i]
            d_b[i] = dz.sum(axis=0)
            g = dz @ layer.weights
        tape = GradientTape(d_w, d_b)
        return tape, (g[0] if squeeze else g)

    # -- updates ------------------------------------------------------

    def sgd_step(self, tape: GradientTape, lr: float,
                 sample_weight: float = 1.0) -> None:
        scale = lr * sample_weight
        for layer, dw, db in zip(self.layers, tape.d_weights, tape.d_biases):
            if dw.shape != layer.weights.shape or db.shape != layer.biases.shape:
                raise ValueError("gradient shapes do not match the net")
            layer.weights -= scale * dw
            layer.biases -= scale * db

    def copy_weights_from(self, src: "DenseNet") -> None:
        if len(src.layers) != len(self.layers):
            raise ValueError("architecture mismatch")
        for mine, theirs in zip(self.layers, src.layers):
            if (mine.weights.shape != theirs.weights.shape
                    or mine.activation is not theirs.activation):
                raise ValueError("architecture mismatch")
            mine.weights = theirs.weights.copy()
            mine.biases = theirs.biases.copy()

    def clone(self) -> "DenseNet":
        return DenseNet([Layer(l.weights.copy(), l.biases.copy(), l.activation)
                         for l in self.layers])

    # -- checkpointing ------------------------------------------------

    def to_bytes(self) -> bytes:
        parts = [_CKPT_MAGIC, struct.pack("<II", _CKPT_VERSION, len(self.layers))]
        for l in self.layers:
            parts.append(struct.pack("<IIB", l.in_dim, l.out_dim,
                                     int(l.activation)))
            parts.append(np.ascontiguousarray(l.weights, dtype="<f8").tobytes())
            parts.append(np.ascontiguousarray(l.biases, dtype="<f8").tobytes())
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, blob: bytes, offset: int = 0) -> tuple["DenseNet", int]:
        """Parse one checkpoint record; returns (net, next_offset)."""
        if blob[offset:offset + 4] != _CKPT_MAGIC:
            raise ValueError("bad checkpoint magic")
        offset += 4
        version, n_layers = struct.unpack_from("<II", blob, offset)
        offset += 8
        if version != _CKPT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        layers = []
        for _ in range(n_layers):
            n_in, n_out, act = struct.unpack_from("<IIB", blob, offset)
            offset += 9
            w = np.frombuffer(blob, dtype="<f8", count=n_in * n_out,
                              offset=offset).reshape(n_out, n_in).copy()
            offset += 8 * n_in * n_out
            b = np.frombuffer(blob, dtype="<f8", count=n_out,
                              offset=offset).copy()
            offset += 8 * n_out
            layers.append(Layer(weights=w, biases=b,
                                activation=Activation(act)))
        return cls(layers), offset

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "DenseNet":
        with open(path, "rb") as fh:
            net, _ = cls.from_bytes(fh.read())
        return net
