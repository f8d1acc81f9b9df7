"""Parameter containers shared by the encoders and the decoder."""

from __future__ import annotations

from collections import OrderedDict

import numpy as np

from . import tensor as T
from .tensor import SeededRng, Tensor


class Module:
    """Anything holding named trainable tensors.

    Subclasses register tensors in ``self._params`` and child modules in
    ``self._children``; :meth:`parameters` flattens both with dotted names.
    """

    def __init__(self):
        self._params: "OrderedDict[str, Tensor]" = OrderedDict()
        self._children: "OrderedDict[str, Module]" = OrderedDict()

    def add_param(self, name: str, data: np.ndarray) -> Tensor:
        t = Tensor(data, requires_grad=True, name=name)
        self._params[name] = t
        return t

    def add_child(self, name: str, mod: "Module") -> "Module":
        self._children[name] = mod
        return mod

    def parameters(self, prefix: str = "") -> "OrderedDict[str, Tensor]":
        out = OrderedDict()
        for k, v in self._params.items():
            out[prefix + k] = v
        for k, m in self._children.items():
            out.update(m.parameters(prefix + k + "."))
        return out


def gaussian_init(rng: SeededRng, out_dim: int, in_dim: int, dtype=np.float64) -> np.ndarray:
    """Weights ~ N(0, 1/fan_in)."""
    return rng.normal((out_dim, in_dim), std=1.0 / np.sqrt(in_dim), dtype=dtype)


class Affine(Module):
    """Fully-connected layer, optionally followed by ReLU."""

    def __init__(self, rng: SeededRng, in_dim: int, out_dim: int, activation: str | None = "relu",
                 dtype=np.float64):
        super().__init__()
        self.in_dim, self.out_dim = in_dim, out_dim
        self.activation = activation
        self.weight = self.add_param("weight", gaussian_init(rng, out_dim, in_dim, dtype))
        self.bias = self.add_param("bias", np.zeros(out_dim, dtype=dtype))

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape != (self.in_dim,):
            raise T.DimensionError(f"affine expects ({self.in_dim},), got {x.shape}")
        y = T.matmul(self.weight, x) + self.bias
        return T.relu(y) if self.activation == "relu" else y


class LSTMCell(Module):
    """Standard LSTM cell with gate order (input, forget, candidate, output).

    One stacked weight acts on ``concat(x, h)``. Forget-gate bias starts at 1.
    """

    def __init__(self, rng: SeededRng, in_dim: int, hidden: int, dtype=np.float64):
        super().__init__()
        self.in_dim, self.hidden = in_dim, hidden
        self.weight = self.add_param("weight", gaussian_init(rng, 4 * hidden, in_dim + hidden, dtype))
        bias = np.zeros(4 * hidden, dtype=dtype)
        bias[hidden:2 * hidden] = 1.0
        self.bias = self.add_param("bias", bias)

    def __call__(self, x: Tensor, h: Tensor, c: Tensor) -> tuple[Tensor, Tensor]:
        if x.shape != (self.in_dim,):
            raise T.DimensionError(f"lstm expects input ({self.in_dim},), got {x.shape}")
        gates = T.matmul(self.weight, T.concat([x, h])) + self.bias
        n = self.hidden
        i = T.sigmoid(gates[0:n])
        f = T.sigmoid(gates[n:2 * n])
        g = T.tanh(gates[2 * n:3 * n])
        o = T.sigmoid(gates[3 * n:4 * n])
        c_new = f * c + i * g
        h_new = o * T.tanh(c_new)
        return h_new, c_new
