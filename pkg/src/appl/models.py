"""Feature encoder and prototype calculator network.

Parameter containers hold plain numpy arrays between steps.  ``map`` turns
them into tensors on a tape for a forward/backward pass and back again,
so the same forward functions serve training, evaluation and gradient
checking.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .exceptions import DimensionError


def glorot_uniform(fan_in: int, fan_out: int, rng: np.random.Generator) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


@dataclass
class EncoderParams:
    """MLP layers ``(weight [in x out], bias [out])`` with ReLU in between."""

    weights: list
    biases: list

    @classmethod
    def init(cls, input_dim: int, hidden: tuple, output_dim: int,
             rng: np.random.Generator) -> "EncoderParams":
        dims = [input_dim, *hidden, output_dim]
        weights = [glorot_uniform(i, o, rng) for i, o in zip(dims[:-1], dims[1:])]
        biases = [np.zeros(o) for o in dims[1:]]
        return cls(weights, biases)

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def output_dim(self) -> int:
        return self.weights[-1].shape[1]

    def arrays(self) -> list:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend([w, b])
        return out

    def names(self) -> list[str]:
        out = []
        for i in range(self.n_layers):
            out.extend([f"encoder.{i}.weight", f"encoder.{i}.bias"])
        return out

    @classmethod
    def from_arrays(cls, arrays: list) -> "EncoderParams":
        return cls(list(arrays[0::2]), list(arrays[1::2]))

    def map(self, fn: Callable) -> "EncoderParams":
        return EncoderParams([fn(w) for w in self.weights], [fn(b) for b in self.biases])

    def copy(self) -> "EncoderParams":
        return self.map(lambda a: np.array(a, copy=True))

    @property
    def n_params(self) -> int:
        return int(sum(np.size(_raw(a)) for a in self.arrays()))


@dataclass
class PcnParams:
    """Single linear layer ``[(k_in * D) x D]`` followed by ReLU."""

    weight: object
    bias: object = None
    k_in: int = field(default=1)

    @classmethod
    def init(cls, k_in: int, dim: int, rng: np.random.Generator,
             bias: bool = True) -> "PcnParams":
        weight = glorot_uniform(k_in * dim, dim, rng)
        return cls(weight, np.zeros(dim) if bias else None, k_in)

    @classmethod
    def averaging(cls, k_in: int, dim: int, bias: bool = True) -> "PcnParams":
        """Weights whose output averages the ``k_in`` concatenated copies."""
        weight = np.vstack([np.eye(dim) / k_in] * k_in)
        return cls(weight, np.zeros(dim) if bias else None, k_in)

    @property
    def dim(self) -> int:
        return _raw(self.weight).shape[1]

    def arrays(self) -> list:
        return [self.weight] if self.bias is None else [self.weight, self.bias]

    def names(self) -> list[str]:
        return ["pcn.weight"] if self.bias is None else ["pcn.weight", "pcn.bias"]

    def from_arrays(self, arrays: list) -> "PcnParams":
        bias = arrays[1] if self.bias is not None else None
        return PcnParams(arrays[0], bias, self.k_in)

    def map(self, fn: Callable) -> "PcnParams":
        return PcnParams(fn(self.weight), None if self.bias is None else fn(self.bias), self.k_in)

    def copy(self) -> "PcnParams":
        return self.map(lambda a: np.array(a, copy=True))

    @property
    def n_params(self) -> int:
        return int(sum(np.size(_raw(a)) for a in self.arrays()))


def _raw(a):
    return a.data if isinstance(a, Tensor) else a


def encoder_forward(x, params: EncoderParams) -> Tensor:
    """Embed a batch ``[n x input_dim]`` (or a single vector) with the MLP.

    No activation follows the last layer.
    """
    x = ad.constant(x)
    single = x.ndim == 1
    if single:
        x = ad.reshape(x, (1, x.shape[0]))
    h = x
    last = params.n_layers - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        w_shape = _raw(w).shape
        if h.shape[1] != w_shape[0]:
            raise DimensionError(
                f"encoder layer {i}: input has {h.shape[1]} features, weight expects {w_shape[0]}")
        h = ad.add(ad.matmul(h, w), b)
        if i < last:
            h = ad.relu(h)
    if single:
        h = ad.reshape(h, (h.shape[1],))
    return h


def pcn_forward(concatenated, params: PcnParams) -> Tensor:
    """Map concatenated embeddings ``[k_in * D]`` (or a batch of rows) to prototypes."""
    z = ad.constant(concatenated)
    single = z.ndim == 1
    if single:
        z = ad.reshape(z, (1, z.shape[0]))
    expected = _raw(params.weight).shape[0]
    if z.shape[1] != expected:
        raise DimensionError(
            f"PCN expects input length {expected} (k_in={params.k_in}), got {z.shape[1]}")
    out = ad.matmul(z, params.weight)
    if params.bias is not None:
        out = ad.add(out, params.bias)
    out = ad.relu(out)
    if single:
        out = ad.reshape(out, (out.shape[1],))
    return out
