"""Dense MLP substrate: forward/backward passes, Adam, cosine similarity.

Tensors are plain 2-D numpy arrays. Parameters and activations keep the
dtype they were created with (float32 for training, float64 when checking
gradients); reductions that produce losses or norms accumulate in float64.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import CacheError, DegenerateInputError, ShapeError

ACTIVATIONS = ("relu", "identity")


@dataclass(frozen=True)
class Dense:
    weight: np.ndarray  # in x out
    bias: np.ndarray  # 1 x out
    activation: str = "relu"

    @property
    def in_dim(self) -> int:
        return self.weight.shape[0]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[1]


@dataclass(frozen=True)
class MlpParams:
    layers: tuple[Dense, ...]

    def __post_init__(self):
        if not self.layers:
            raise ShapeError("an MLP needs at least one layer")
        for k, layer in enumerate(self.layers):
            if layer.activation not in ACTIVATIONS:
                raise ShapeError(f"unknown activation {layer.activation!r}", layer=k)
            if layer.weight.ndim != 2 or layer.bias.shape != (1, layer.out_dim):
                raise ShapeError(
                    f"weight {layer.weight.shape} and bias {layer.bias.shape} disagree", layer=k
                )
            if k and self.layers[k - 1].out_dim != layer.in_dim:
                raise ShapeError(
                    f"expects {layer.in_dim} inputs but previous layer emits "
                    f"{self.layers[k - 1].out_dim}",
                    layer=k,
                )
        if self.layers[-1].activation != "identity":
            raise ShapeError("final layer must use the identity activation", layer=len(self.layers) - 1)

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    @property
    def dims(self) -> tuple[int, ...]:
        return (self.in_dim,) + tuple(layer.out_dim for layer in self.layers)

    @property
    def dtype(self) -> np.dtype:
        return self.layers[0].weight.dtype

    def arrays(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out.extend((layer.weight, layer.bias))
        return out

    def with_arrays(self, arrays: Sequence[np.ndarray]) -> "MlpParams":
        if len(arrays) != 2 * len(self.layers):
            raise ShapeError(f"expected {2 * len(self.layers)} arrays, got {len(arrays)}")
        layers = []
        for k, layer in enumerate(self.layers):
            w, b = arrays[2 * k], arrays[2 * k + 1]
            if w.shape != layer.weight.shape or b.shape != layer.bias.shape:
                raise ShapeError("replacement array shapes differ", layer=k)
            layers.append(Dense(w, b, layer.activation))
        return MlpParams(tuple(layers))

    def copy(self) -> "MlpParams":
        return self.with_arrays([a.copy() for a in self.arrays()])

    def astype(self, dtype) -> "MlpParams":
        return self.with_arrays([a.astype(dtype) for a in self.arrays()])

    def zeros_like(self) -> "MlpParams":
        return self.with_arrays([np.zeros_like(a) for a in self.arrays()])

    def congruent(self, other: "MlpParams") -> bool:
        return len(self.layers) == len(other.layers) and all(
            a.weight.shape == b.weight.shape and a.activation == b.activation
            for a, b in zip(self.layers, other.layers)
        )


def init_mlp(dims: Sequence[int], rng: np.random.Generator, dtype=np.float32) -> MlpParams:
    """Glorot-uniform weights, zero biases, relu everywhere except the output."""
    if len(dims) < 2:
        raise ShapeError("need at least input and output dimensions")
    layers = []
    for k, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-limit, limit, size=(fan_in, fan_out)).astype(dtype)
        b = np.zeros((1, fan_out), dtype=dtype)
        act = "identity" if k == len(dims) - 2 else "relu"
        layers.append(Dense(w, b, act))
    return MlpParams(tuple(layers))


@dataclass(frozen=True)
class MlpCache:
    params: MlpParams
    inputs: tuple[np.ndarray, ...]  # input to each layer
    preacts: tuple[np.ndarray, ...]  # x @ W + b for each layer


def mlp_forward(params: MlpParams, batch: np.ndarray) -> tuple[np.ndarray, MlpCache]:
    if batch.ndim != 2 or batch.shape[1] != params.in_dim:
        raise ShapeError(f"batch shape {batch.shape} does not match input width {params.in_dim}", layer=0)
    x = batch
    inputs, preacts = [], []
    for layer in params.layers:
        inputs.append(x)
        z = x @ layer.weight + layer.bias
        preacts.append(z)
        x = np.maximum(z, 0) if layer.activation == "relu" else z
    return x, MlpCache(params, tuple(inputs), tuple(preacts))


def mlp_backward(
    params: MlpParams, cache: MlpCache, grad_output: np.ndarray, need_input_grad: bool = True
) -> tuple[np.ndarray | None, MlpParams]:
    """Backpropagate ``grad_output`` through the network recorded in ``cache``.

    Returns the gradient with respect to the network input (``None`` when
    ``need_input_grad`` is false) and parameter gradients packed as an
    ``MlpParams`` congruent with ``params``.
    """
    if cache.params is not params:
        raise CacheError("cache was produced by a different parameter set")
    if grad_output.shape != cache.preacts[-1].shape:
        raise CacheError(f"grad_output shape {grad_output.shape} != output shape {cache.preacts[-1].shape}")
    grads: list[Dense] = []
    g = grad_output
    n = len(params.layers)
    grad_input = None
    for k in range(n - 1, -1, -1):
        layer = params.layers[k]
        if layer.activation == "relu":
            # derivative at exactly 0 is 0
            g = g * (cache.preacts[k] > 0)
        gw = cache.inputs[k].T @ g
        gb = g.sum(axis=0, keepdims=True)
        grads.append(Dense(gw.astype(layer.weight.dtype, copy=False), gb.astype(layer.bias.dtype, copy=False), layer.activation))
        if k > 0 or need_input_grad:
            g = g @ layer.weight.T
    if need_input_grad:
        grad_input = g
    return grad_input, MlpParams(tuple(reversed(grads)))


@dataclass(frozen=True)
class AdamState:
    step: int
    first_moment: tuple[np.ndarray, ...]
    second_moment: tuple[np.ndarray, ...]
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8


def adam_init(params: MlpParams, beta1: float = 0.9, beta2: float = 0.999, epsilon: float = 1e-8) -> AdamState:
    zeros = tuple(np.zeros_like(a) for a in params.arrays())
    return AdamState(0, zeros, tuple(z.copy() for z in zeros), beta1, beta2, epsilon)


def adam_step(
    state: AdamState, params: MlpParams, grads: MlpParams, learning_rate: float
) -> tuple[MlpParams, AdamState]:
    if learning_rate <= 0:
        raise ShapeError("learning rate must be positive")
    if not params.congruent(grads) or len(state.first_moment) != len(params.arrays()):
        raise ShapeError("parameters, gradients and optimizer moments are not congruent")
    b1, b2, eps = state.beta1, state.beta2, state.epsilon
    t = state.step + 1
    corr1 = 1.0 - b1**t
    corr2 = 1.0 - b2**t
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(params.arrays(), grads.arrays(), state.first_moment, state.second_moment):
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        update = learning_rate * (m / corr1) / (np.sqrt(v / corr2) + eps)
        new_p.append((p - update).astype(p.dtype, copy=False))
        new_m.append(m.astype(p.dtype, copy=False))
        new_v.append(v.astype(p.dtype, copy=False))
    return params.with_arrays(new_p), AdamState(t, tuple(new_m), tuple(new_v), b1, b2, eps)


@dataclass
class Trainable:
    """An MLP paired with its optimizer state; the unit every client trains."""

    params: MlpParams
    opt: AdamState = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.opt is None:
            self.opt = adam_init(self.params)

    def step(self, grads: MlpParams, learning_rate: float) -> None:
        self.params, self.opt = adam_step(self.opt, self.params, grads, learning_rate)


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ShapeError(f"vectors differ in length: {a.size} vs {b.size}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise DegenerateInputError("cosine similarity of a zero-norm vector is undefined")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


NORM_FLOOR = 1e-12


def normalize_rows(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise L2 normalization with an epsilon floor; returns (unit rows, norms)."""
    x = np.asarray(x, dtype=np.float64)
    norms = np.maximum(np.sqrt(np.einsum("ij,ij->i", x, x)), NORM_FLOOR)[:, None]
    return x / norms, norms


def normalize_rows_backward(unit: np.ndarray, norms: np.ndarray, grad_unit: np.ndarray) -> np.ndarray:
    radial = np.einsum("ij,ij->i", unit, grad_unit)[:, None]
    return (grad_unit - unit * radial) / norms
