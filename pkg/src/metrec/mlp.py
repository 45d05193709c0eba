"""Dense MLP tower with exact backpropagation.

Vectors and matrices are plain float64 numpy arrays. The per-example functions
here (``mlp_forward``/``mlp_backward``) are the reference path; the trainer uses
batched equivalents that are tested against them.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable

import numpy as np


class DimensionError(ValueError):
    """Raised when two operands have incompatible dimensions."""

    def __init__(self, what: str, expected: int, got: int):
        self.expected = expected
        self.got = got
        super().__init__(f"{what}: expected dim {expected}, got {got}")


class NonFiniteError(FloatingPointError):
    pass


class Activation(str, enum.Enum):
    RELU = "relu"
    TANH = "tanh"
    IDENTITY = "identity"


@dataclass
class MlpParams:
    """Layers as ``(weight, bias)`` pairs; weight has shape ``(out, in)``.

    Hidden layers use ``activation``; the last layer is always linear.
    """

    layers: list[tuple[np.ndarray, np.ndarray]]
    activation: Activation = Activation.RELU

    def __post_init__(self):
        self.activation = Activation(self.activation)
        if not self.layers:
            raise ValueError("an MLP needs at least one layer")
        prev = None
        for i, (w, b) in enumerate(self.layers):
            if w.ndim != 2 or b.ndim != 1:
                raise ValueError(f"layer {i}: weight must be 2-d and bias 1-d")
            if b.shape[0] != w.shape[0]:
                raise DimensionError(f"layer {i} bias", w.shape[0], b.shape[0])
            if prev is not None and w.shape[1] != prev:
                raise DimensionError(f"layer {i} input", prev, w.shape[1])
            prev = w.shape[0]

    @property
    def in_dim(self) -> int:
        return self.layers[0][0].shape[1]

    @property
    def out_dim(self) -> int:
        return self.layers[-1][0].shape[0]

    @property
    def dims(self) -> list[int]:
        return [self.in_dim] + [w.shape[0] for w, _ in self.layers]

    def arrays(self) -> list[np.ndarray]:
        """Flat list ``[W0, b0, W1, b1, ...]`` of the underlying arrays (not copies)."""
        return [a for layer in self.layers for a in layer]

    def copy(self) -> MlpParams:
        return MlpParams([(w.copy(), b.copy()) for w, b in self.layers], self.activation)

    def zeros_like(self) -> MlpParams:
        return MlpParams(
            [(np.zeros_like(w), np.zeros_like(b)) for w, b in self.layers], self.activation
        )


@dataclass
class ForwardCache:
    # inputs[i] feeds layer i; pre[i] is that layer's pre-activation
    inputs: list[np.ndarray] = field(default_factory=list)
    pre: list[np.ndarray] = field(default_factory=list)


def _check_finite(arr: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"non-finite values in {what}")
    return arr


def affine_forward(w: np.ndarray, b: np.ndarray, x: np.ndarray) -> np.ndarray:
    """``W @ x + b``."""
    if w.shape[1] != x.shape[0]:
        raise DimensionError("affine input (W.cols vs x.dim)", w.shape[1], x.shape[0])
    if b.shape[0] != w.shape[0]:
        raise DimensionError("affine bias (W.rows vs b.dim)", w.shape[0], b.shape[0])
    with np.errstate(invalid="ignore", over="ignore"):
        y = w @ x + b
    return _check_finite(y, "affine output")


def activation_forward(kind: Activation | str, z: np.ndarray) -> np.ndarray:
    kind = Activation(kind)
    if kind is Activation.RELU:
        return np.maximum(z, 0.0)
    if kind is Activation.TANH:
        return np.tanh(z)
    return z.copy()


def activation_backward(kind: Activation | str, z: np.ndarray, grad: np.ndarray) -> np.ndarray:
    """Multiply ``grad`` by the activation derivative at pre-activation ``z``."""
    kind = Activation(kind)
    if kind is Activation.RELU:
        # subgradient at 0 is 0
        return grad * (z > 0.0)
    if kind is Activation.TANH:
        t = np.tanh(z)
        return grad * (1.0 - t * t)
    return grad


def mlp_forward(params: MlpParams, x: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
    if x.shape[0] != params.in_dim:
        raise DimensionError("mlp input", params.in_dim, x.shape[0])
    cache = ForwardCache()
    a = np.asarray(x, dtype=np.float64)
    last = len(params.layers) - 1
    for i, (w, b) in enumerate(params.layers):
        cache.inputs.append(a)
        z = affine_forward(w, b, a)
        cache.pre.append(z)
        a = z if i == last else activation_forward(params.activation, z)
    return a, cache


def mlp_backward(
    params: MlpParams, cache: ForwardCache, grad_h: np.ndarray
) -> tuple[MlpParams, np.ndarray]:
    """Gradients of ``<grad_h, mlp_forward(params, x)>`` w.r.t. all weights, biases and x."""
    n = len(params.layers)
    if len(cache.pre) != n or len(cache.inputs) != n:
        raise DimensionError("cache depth", n, len(cache.pre))
    if grad_h.shape[0] != params.out_dim:
        raise DimensionError("output gradient", params.out_dim, grad_h.shape[0])
    grads: list[tuple[np.ndarray, np.ndarray]] = [None] * n  # type: ignore[list-item]
    g = np.asarray(grad_h, dtype=np.float64)
    for i in range(n - 1, -1, -1):
        w, _ = params.layers[i]
        if cache.pre[i].shape[0] != w.shape[0] or cache.inputs[i].shape[0] != w.shape[1]:
            raise DimensionError(f"cache layer {i}", w.shape[0], cache.pre[i].shape[0])
        if i != n - 1:
            g = activation_backward(params.activation, cache.pre[i], g)
        grads[i] = (np.outer(g, cache.inputs[i]), g.copy())
        g = w.T @ g
    return MlpParams(grads, params.activation), _check_finite(g, "input gradient")


def glorot_uniform(fan_out: int, fan_in: int, rng: np.random.Generator) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_out, fan_in))


def init_mlp(
    dims: list[int], rng: np.random.Generator, activation: Activation | str = Activation.RELU
) -> MlpParams:
    """Glorot-uniform weights, zero biases. ``dims`` is ``[in, hidden..., out]``."""
    if len(dims) < 2 or any(d < 1 for d in dims):
        raise ValueError(f"invalid layer dims {dims}")
    layers = [
        (glorot_uniform(d_out, d_in, rng), np.zeros(d_out))
        for d_in, d_out in zip(dims[:-1], dims[1:])
    ]
    return MlpParams(layers, activation)


def finite_difference_grad(
    loss_fn: Callable[[MlpParams], float], params: MlpParams, eps: float = 1e-6
) -> MlpParams:
    """Central-difference gradient of ``loss_fn`` at ``params``, one entry at a time.

    ``params`` is perturbed in place and restored; ``loss_fn`` must read it afresh.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    grads = params.zeros_like()
    for arr, garr in zip(params.arrays(), grads.arrays()):
        flat = arr.reshape(-1)
        gflat = garr.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + eps
            up = loss_fn(params)
            flat[j] = orig - eps
            down = loss_fn(params)
            flat[j] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                raise NonFiniteError(f"non-finite loss at perturbed entry {j}")
            gflat[j] = (up - down) / (2.0 * eps)
    return grads
