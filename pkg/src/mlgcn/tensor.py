"""Dense numeric kernels with hand-rolled forward and backward passes.

Feature matrices are plain ``(N, C)`` numpy arrays. The default compute
precision is float32; gradient-check tests run the same code paths at
float64. Every forward kernel validates that its output is finite.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    CheckpointMismatch,
    MalformedFile,
    MissingFile,
    MissingForwardCache,
    NonFiniteValues,
    ShapeMismatch,
)

CHECKPOINT_MAGIC = b"MLGW"
CHECKPOINT_VERSION = 1


def _check_finite(arr: np.ndarray, what: str) -> None:
    if not np.isfinite(arr).all():
        raise NonFiniteValues(f"{what} produced NaN/Inf")


class DenseLayer:
    """A shared MLP layer: the same ``W, b`` applied to every point row.

    ``relu=False`` marks head output layers that emit raw logits.
    Weights use Kaiming-uniform fan-in initialization, biases start at zero.
    """

    def __init__(self, in_channels: int, out_channels: int, relu: bool = True,
                 rng: np.random.Generator | None = None, dtype=np.float32):
        if in_channels < 1 or out_channels < 1:
            raise ValueError("channel counts must be >= 1")
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.relu = relu
        if rng is None:
            self.weight = np.zeros((in_channels, out_channels), dtype=dtype)
        else:
            bound = np.sqrt(6.0 / in_channels)
            self.weight = rng.uniform(-bound, bound, (in_channels, out_channels)).astype(dtype)
        self.bias = np.zeros(out_channels, dtype=dtype)
        self.grad_weight = np.zeros_like(self.weight)
        self.grad_bias = np.zeros_like(self.bias)
        self._mask: np.ndarray | None = None
        self._has_cache = False

    def zero_grad(self) -> None:
        self.grad_weight.fill(0.0)
        self.grad_bias.fill(0.0)

    def parameter_count(self) -> int:
        return self.weight.size + self.bias.size


def dense_apply(layer: DenseLayer, x: np.ndarray):
    """Pure forward map; returns (output, relu mask). Does not touch layer state."""
    x = np.asarray(x)
    if x.ndim != 2 or x.shape[1] != layer.in_channels:
        raise ShapeMismatch(f"input {x.shape} incompatible with {layer.in_channels} channels")
    pre = x @ layer.weight + layer.bias
    if layer.relu:
        mask = pre > 0
        out = np.where(mask, pre, 0.0)
    else:
        mask = None
        out = pre
    _check_finite(out, "dense layer")
    return out, mask


def dense_grad(layer: DenseLayer, x: np.ndarray, mask: np.ndarray | None,
               grad_out: np.ndarray) -> np.ndarray:
    """Accumulate parameter gradients and return the gradient w.r.t. ``x``."""
    grad_out = np.asarray(grad_out)
    if grad_out.shape != (x.shape[0], layer.out_channels):
        raise ShapeMismatch(f"grad {grad_out.shape} incompatible with output shape")
    grad_pre = grad_out * mask if layer.relu else grad_out
    layer.grad_weight += x.T @ grad_pre
    layer.grad_bias += grad_pre.sum(axis=0)
    return grad_pre @ layer.weight.T


def dense_forward(layer: DenseLayer, x: np.ndarray) -> np.ndarray:
    """Forward pass that caches the activation mask on the layer for backward."""
    out, mask = dense_apply(layer, x)
    layer._mask = mask
    layer._has_cache = True
    return out


def dense_backward(layer: DenseLayer, x: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    """Backward pass matching the last :func:`dense_forward` on this layer."""
    if not layer._has_cache:
        raise MissingForwardCache("dense_backward before dense_forward")
    if layer.relu and (layer._mask is None or layer._mask.shape[0] != np.asarray(x).shape[0]):
        raise MissingForwardCache("cached activation mask does not match input")
    return dense_grad(layer, np.asarray(x), layer._mask, grad_out)


@dataclass
class PoolIndexCache:
    """Argmax indices recorded by a max-pool forward, for exact backward routing."""

    argmax: np.ndarray
    input_shape: tuple


def neighborhood_maxpool(gathered: np.ndarray):
    """Per-channel max over the neighbor axis of an ``(N, k, C)`` tensor.

    Ties resolve to the smallest neighbor position. Returns the pooled
    ``(N, C)`` matrix and the index cache for the backward pass.
    """
    gathered = np.asarray(gathered)
    if gathered.ndim != 3:
        raise ShapeMismatch(f"expected (N, k, C), got {gathered.shape}")
    argmax = np.argmax(gathered, axis=1)
    out = np.take_along_axis(gathered, argmax[:, None, :], axis=1)[:, 0, :]
    return out, PoolIndexCache(argmax, gathered.shape)


def neighborhood_maxpool_backward(cache: PoolIndexCache, grad_out: np.ndarray) -> np.ndarray:
    """Route gradients to the recorded argmax positions, zero elsewhere."""
    if cache is None or len(cache.input_shape) != 3:
        raise MissingForwardCache("no neighborhood max-pool cache")
    n, _, c = cache.input_shape
    grad_out = np.asarray(grad_out)
    if grad_out.shape != (n, c):
        raise ShapeMismatch(f"grad {grad_out.shape} incompatible with pool of {cache.input_shape}")
    grad = np.zeros(cache.input_shape, dtype=grad_out.dtype)
    rows = np.arange(n)[:, None]
    cols = np.arange(c)[None, :]
    grad[rows, cache.argmax, cols] = grad_out
    return grad


def global_maxpool(x: np.ndarray):
    """Per-channel max over all rows; returns a ``(1, C)`` vector plus cache."""
    x = np.asarray(x)
    if x.ndim != 2 or x.shape[0] < 1:
        raise ShapeMismatch(f"expected non-empty (N, C), got {x.shape}")
    argmax = np.argmax(x, axis=0)
    out = x[argmax, np.arange(x.shape[1])][None, :]
    return out, PoolIndexCache(argmax, x.shape)


def global_maxpool_backward(cache: PoolIndexCache, grad_out: np.ndarray) -> np.ndarray:
    if cache is None or len(cache.input_shape) != 2:
        raise MissingForwardCache("no global max-pool cache")
    n, c = cache.input_shape
    grad_out = np.asarray(grad_out).reshape(1, c)
    grad = np.zeros(cache.input_shape, dtype=grad_out.dtype)
    np.add.at(grad, (cache.argmax, np.arange(c)), grad_out[0])
    return grad


def concat_channels(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Stack feature channels side by side, ``a`` first."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape[0] != b.shape[0]:
        raise ShapeMismatch(f"row counts differ: {a.shape[0]} vs {b.shape[0]}")
    return np.concatenate([a, b], axis=1)


def split_channels(x: np.ndarray, c_first: int):
    """Inverse of :func:`concat_channels`: split after the first ``c_first`` channels."""
    x = np.asarray(x)
    if not 0 <= c_first <= x.shape[1]:
        raise ShapeMismatch(f"cannot split {x.shape[1]} channels at {c_first}")
    return x[:, :c_first], x[:, c_first:]


def save_checkpoint(path, arrays: dict[str, np.ndarray]) -> None:
    """Write named parameter arrays as little-endian binary plus a JSON sidecar.

    Layout: magic, version u32, record count u32, then per record:
    name length u32, name bytes, rows u32, cols u32, f32 data.
    Round-trips float32 payloads bit-exactly.
    """
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<I", len(arrays)))
        for name, arr in arrays.items():
            data = np.asarray(arr, dtype=np.float32)
            rows, cols = (1, data.shape[0]) if data.ndim == 1 else data.shape
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<II", rows, cols))
            fh.write(data.astype("<f4").tobytes())
    sidecar = {name: list(np.asarray(arr).shape) for name, arr in arrays.items()}
    with open(str(path) + ".json", "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, indent=2)
        fh.write("\n")


def load_checkpoint(path) -> dict[str, np.ndarray]:
    path = Path(path)
    if not path.is_file():
        raise MissingFile(path)
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise CheckpointMismatch(f"{path}: bad checkpoint magic {blob[:4]!r}")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != CHECKPOINT_VERSION:
        raise CheckpointMismatch(f"{path}: unsupported checkpoint version {version}")
    (count,) = struct.unpack_from("<I", blob, 8)
    offset = 12
    arrays: dict[str, np.ndarray] = {}
    try:
        for _ in range(count):
            (name_len,) = struct.unpack_from("<I", blob, offset)
            offset += 4
            name = blob[offset : offset + name_len].decode("utf-8")
            offset += name_len
            rows, cols = struct.unpack_from("<II", blob, offset)
            offset += 8
            size = rows * cols * 4
            data = np.frombuffer(blob[offset : offset + size], dtype="<f4")
            if data.size != rows * cols:
                raise MalformedFile(path, "truncated checkpoint payload")
            offset += size
            arrays[name] = data.reshape(rows, cols).copy()
    except struct.error:
        raise MalformedFile(path, "truncated checkpoint header") from None
    return arrays
