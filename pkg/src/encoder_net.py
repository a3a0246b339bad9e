"""
Encoder network module for the eigenstate learnability lab.
This module implements the point-wise MLP encoder that maps a block of
eigenstates to latent couplings, with an exact hand-written backward pass and
a binary checkpoint format.

Each of the D basis amplitudes forms one point with M features. Every point
is lifted to width w_H, passed through a residual block, mean-pooled over D
and read out to the Theta latent values.
"""

import struct
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Dict, Iterator, List, Tuple

import numpy as np
from loguru import logger


NORM_EPSILON = 1e-5
CHECKPOINT_MAGIC = b"ENC1"


class CheckpointFormatError(ValueError):
    """Raised when an encoder checkpoint cannot be parsed."""


@dataclass
class EncoderParams:
    """
    Trainable weights, stored in checkpoint order.

    Weights use the row-vector convention ``y = x @ w + b``.
    """
    w_in: np.ndarray
    b_in: np.ndarray
    norm1_scale: np.ndarray
    norm1_shift: np.ndarray
    norm2_scale: np.ndarray
    norm2_shift: np.ndarray
    norm3_scale: np.ndarray
    norm3_shift: np.ndarray
    w_r1: np.ndarray
    b_r1: np.ndarray
    w_r2: np.ndarray
    b_r2: np.ndarray
    w_out1: np.ndarray
    b_out1: np.ndarray
    w_out2: np.ndarray
    b_out2: np.ndarray

    @property
    def M(self) -> int:
        return self.w_in.shape[0]

    @property
    def hidden(self) -> int:
        return self.w_in.shape[1]

    @property
    def Theta(self) -> int:
        return self.w_out2.shape[1]

    @property
    def dtype(self) -> np.dtype:
        return self.w_in.dtype

    @classmethod
    def names(cls) -> List[str]:
        return [f.name for f in fields(cls)]

    def items(self) -> Iterator[Tuple[str, np.ndarray]]:
        for name in self.names():
            yield name, getattr(self, name)

    def zeros_like(self) -> "EncoderParams":
        return EncoderParams(**{name: np.zeros_like(value) for name, value in self.items()})

    def copy(self) -> "EncoderParams":
        return EncoderParams(**{name: value.copy() for name, value in self.items()})

    def astype(self, dtype) -> "EncoderParams":
        return EncoderParams(**{name: value.astype(dtype) for name, value in self.items()})


def parameter_shapes(M: int, hidden: int, Theta: int) -> Dict[str, Tuple[int, ...]]:
    """Shapes of every EncoderParams field for the given dimensions."""
    w = hidden
    return {
        "w_in": (M, w), "b_in": (w,),
        "norm1_scale": (w,), "norm1_shift": (w,),
        "norm2_scale": (w,), "norm2_shift": (w,),
        "norm3_scale": (w,), "norm3_shift": (w,),
        "w_r1": (w, w), "b_r1": (w,),
        "w_r2": (w, w), "b_r2": (w,),
        "w_out1": (w, w), "b_out1": (w,),
        "w_out2": (w, Theta), "b_out2": (Theta,),
    }


def init_params(M: int, hidden: int, Theta: int, seed: int, dtype=np.float32) -> EncoderParams:
    """
    Initialize the encoder.

    Weights are uniform in +-sqrt(6 / (fan_in + fan_out)), biases and
    normalization shifts zero, normalization scales one.

    Args:
        M: Number of input states
        hidden: Hidden width w_H
        Theta: Latent dimension
        seed: Random seed
        dtype: Parameter dtype (float32 for training, float64 for checks)

    Returns:
        EncoderParams: Initialized parameters
    """
    if min(M, hidden, Theta) < 1:
        raise ValueError(f"Encoder dimensions must be >= 1, got M={M}, w_H={hidden}, Theta={Theta}")
    rng = np.random.default_rng(seed)
    values = {}
    for name, shape in parameter_shapes(M, hidden, Theta).items():
        if name.startswith("w_"):
            limit = np.sqrt(6.0 / (shape[0] + shape[1]))
            values[name] = rng.uniform(-limit, limit, size=shape).astype(dtype)
        elif name.endswith("_scale"):
            values[name] = np.ones(shape, dtype=dtype)
        else:
            values[name] = np.zeros(shape, dtype=dtype)
    return EncoderParams(**values)


def num_parameters(params: EncoderParams) -> int:
    """Total number of trainable scalars."""
    return int(sum(value.size for _, value in params.items()))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return np.exp(-np.logaddexp(0.0, -x)).astype(x.dtype, copy=False)


def _silu(x: np.ndarray) -> np.ndarray:
    return x * _sigmoid(x)


def _silu_grad(x: np.ndarray) -> np.ndarray:
    s = _sigmoid(x)
    return s * (1.0 + x * (1.0 - s))


def _norm_forward(z: np.ndarray, scale: np.ndarray, shift: np.ndarray):
    mean = z.mean(axis=1, keepdims=True)
    var = z.var(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + NORM_EPSILON)
    xhat = (z - mean) * inv
    return xhat * scale + shift, (xhat, inv)


def _norm_backward(da: np.ndarray, scale: np.ndarray, cache):
    xhat, inv = cache
    n = xhat.shape[1]
    d_scale = (da * xhat).sum(axis=0)
    d_shift = da.sum(axis=0)
    dxhat = da * scale
    dz = (inv / n) * (n * dxhat - dxhat.sum(axis=1, keepdims=True)
                      - xhat * (dxhat * xhat).sum(axis=1, keepdims=True))
    return dz, d_scale, d_shift


@dataclass
class ForwardCache:
    """Intermediates of one forward pass over B blocks of D points."""
    batch: int
    points: int
    squeeze: bool
    x: np.ndarray
    norm1: tuple
    a1: np.ndarray
    h: np.ndarray
    norm2: tuple
    a2: np.ndarray
    u2: np.ndarray
    norm3: tuple
    r: np.ndarray
    g: np.ndarray
    z4: np.ndarray
    u4: np.ndarray


def forward(params: EncoderParams, psi: np.ndarray) -> Tuple[np.ndarray, ForwardCache]:
    """
    Encode one block (D x M) or a batch of blocks (B x D x M).

    Args:
        params: Encoder parameters
        psi: Eigenstate block(s); rows are basis points, columns states

    Returns:
        Tuple[np.ndarray, ForwardCache]: theta_tilde of shape (Theta,) or
        (B, Theta), and the cache for backward
    """
    psi = np.asarray(psi)
    squeeze = psi.ndim == 2
    if squeeze:
        psi = psi[None]
    if psi.ndim != 3 or psi.shape[2] != params.M:
        raise ValueError(f"Expected blocks with M={params.M} columns, got shape {psi.shape}")
    B, D, M = psi.shape
    x = psi.reshape(B * D, M).astype(params.dtype, copy=False)

    a1, norm1 = _norm_forward(x @ params.w_in + params.b_in, params.norm1_scale, params.norm1_shift)
    h = _silu(a1)
    a2, norm2 = _norm_forward(h @ params.w_r1 + params.b_r1, params.norm2_scale, params.norm2_shift)
    u2 = _silu(a2)
    a3, norm3 = _norm_forward(u2 @ params.w_r2 + params.b_r2, params.norm3_scale, params.norm3_shift)
    r = h + a3
    h2 = _silu(r)

    g = h2.reshape(B, D, params.hidden).mean(axis=1)
    z4 = g @ params.w_out1 + params.b_out1
    u4 = _silu(z4)
    theta = u4 @ params.w_out2 + params.b_out2

    cache = ForwardCache(batch=B, points=D, squeeze=squeeze, x=x, norm1=norm1, a1=a1, h=h,
                         norm2=norm2, a2=a2, u2=u2, norm3=norm3, r=r, g=g, z4=z4, u4=u4)
    return (theta[0] if squeeze else theta), cache


def backward(params: EncoderParams, cache: ForwardCache, d_theta_tilde: np.ndarray) -> EncoderParams:
    """
    Gradient of sum(d_theta_tilde * theta_tilde) with respect to every parameter.

    Batch gradients are summed over the blocks of the batch.

    Args:
        params: Parameters used in the matching forward pass
        cache: Cache returned by that forward pass
        d_theta_tilde: Seed vector, shaped like the forward output

    Returns:
        EncoderParams: Gradients with the same structure as params
    """
    d_theta = np.asarray(d_theta_tilde, dtype=params.dtype)
    if cache.squeeze:
        d_theta = d_theta.reshape(1, -1)
    if d_theta.shape != (cache.batch, params.Theta) or cache.x.shape[1] != params.M:
        raise ValueError(f"Stale cache: expected seed of shape {(cache.batch, params.Theta)}, got {d_theta.shape}")
    B, D, w = cache.batch, cache.points, params.hidden
    grads = {}

    grads["w_out2"] = cache.u4.T @ d_theta
    grads["b_out2"] = d_theta.sum(axis=0)
    dz4 = (d_theta @ params.w_out2.T) * _silu_grad(cache.z4)
    grads["w_out1"] = cache.g.T @ dz4
    grads["b_out1"] = dz4.sum(axis=0)
    dg = dz4 @ params.w_out1.T

    # mean pooling spreads dg evenly over the D points of each block
    dh2 = np.repeat(dg / D, D, axis=0)
    dr = dh2 * _silu_grad(cache.r)

    dz3, grads["norm3_scale"], grads["norm3_shift"] = _norm_backward(dr, params.norm3_scale, cache.norm3)
    grads["w_r2"] = cache.u2.T @ dz3
    grads["b_r2"] = dz3.sum(axis=0)
    da2 = (dz3 @ params.w_r2.T) * _silu_grad(cache.a2)
    dz2, grads["norm2_scale"], grads["norm2_shift"] = _norm_backward(da2, params.norm2_scale, cache.norm2)
    grads["w_r1"] = cache.h.T @ dz2
    grads["b_r1"] = dz2.sum(axis=0)

    dh = dr + dz2 @ params.w_r1.T
    da1 = dh * _silu_grad(cache.a1)
    dz1, grads["norm1_scale"], grads["norm1_shift"] = _norm_backward(da1, params.norm1_scale, cache.norm1)
    grads["w_in"] = cache.x.T @ dz1
    grads["b_in"] = dz1.sum(axis=0)

    return EncoderParams(**{name: grads[name].astype(params.dtype, copy=False) for name in EncoderParams.names()})


def predict(params: EncoderParams, psi: np.ndarray, chunk: int = 256) -> np.ndarray:
    """Forward pass over a stack of blocks in chunks, without keeping caches."""
    outputs = [forward(params, psi[start:start + chunk])[0] for start in range(0, psi.shape[0], chunk)]
    return np.concatenate(outputs, axis=0) if outputs else np.zeros((0, params.Theta), dtype=params.dtype)


def save_checkpoint(params: EncoderParams, path: str):
    """
    Write parameters in the ENC1 format.

    Layout: magic, (M, w_H, Theta) as little-endian int64, then every field
    flattened row-major as little-endian float32 in field order.

    Args:
        params: Parameters to save
        path: Output file
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'wb') as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<3q", params.M, params.hidden, params.Theta))
        for _, value in params.items():
            f.write(np.ascontiguousarray(value, dtype="<f4").tobytes())
    logger.info(f"Saved encoder checkpoint to {path}")


def load_checkpoint(path: str) -> EncoderParams:
    """
    Read parameters written by save_checkpoint.

    Args:
        path: Checkpoint file

    Returns:
        EncoderParams: float32 parameters
    """
    with open(path, 'rb') as f:
        data = f.read()
    if data[:4] != CHECKPOINT_MAGIC or len(data) < 28:
        raise CheckpointFormatError(f"{path} is not an ENC1 checkpoint")
    M, hidden, Theta = struct.unpack_from("<3q", data, 4)
    offset = 28
    values = {}
    for name, shape in parameter_shapes(M, hidden, Theta).items():
        count = int(np.prod(shape))
        end = offset + 4 * count
        if end > len(data):
            raise CheckpointFormatError(f"{path} is truncated at field {name}")
        values[name] = np.frombuffer(data[offset:end], dtype="<f4").reshape(shape).astype(np.float32)
        offset = end
    if offset != len(data):
        raise CheckpointFormatError(f"{path} has {len(data) - offset} trailing bytes")
    return EncoderParams(**values)
