"""Differentiable pointwise and sequence primitives built on the tape.

Shapes follow the convention ``(..., time, channels)``: every op broadcasts
over arbitrary leading batch dimensions.  The causal convolution left-pads
with zeros so the output keeps the input's sequence length and position
``t`` depends only on inputs at positions ``<= t``.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import erf, expit

from .tensor import Tensor, record, unbroadcast

# Plain Python floats: numpy scalar constants would silently promote
# float32 activations to float64 under the NEP 50 rules.
_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)

#: Additive mask value; exp(x - max) underflows to exactly 0 for such scores.
MASKED_SCORE = -1e9


def relu(a: Tensor) -> Tensor:
    out = Tensor(np.maximum(a.data, 0))
    return record(out, [(a, lambda g: g * (a.data > 0))])


def absolute(a: Tensor) -> Tensor:
    out = Tensor(np.abs(a.data))
    return record(out, [(a, lambda g: g * np.sign(a.data))])


def exp(a: Tensor) -> Tensor:
    out_data = np.exp(a.data)
    out = Tensor(out_data)
    return record(out, [(a, lambda g: g * out_data)])


def log(a: Tensor) -> Tensor:
    out = Tensor(np.log(a.data))
    return record(out, [(a, lambda g: g / a.data)])


def tanh(a: Tensor) -> Tensor:
    out_data = np.tanh(a.data)
    out = Tensor(out_data)
    return record(out, [(a, lambda g: g * (1.0 - out_data * out_data))])


def sigmoid(a: Tensor) -> Tensor:
    out_data = expit(a.data)
    out = Tensor(out_data)
    return record(out, [(a, lambda g: g * out_data * (1.0 - out_data))])


def gelu(a: Tensor) -> Tensor:
    """Exact Gaussian-error-linear unit, x * Phi(x)."""
    x = a.data
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    out = Tensor(x * cdf)
    pdf = np.exp(-0.5 * x * x) * _INV_SQRT2PI
    return record(out, [(a, lambda g: g * (cdf + x * pdf))])


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    """Max-shifted softmax along ``axis``."""
    if a.shape[axis] == 0:
        raise ValueError("softmax over an empty axis")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    weights = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(weights)

    def grad_a(g):
        return weights * (g - (g * weights).sum(axis=axis, keepdims=True))

    return record(out, [(a, grad_a)])


def layer_norm(a: Tensor, axis: int = -1, eps: float = 1e-5) -> Tensor:
    """Normalize to zero mean / unit variance along one axis (no affine part)."""
    if eps <= 0:
        raise ValueError("layer_norm eps must be positive")
    if a.shape[axis] == 0:
        raise ValueError("layer_norm over an empty axis")
    mean = a.data.mean(axis=axis, keepdims=True)
    centered = a.data - mean
    var = (centered * centered).mean(axis=axis, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    normed = centered * inv
    out = Tensor(normed)
    n = a.shape[axis]

    def grad_a(g):
        g_mean = g.mean(axis=axis, keepdims=True)
        proj = (g * normed).mean(axis=axis, keepdims=True)
        return inv * (g - g_mean - normed * proj)

    del n
    return record(out, [(a, grad_a)])


def dropout(a: Tensor, p: float, train: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: scales kept units by 1/(1-p) so eval needs no rescale."""
    if not 0.0 <= p < 1.0:
        raise ValueError("dropout probability must satisfy 0 <= p < 1")
    if not train or p == 0.0:
        return a
    if rng is None:
        raise ValueError("dropout in train mode needs an rng")
    keep = (rng.random(a.shape) >= p).astype(a.dtype)
    mask = keep / np.asarray(1.0 - p, dtype=a.dtype)
    out = Tensor(a.data * mask)
    return record(out, [(a, lambda g: g * mask)])


def masked_fill(a: Tensor, mask: np.ndarray, value: float) -> Tensor:
    """Replace entries where ``mask`` is True with ``value`` (constant)."""
    mask = np.asarray(mask, dtype=bool)
    out = Tensor(np.where(mask, np.asarray(value, dtype=a.dtype), a.data))
    return record(out, [(a, lambda g: unbroadcast(np.where(mask, 0.0, g), a.shape))])


def dilated_causal_conv1d(a: Tensor, kernel: Tensor, dilation: int = 1) -> Tensor:
    """Causal 1-D convolution along the second-to-last axis.

    Args:
        a: ``(..., T, C_in)`` input sequence.
        kernel: ``(K, C_in, C_out)`` filter bank; tap ``K-1`` reads the
            current position, tap ``0`` the oldest (``(K-1)*dilation`` back).
        dilation: Gap between kernel taps, in time steps.

    The input is left-padded with ``(K-1)*dilation`` zeros, so the output
    length equals the input length.
    """
    if dilation < 1:
        raise ValueError("dilation must be at least 1")
    if kernel.ndim != 3:
        raise ValueError("kernel must have shape (K, C_in, C_out)")
    if a.ndim < 2:
        raise ValueError("input must have shape (..., T, C_in)")
    k_taps, c_in, _ = kernel.shape
    if a.shape[-1] != c_in:
        raise ValueError(
            f"input channels {a.shape[-1]} do not match kernel C_in {c_in}"
        )
    t_len = a.shape[-2]
    pad = (k_taps - 1) * dilation
    pad_spec = [(0, 0)] * (a.ndim - 2) + [(pad, 0), (0, 0)]
    padded = np.pad(a.data, pad_spec)

    out_data = None
    for k in range(k_taps):
        term = padded[..., k * dilation : k * dilation + t_len, :] @ kernel.data[k]
        out_data = term if out_data is None else out_data + term
    out = Tensor(out_data)

    def grad_input(g):
        buf = np.zeros_like(padded)
        for k in range(k_taps):
            buf[..., k * dilation : k * dilation + t_len, :] += g @ kernel.data[k].T
        return buf[..., pad:, :]

    def grad_kernel(g):
        g2 = g.reshape(-1, g.shape[-1])
        dk = np.empty_like(kernel.data)
        for k in range(k_taps):
            tap = padded[..., k * dilation : k * dilation + t_len, :]
            dk[k] = tap.reshape(-1, c_in).T @ g2
        return dk

    return record(out, [(a, grad_input), (kernel, grad_kernel)])
