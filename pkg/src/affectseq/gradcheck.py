"""Finite-difference verification of every autodiff primitive.

Each check builds a scalar loss from a primitive (output contracted with a
fixed random projection), computes the tape gradient, and compares it
against central differences with step 1e-5 in 64-bit arithmetic.  The
reported number is the worst relative error over all inputs of the check,
where relative error of gradient arrays a (analytic) and n (numerical) is

    max|a - n| / max(max|a|, max|n|, 1e-8)

The suite ends with two composites: a full TCN residual block, and the
whole pipeline at toy sizes (window 8, 4 features, width 4, one TCN
block, one encoder layer, one attention head) in eval mode.

Inputs for kinked primitives (relu, absolute) are nudged away from zero
so the difference quotient never straddles the kink.
"""

from __future__ import annotations

from collections import OrderedDict
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .datamodel import TaskKind
from .model import (EncoderSettings, HeadSettings, ModelConfig, PipelineModel,
                    TcnSettings)

GRADCHECK_TOLERANCE = 1e-4
FD_STEP = 1e-5


def numerical_gradient(fn: Callable[..., float], arrays: list[np.ndarray],
                       index: int, h: float = FD_STEP) -> np.ndarray:
    """Central-difference gradient of scalar ``fn`` w.r.t. ``arrays[index]``."""
    work = [np.array(a, dtype=np.float64) for a in arrays]
    flat = work[index].reshape(-1)
    grad = np.zeros_like(flat)
    for i in range(flat.size):
        saved = flat[i]
        flat[i] = saved + h
        up = fn(*work)
        flat[i] = saved - h
        down = fn(*work)
        flat[i] = saved
        grad[i] = (up - down) / (2.0 * h)
    return grad.reshape(work[index].shape)


def relative_error(analytic: np.ndarray, numerical: np.ndarray) -> float:
    analytic = np.asarray(analytic, dtype=np.float64)
    numerical = np.asarray(numerical, dtype=np.float64)
    diff = float(np.max(np.abs(analytic - numerical))) if analytic.size else 0.0
    scale = max(float(np.max(np.abs(analytic), initial=0.0)),
                float(np.max(np.abs(numerical), initial=0.0)), 1e-8)
    return diff / scale


def check_builder(builder: Callable[..., Tensor], arrays: list[np.ndarray]) -> float:
    """Worst relative error of the tape gradient of ``builder`` over its inputs.

    ``builder`` maps leaf tensors to a scalar Tensor and must be a pure
    function of them (internal randomness must be reconstructed per call).
    """
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    leaves = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    ad.clear_tape()
    loss = builder(*leaves)
    ad.backward(loss)
    analytic = [leaf.grad if leaf.grad is not None else np.zeros_like(a)
                for leaf, a in zip(leaves, arrays)]
    ad.clear_tape()

    def scalar_fn(*values):
        with ad.no_grad():
            return builder(*[Tensor(v) for v in values]).item()

    worst = 0.0
    for i in range(len(arrays)):
        numerical = numerical_gradient(scalar_fn, arrays, i)
        worst = max(worst, relative_error(analytic[i], numerical))
    return worst


def _away_from_zero(values: np.ndarray, margin: float = 0.1) -> np.ndarray:
    """Push entries out of (-margin, margin) so kinks stay untouched."""
    return np.where(np.abs(values) < margin, margin + np.abs(values), values)


def _suite(seed: int) -> "OrderedDict[str, Callable[[], float]]":
    rng = np.random.default_rng(seed)
    x34 = rng.standard_normal((3, 4))
    y34 = rng.standard_normal((3, 4))
    x314 = rng.standard_normal((3, 1, 4))
    y4 = rng.standard_normal(4)
    pos34 = np.abs(rng.standard_normal((3, 4))) + 0.5
    a23 = rng.standard_normal((2, 3))
    b34 = rng.standard_normal((3, 4))
    bat_a = rng.standard_normal((2, 3, 4))
    bat_b = rng.standard_normal((2, 4, 5))
    seq = rng.standard_normal((2, 6, 3))
    kern = rng.standard_normal((2, 3, 4)) * 0.5
    x43 = rng.standard_normal((4, 3))
    mask34 = rng.random((3, 4)) < 0.4
    idx = np.array([2, 0, 1, 0])

    r34 = rng.standard_normal((3, 4))
    r334 = rng.standard_normal((3, 3, 4))
    r24 = rng.standard_normal((2, 4))
    r235 = rng.standard_normal((2, 3, 5))
    r43 = rng.standard_normal((4, 3))
    r423 = rng.standard_normal((4, 2, 3))
    r243 = rng.standard_normal((2, 4, 3))
    r264 = rng.standard_normal((2, 6, 4))
    r23 = rng.standard_normal((2, 3))
    r3 = rng.standard_normal(3)

    def proj(out: Tensor, weights: np.ndarray) -> Tensor:
        return (out * ad.as_tensor(weights, like=out)).sum()

    checks: "OrderedDict[str, Callable[[], float]]" = OrderedDict()

    def register(name, builder, arrays):
        checks[name] = lambda: check_builder(builder, arrays)

    register("add", lambda a, b: proj(a + b, r34), [x34, y34])
    register("subtract", lambda a, b: proj(a - b, r34), [x34, y34])
    register("multiply", lambda a, b: proj(a * b, r34), [x34, y34])
    register("divide", lambda a, b: proj(a / b, r34), [x34, pos34])
    register("power", lambda a: proj(a ** 3, r34), [pos34])
    register("broadcast_add", lambda a, b: proj(a + b, r334), [x314, y4])
    register("broadcast_multiply", lambda a, b: proj(a * b, r334), [x314, y4])
    register("matmul", lambda a, b: proj(a @ b, r24), [a23, b34])
    register("matmul_batched", lambda a, b: proj(a @ b, r235), [bat_a, bat_b])
    register("reduce_sum", lambda a: proj(a.sum(axis=1), r24) + a.sum(), [bat_a])
    register("reduce_mean", lambda a: proj(a.mean(axis=(0, 2)), r3) + a.mean(), [bat_a])
    register("reshape", lambda a: proj(a.reshape((4, 3)), r43), [x34])
    register("transpose", lambda a: proj(a.transpose((2, 0, 1)), r423), [bat_a])
    register("swapaxes", lambda a: proj(a.swapaxes(1, 2), r243), [bat_a])
    register("concat", lambda a, b: proj(ad.concat([a * 2.0, b], axis=1), r264), [bat_a, bat_a])
    register("slice", lambda a: proj(a[:, 1:5, :].mean(axis=1), r23) + proj(a[:, 0, :], r23), [seq])
    register("gather", lambda a: proj(a[idx], r43), [x43])
    register("relu", lambda a: proj(ad.relu(a), r34), [_away_from_zero(x34)])
    register("absolute", lambda a: proj(ad.absolute(a), r34), [_away_from_zero(y34)])
    register("exp", lambda a: proj(ad.exp(a), r34), [x34])
    register("log", lambda a: proj(ad.log(a), r34), [pos34])
    register("tanh", lambda a: proj(ad.tanh(a), r34), [x34])
    register("sigmoid", lambda a: proj(ad.sigmoid(a), r34), [x34])
    register("gelu", lambda a: proj(ad.gelu(a), r34), [x34])
    register("softmax", lambda a: proj(ad.softmax(a, axis=-1), r34), [3.0 * x34])
    register("layer_norm", lambda a: proj(ad.layer_norm(a, axis=-1), r34), [x34])
    register("masked_fill",
             lambda a: proj(ad.softmax(ad.masked_fill(a, mask34, ad.MASKED_SCORE), axis=-1), r34),
             [x34])

    def dropout_builder(a):
        drop_rng = np.random.default_rng(321)
        return proj(ad.dropout(a, 0.4, True, drop_rng), r34)

    register("dropout", dropout_builder, [x34])
    register("conv1d", lambda a, k: proj(ad.dilated_causal_conv1d(a, k, dilation=1), r264),
             [seq, kern])
    register("conv1d_dilated", lambda a, k: proj(ad.dilated_causal_conv1d(a, k, dilation=3), r264),
             [seq, kern])

    def tcn_block_builder(a, k1, k2, pw):
        h = ad.relu(ad.dilated_causal_conv1d(a, k1, dilation=1))
        h = ad.relu(ad.dilated_causal_conv1d(h, k2, dilation=2))
        return proj(h + a @ pw, r264)

    tcn_k1 = rng.standard_normal((2, 3, 4)) * 0.4
    tcn_k2 = rng.standard_normal((2, 4, 4)) * 0.4
    tcn_pw = rng.standard_normal((3, 4)) * 0.4
    register("tcn_block", tcn_block_builder, [seq + 0.3, tcn_k1, tcn_k2, tcn_pw])

    checks["pipeline"] = lambda: _pipeline_error(seed)
    return checks


def _toy_config() -> ModelConfig:
    return ModelConfig(
        feature_dim=4,
        task=TaskKind.VA,
        tcn=TcnSettings(channels=4, kernel_size=3, dilations=(1, 2, 4, 8), num_blocks=1),
        encoder=EncoderSettings(d_model=4, num_layers=1, num_heads=1, ff_dim=16),
        head=HeadSettings(hidden_dim=8),
        dropout=0.0,
        dtype="float64",
    )


def _pipeline_error(seed: int) -> float:
    """Full-stack gradient vs finite differences at toy sizes, eval mode."""
    rng = np.random.default_rng(seed + 17)
    config = _toy_config()
    model = PipelineModel.initialize(config, seed=seed + 1)
    features = rng.standard_normal((1, 8, 4))
    frame_valid = np.ones((1, 8), dtype=bool)
    frame_valid[0, 6:] = False
    projection = rng.standard_normal((1, 8, 2))
    names = [name for name, _ in model.parameters()]

    def run(param_arrays: dict[str, np.ndarray], feats) -> Tensor:
        for name, tensor in model.params.items():
            tensor.data = param_arrays[name]
        out = model.forward(feats, frame_valid=frame_valid, train=False)
        return (out * ad.as_tensor(projection, like=out)).sum()

    base = {name: t.data.copy() for name, t in model.params.items()}

    ad.clear_tape()
    feat_leaf = Tensor(features.copy(), requires_grad=True)
    loss = run(base, feat_leaf)
    ad.backward(loss)
    analytic = {name: (model.params[name].grad if model.params[name].grad is not None
                       else np.zeros_like(base[name])) for name in names}
    feat_grad = feat_leaf.grad if feat_leaf.grad is not None else np.zeros_like(features)
    ad.clear_tape()

    def scalar_fn_for(name):
        def fn(candidate):
            trial = dict(base)
            trial[name] = candidate
            with ad.no_grad():
                return run(trial, features).item()
        return fn

    def feat_fn(feats):
        with ad.no_grad():
            return run(base, feats).item()

    # One relative error over the whole concatenated gradient: parameters
    # with an identically zero true gradient (e.g. key-projection biases,
    # which cancel inside softmax) would otherwise pit roundoff dust
    # against the error floor instead of against the gradient's scale.
    analytic_parts = [analytic[name].ravel() for name in names]
    numerical_parts = [numerical_gradient(scalar_fn_for(name), [base[name]], 0).ravel()
                       for name in names]
    analytic_parts.append(feat_grad.ravel())
    numerical_parts.append(numerical_gradient(feat_fn, [features], 0).ravel())
    for name, tensor in model.params.items():
        tensor.data = base[name]
    return relative_error(np.concatenate(analytic_parts),
                          np.concatenate(numerical_parts))


def run_gradcheck(seed: int = 0) -> "OrderedDict[str, float]":
    """Execute the whole suite; maps check name to max relative error."""
    results: "OrderedDict[str, float]" = OrderedDict()
    for name, runner in _suite(seed).items():
        results[name] = float(runner())
    return results
