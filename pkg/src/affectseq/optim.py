"""AdamW with decoupled weight decay, and the warmup/cosine LR schedule.

The update for each parameter tensor, at step ``t`` (1-based):

    m = b1*m + (1-b1)*g
    v = b2*v + (1-b2)*g^2
    m_hat = m / (1 - b1^t)
    v_hat = v / (1 - b2^t)
    theta = theta - lr * (m_hat / (sqrt(v_hat) + eps) + wd * theta)

Weight decay multiplies the parameter directly (decoupled), not the
gradient.  The implementation applies it as ``theta *= 1 - lr*wd`` before
the moment-based term, which is the same algebra but makes the
zero-gradient case an exact bitwise contraction by ``1 - lr*wd``.

The schedule ramps linearly from zero over the warmup steps, then follows
a half cosine from the base rate down to zero over the remainder.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor
from .errors import NumericalError


@dataclass(frozen=True)
class OptimConfig:
    epochs: int
    lr: float = 3e-5
    weight_decay: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 32
    warmup_epochs: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")
        if self.lr < 0.0:
            raise ValueError("lr must be non-negative")
        if self.weight_decay < 0.0:
            raise ValueError("weight_decay must be non-negative")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ValueError("betas must lie in [0, 1)")
        if self.eps <= 0.0:
            raise ValueError("eps must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.warmup_epochs < 0:
            raise ValueError("warmup_epochs must be non-negative")

    def to_dict(self) -> dict:
        from dataclasses import asdict
        return asdict(self)

    @classmethod
    def from_dict(cls, raw: dict) -> "OptimConfig":
        return cls(**raw)


def lr_schedule(step: int, total_steps: int, warmup_steps: int, base_lr: float) -> float:
    """Learning rate at 0-based ``step``.

    Steps ``0 .. warmup_steps-1`` ramp linearly from 0 toward ``base_lr``
    (step 0 uses rate 0); the remaining steps trace
    ``base_lr * 0.5 * (1 + cos(pi * progress))`` with progress measured
    over the post-warmup span.
    """
    if total_steps < 1:
        raise ValueError("total_steps must be at least 1")
    if not 0 <= warmup_steps < total_steps:
        raise ValueError("warmup_steps must lie in [0, total_steps)")
    if not 0 <= step < total_steps:
        raise ValueError("step must lie in [0, total_steps)")
    if warmup_steps > 0 and step < warmup_steps:
        return base_lr * step / warmup_steps
    progress = (step - warmup_steps) / (total_steps - warmup_steps)
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


class AdamW:
    """Stateful AdamW over an ordered list of named parameter tensors."""

    def __init__(self, named_params: list[tuple[str, Tensor]], config: OptimConfig):
        self.config = config
        self.named_params = list(named_params)
        self.step_count = 0
        self._m = {name: np.zeros_like(t.data, dtype=np.float64)
                   for name, t in self.named_params}
        self._v = {name: np.zeros_like(t.data, dtype=np.float64)
                   for name, t in self.named_params}

    def step(self, lr: float | None = None) -> None:
        """Apply one update using accumulated ``.grad``; missing grads act as zero.

        Gradients are validated before any parameter is touched, so a
        non-finite gradient aborts the whole step with no partial update.
        """
        cfg = self.config
        rate = cfg.lr if lr is None else lr
        grads = {}
        for name, param in self.named_params:
            g = param.grad
            if g is None:
                g = np.zeros_like(param.data, dtype=np.float64)
            else:
                g = g.astype(np.float64, copy=False)
                if not np.isfinite(g).all():
                    raise NumericalError(f"non-finite gradient for parameter {name!r}")
            grads[name] = g
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - cfg.beta1 ** t
        bc2 = 1.0 - cfg.beta2 ** t
        for name, param in self.named_params:
            g = grads[name]
            m = self._m[name]
            v = self._v[name]
            m *= cfg.beta1
            m += (1.0 - cfg.beta1) * g
            v *= cfg.beta2
            v += (1.0 - cfg.beta2) * np.square(g)
            adam_term = (m / bc1) / (np.sqrt(v / bc2) + cfg.eps)
            decayed = param.data * (1.0 - rate * cfg.weight_decay)
            param.data = (decayed - rate * adam_term).astype(param.dtype, copy=False)

    def zero_grad(self) -> None:
        for _, param in self.named_params:
            param.zero_grad()

    def state_dict(self) -> dict:
        return {
            "step_count": self.step_count,
            "m": {name: arr.copy() for name, arr in self._m.items()},
            "v": {name: arr.copy() for name, arr in self._v.items()},
        }

    def load_state_dict(self, state: dict) -> None:
        if set(state["m"]) != set(self._m) or set(state["v"]) != set(self._v):
            raise ValueError("optimizer state does not match the parameter set")
        self.step_count = int(state["step_count"])
        for name in self._m:
            self._m[name] = np.asarray(state["m"][name], dtype=np.float64).copy()
            self._v[name] = np.asarray(state["v"][name], dtype=np.float64).copy()
