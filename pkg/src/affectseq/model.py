"""The per-segment prediction stack: TCN, transformer encoder, task head.

Architecture (all widths configurable):

* TCN: ``num_blocks`` ladders of residual stages, one stage per dilation in
  ``dilations``.  A stage is conv(d) -> relu -> dropout -> conv(d) -> relu
  -> dropout with a 1x1 projection on the residual path.  Convolutions are
  causal, so position ``t`` never sees future frames.
* Encoder: pre-norm transformer layers (multi-head self-attention plus a
  gelu feed-forward block), sinusoidal position signals added to the input,
  a final layer norm after the stack.  Padded tail positions are excluded
  from attention via the frame-validity mask.
* Head: two-layer gelu MLP; VA outputs pass through tanh into [-1, 1],
  EXPR and AU outputs are raw logits.

Either temporal stage can be disabled for ablations.  Without the TCN a
learned linear projection lifts features to the encoder width.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .datamodel import TaskKind, output_dim


@dataclass(frozen=True)
class TcnSettings:
    channels: int = 256
    kernel_size: int = 3
    dilations: tuple[int, ...] = (1, 2, 4, 8)
    num_blocks: int = 2


@dataclass(frozen=True)
class EncoderSettings:
    d_model: int = 256
    num_layers: int = 4
    num_heads: int = 8
    ff_dim: int = 1024


@dataclass(frozen=True)
class HeadSettings:
    hidden_dim: int = 128


@dataclass(frozen=True)
class ModelConfig:
    """Hyperparameters fully determining the parameter set of the stack.

    ``tcn.channels`` must equal ``encoder.d_model``: the stages share one
    model width and the head reads it regardless of which stages are
    enabled.
    """

    feature_dim: int
    task: TaskKind
    tcn: TcnSettings = field(default_factory=TcnSettings)
    encoder: EncoderSettings = field(default_factory=EncoderSettings)
    head: HeadSettings = field(default_factory=HeadSettings)
    dropout: float = 0.3
    use_tcn: bool = True
    use_encoder: bool = True
    dtype: str = "float32"

    def __post_init__(self):
        if self.feature_dim < 1:
            raise ValueError("feature_dim must be at least 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if min(self.tcn.channels, self.tcn.kernel_size, self.tcn.num_blocks,
               self.encoder.d_model, self.encoder.num_layers, self.encoder.num_heads,
               self.encoder.ff_dim, self.head.hidden_dim) < 1:
            raise ValueError("all architecture dimensions must be at least 1")
        if not self.tcn.dilations or min(self.tcn.dilations) < 1:
            raise ValueError("dilations must be a non-empty list of positive ints")
        if self.encoder.d_model % self.encoder.num_heads != 0:
            raise ValueError("d_model must be divisible by num_heads")
        if self.tcn.channels != self.encoder.d_model:
            raise ValueError("tcn.channels must equal encoder.d_model (shared model width)")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be 'float32' or 'float64'")

    @property
    def width(self) -> int:
        return self.encoder.d_model

    @property
    def np_dtype(self):
        return np.float32 if self.dtype == "float32" else np.float64

    def to_dict(self) -> dict:
        out = asdict(self)
        out["task"] = self.task.value
        out["tcn"]["dilations"] = list(self.tcn.dilations)
        return out

    @classmethod
    def from_dict(cls, raw: dict) -> "ModelConfig":
        raw = dict(raw)
        raw["task"] = TaskKind.from_string(raw["task"])
        raw["tcn"] = TcnSettings(**{**raw.get("tcn", {}),
                                    "dilations": tuple(raw.get("tcn", {}).get("dilations", (1, 2, 4, 8)))})
        raw["encoder"] = EncoderSettings(**raw.get("encoder", {}))
        raw["head"] = HeadSettings(**raw.get("head", {}))
        return cls(**raw)


def parameter_count(cfg: ModelConfig) -> int:
    """Closed-form parameter total for a configuration.

    TCN stage with input channels ``c_in``: two ``(K, c, c)`` kernels with
    biases plus the 1x1 residual projection, i.e.
    ``K*c_in*C + C + K*C*C + C + c_in*C + C``.  Encoder layer: four
    ``d x d`` attention projections, the two feed-forward matrices, all
    with biases, plus two layer-norm gain/shift pairs; the stack adds one
    final pair.  Head: ``C*H + H + H*out + out``.
    """
    d = cfg.width
    total = 0
    if cfg.use_tcn:
        c_in = cfg.feature_dim
        k = cfg.tcn.kernel_size
        for _ in range(cfg.tcn.num_blocks):
            for _ in cfg.tcn.dilations:
                total += k * c_in * d + d    # conv1
                total += k * d * d + d       # conv2
                total += c_in * d + d        # residual projection
                c_in = d
    else:
        total += cfg.feature_dim * d + d     # input projection
    if cfg.use_encoder:
        per_layer = 4 * (d * d + d) + (d * cfg.encoder.ff_dim + cfg.encoder.ff_dim) \
            + (cfg.encoder.ff_dim * d + d) + 2 * (2 * d)
        total += cfg.encoder.num_layers * per_layer + 2 * d
    h = cfg.head.hidden_dim
    out = output_dim(cfg.task)
    total += d * h + h + h * out + out
    return total


def sinusoidal_positions(length: int, dim: int, dtype=np.float64) -> np.ndarray:
    """Standard fixed sin/cos position signals, shape ``(length, dim)``."""
    positions = np.arange(length, dtype=np.float64)[:, None]
    index = np.arange(dim, dtype=np.float64)[None, :]
    angles = positions / np.power(10000.0, 2.0 * np.floor(index / 2.0) / dim)
    table = np.where(index % 2 == 0, np.sin(angles), np.cos(angles))
    return table.astype(dtype)


class PipelineModel:
    """Parameterized TCN -> encoder -> head stack operating on segments.

    Parameters live in an ordered name -> :class:`Tensor` mapping; the
    order and shapes are a pure function of :class:`ModelConfig`, which is
    what makes checkpoints portable.
    """

    def __init__(self, config: ModelConfig, params: dict[str, Tensor]):
        self.config = config
        self.params = params

    # -- construction ------------------------------------------------------

    @classmethod
    def initialize(cls, config: ModelConfig, seed: int = 0) -> "PipelineModel":
        """Fresh model with fan-in uniform weights and zero biases."""
        rng = np.random.default_rng(seed)
        dtype = config.np_dtype
        params: dict[str, Tensor] = {}

        def weight(name, shape, fan_in):
            bound = 1.0 / np.sqrt(fan_in)
            params[name] = Tensor(
                rng.uniform(-bound, bound, size=shape).astype(dtype), requires_grad=True
            )

        def zeros(name, shape):
            params[name] = Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)

        def ones(name, shape):
            params[name] = Tensor(np.ones(shape, dtype=dtype), requires_grad=True)

        d = config.width
        if config.use_tcn:
            k = config.tcn.kernel_size
            c_in = config.feature_dim
            for b in range(config.tcn.num_blocks):
                for s, _dilation in enumerate(config.tcn.dilations):
                    base = f"tcn.b{b}.s{s}."
                    weight(base + "conv1.weight", (k, c_in, d), k * c_in)
                    zeros(base + "conv1.bias", (d,))
                    weight(base + "conv2.weight", (k, d, d), k * d)
                    zeros(base + "conv2.bias", (d,))
                    weight(base + "proj.weight", (c_in, d), c_in)
                    zeros(base + "proj.bias", (d,))
                    c_in = d
        else:
            weight("input_proj.weight", (config.feature_dim, d), config.feature_dim)
            zeros("input_proj.bias", (d,))

        if config.use_encoder:
            for layer in range(config.encoder.num_layers):
                base = f"enc.l{layer}."
                for proj in ("q", "k", "v", "o"):
                    weight(base + proj + ".weight", (d, d), d)
                    zeros(base + proj + ".bias", (d,))
                ones(base + "ln1.gain", (d,))
                zeros(base + "ln1.shift", (d,))
                weight(base + "ff1.weight", (d, config.encoder.ff_dim), d)
                zeros(base + "ff1.bias", (config.encoder.ff_dim,))
                weight(base + "ff2.weight", (config.encoder.ff_dim, d), config.encoder.ff_dim)
                zeros(base + "ff2.bias", (d,))
                ones(base + "ln2.gain", (d,))
                zeros(base + "ln2.shift", (d,))
            ones("enc.ln_out.gain", (d,))
            zeros("enc.ln_out.shift", (d,))

        weight("head.fc1.weight", (d, config.head.hidden_dim), d)
        zeros("head.fc1.bias", (config.head.hidden_dim,))
        weight("head.fc2.weight", (config.head.hidden_dim, output_dim(config.task)),
               config.head.hidden_dim)
        zeros("head.fc2.bias", (output_dim(config.task),))
        return cls(config, params)

    def parameters(self) -> list[tuple[str, Tensor]]:
        return list(self.params.items())

    def n_parameters(self) -> int:
        return sum(t.size for _, t in self.parameters())

    def zero_grad(self) -> None:
        for _, t in self.parameters():
            t.zero_grad()

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: t.data for name, t in self.params.items()}

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        if set(arrays) != set(self.params):
            raise ValueError("parameter names do not match this configuration")
        for name, tensor in self.params.items():
            value = np.asarray(arrays[name], dtype=tensor.dtype)
            if value.shape != tensor.shape:
                raise ValueError(f"shape mismatch for {name}")
            tensor.data = value.copy()

    # -- forward pieces ----------------------------------------------------

    def _dropout(self, x, train, rng):
        return ad.dropout(x, self.config.dropout, train, rng)

    def tcn_forward(self, x: Tensor, train: bool = False,
                    rng: np.random.Generator | None = None) -> Tensor:
        """(..., w, feature_dim) -> (..., w, width), causally."""
        p = self.params
        for b in range(self.config.tcn.num_blocks):
            for s, dilation in enumerate(self.config.tcn.dilations):
                base = f"tcn.b{b}.s{s}."
                h = ad.dilated_causal_conv1d(x, p[base + "conv1.weight"], dilation)
                h = ad.relu(h + p[base + "conv1.bias"])
                h = self._dropout(h, train, rng)
                h = ad.dilated_causal_conv1d(h, p[base + "conv2.weight"], dilation)
                h = ad.relu(h + p[base + "conv2.bias"])
                h = self._dropout(h, train, rng)
                x = h + (x @ p[base + "proj.weight"] + p[base + "proj.bias"])
        return x

    def _layer_norm(self, x, gain, shift):
        return ad.layer_norm(x, axis=-1, eps=1e-5) * gain + shift

    def _attention(self, x: Tensor, pad_mask: np.ndarray | None, base: str,
                   train: bool, rng) -> Tensor:
        p = self.params
        cfg = self.config.encoder
        heads, head_dim = cfg.num_heads, cfg.d_model // cfg.num_heads
        batch, window, _ = x.shape

        def split_heads(t):
            return t.reshape((batch, window, heads, head_dim)).transpose((0, 2, 1, 3))

        q = split_heads(x @ p[base + "q.weight"] + p[base + "q.bias"])
        k = split_heads(x @ p[base + "k.weight"] + p[base + "k.bias"])
        v = split_heads(x @ p[base + "v.weight"] + p[base + "v.bias"])

        scores = (q @ k.transpose((0, 1, 3, 2))) * (1.0 / np.sqrt(head_dim))
        if pad_mask is not None:
            scores = ad.masked_fill(scores, pad_mask[:, None, None, :], ad.MASKED_SCORE)
        weights = ad.softmax(scores, axis=-1)
        weights = self._dropout(weights, train, rng)
        context = (weights @ v).transpose((0, 2, 1, 3)).reshape((batch, window, cfg.d_model))
        return context @ p[base + "o.weight"] + p[base + "o.bias"]

    def encoder_forward(self, x: Tensor, pad_mask: np.ndarray | None = None,
                        train: bool = False,
                        rng: np.random.Generator | None = None) -> Tensor:
        """(batch, w, width) -> same shape; ``pad_mask`` True marks padding."""
        if pad_mask is not None:
            pad_mask = np.asarray(pad_mask, dtype=bool)
            if pad_mask.all(axis=-1).any():
                raise ValueError("encoder received a fully padded sequence")
        p = self.params
        window = x.shape[-2]
        positions = sinusoidal_positions(window, self.config.width, dtype=x.dtype)
        x = x + ad.as_tensor(positions, like=x)
        for layer in range(self.config.encoder.num_layers):
            base = f"enc.l{layer}."
            normed = self._layer_norm(x, p[base + "ln1.gain"], p[base + "ln1.shift"])
            x = x + self._dropout(self._attention(normed, pad_mask, base, train, rng), train, rng)
            normed = self._layer_norm(x, p[base + "ln2.gain"], p[base + "ln2.shift"])
            ff = ad.gelu(normed @ p[base + "ff1.weight"] + p[base + "ff1.bias"])
            ff = self._dropout(ff, train, rng) @ p[base + "ff2.weight"] + p[base + "ff2.bias"]
            x = x + self._dropout(ff, train, rng)
        return self._layer_norm(x, p["enc.ln_out.gain"], p["enc.ln_out.shift"])

    def head_forward(self, x: Tensor, train: bool = False,
                     rng: np.random.Generator | None = None) -> Tensor:
        p = self.params
        h = ad.gelu(x @ p["head.fc1.weight"] + p["head.fc1.bias"])
        h = self._dropout(h, train, rng)
        out = h @ p["head.fc2.weight"] + p["head.fc2.bias"]
        if self.config.task is TaskKind.VA:
            out = ad.tanh(out)
        return out

    def forward(self, features, frame_valid=None, train: bool = False,
                rng: np.random.Generator | None = None) -> Tensor:
        """Run the full stack on a segment batch.

        Args:
            features: ``(batch, w, feature_dim)`` or a single ``(w,
                feature_dim)`` segment; numpy arrays are wrapped as
                constants.
            frame_valid: Matching ``(batch, w)`` / ``(w,)`` mask, True at
                real frames.  ``None`` treats every position as real.
            train: Enables dropout (requires ``rng``).
            rng: Source of dropout masks during training.

        Returns:
            Tensor of shape ``(batch, w, output_dim)`` (or ``(w,
            output_dim)`` for unbatched input).
        """
        if train and self.config.dropout > 0.0 and rng is None:
            raise ValueError("training forward needs an rng for dropout")
        x = features if isinstance(features, Tensor) else Tensor(
            np.asarray(features, dtype=self.config.np_dtype))
        single = x.ndim == 2
        if single:
            x = x.reshape((1,) + x.shape)
        if x.ndim != 3 or x.shape[-1] != self.config.feature_dim:
            raise ValueError(f"expected (batch, w, {self.config.feature_dim}) features, "
                             f"got {x.shape}")
        pad_mask = None
        if frame_valid is not None:
            frame_valid = np.asarray(frame_valid, dtype=bool).reshape(x.shape[0], x.shape[1])
            pad_mask = ~frame_valid

        if self.config.use_tcn:
            x = self.tcn_forward(x, train, rng)
        else:
            x = x @ self.params["input_proj.weight"] + self.params["input_proj.bias"]
        if self.config.use_encoder:
            x = self.encoder_forward(x, pad_mask, train, rng)
        out = self.head_forward(x, train, rng)
        if single:
            out = out.reshape(out.shape[1:])
        return out
