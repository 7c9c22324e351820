"""File formats, dataset layout, checkpoints, and the synthetic generator.

Three on-disk formats, all little-endian and bit-exact:

* Feature files: magic ``AFSQ1``, then ``feature_dim`` and ``n_frames`` as
  unsigned 32-bit integers, then ``n_frames x feature_dim`` 32-bit floats,
  row-major.
* Annotation files: text, one frame per line, with one optional header
  line.  VA lines are "valence,arousal"; EXPR lines a single class index;
  AU lines twelve comma-separated binary indicators.  Sentinels mark
  invalid frames: -5 on either VA dimension, -1 for EXPR, -1 in any AU
  slot.
* Checkpoints: magic ``AFSQCKPT``, a version word, a canonical JSON
  header describing every stored array, then the raw array bytes in
  header order.  Saving what was just loaded reproduces the byte stream
  exactly, which is what makes resume equivalence testable.

A dataset directory holds ``features/<video_id>.feat`` plus
``annotations/<video_id>.txt``.

The synthetic generator at the bottom of the module exists so the whole
pipeline can be exercised at desk scale: features follow a smooth seeded
latent process and labels are a published deterministic function of the
stored features (see :func:`apply_readout`), so models can genuinely fit
them and an oracle using the true map scores perfectly.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .datamodel import (ACTION_UNITS, EXPRESSION_CLASSES, FrameLabels, TaskKind,
                        VideoRecord, output_dim)
from .errors import DataError
from .model import ModelConfig
from .optim import OptimConfig

FEATURE_MAGIC = b"AFSQ1"
CHECKPOINT_MAGIC = b"AFSQCKPT"
CHECKPOINT_VERSION = 1
FEATURE_SUFFIX = ".feat"
ANNOTATION_SUFFIX = ".txt"

VA_SENTINEL = -5.0
CLASS_SENTINEL = -1


def _as_task(task) -> TaskKind:
    """Accept a TaskKind or its string name at public entry points."""
    if isinstance(task, TaskKind):
        return task
    return TaskKind.from_string(task)


# --------------------------------------------------------------------------
# feature files
# --------------------------------------------------------------------------

def save_features(path, features: np.ndarray) -> None:
    """Write a float32 feature matrix in the binary container format."""
    features = np.asarray(features, dtype=np.float32)
    if features.ndim != 2:
        raise ValueError(f"features must be 2-D, got shape {features.shape}")
    n_frames, feature_dim = features.shape
    payload = features.astype("<f4", copy=False).tobytes(order="C")
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(struct.pack("<II", feature_dim, n_frames))
        fh.write(payload)


def load_features(path) -> np.ndarray:
    """Read a feature file back into a float32 ``(n_frames, feature_dim)`` array."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read feature file {path}: {exc}") from exc
    if len(raw) < len(FEATURE_MAGIC) + 8:
        raise DataError(f"{path}: truncated feature file")
    if raw[:len(FEATURE_MAGIC)] != FEATURE_MAGIC:
        raise DataError(f"{path}: bad magic, not a feature file")
    feature_dim, n_frames = struct.unpack_from("<II", raw, len(FEATURE_MAGIC))
    body = raw[len(FEATURE_MAGIC) + 8:]
    expected = 4 * n_frames * feature_dim
    if len(body) != expected:
        raise DataError(
            f"{path}: header declares {n_frames} frames x {feature_dim} dims "
            f"({expected} payload bytes) but file carries {len(body)}"
        )
    data = np.frombuffer(body, dtype="<f4").astype(np.float32, copy=True)
    return data.reshape(n_frames, feature_dim)


# --------------------------------------------------------------------------
# annotation files
# --------------------------------------------------------------------------

_HEADERS = {
    TaskKind.VA: "valence,arousal",
    TaskKind.EXPR: "expression",
    TaskKind.AU: ",".join(f"AU{n}" for n in ACTION_UNITS),
}


def save_annotations(path, labels: FrameLabels, header: bool = True) -> None:
    """Write per-frame annotations, using sentinel codes at invalid frames.

    Floats are written with full round-trip precision, so a save/load
    cycle preserves VA values exactly.
    """
    lines = []
    if header:
        lines.append(_HEADERS[labels.task])
    if labels.task is TaskKind.VA:
        for (v, a), ok in zip(labels.values, labels.valid):
            if ok:
                lines.append(f"{float(v)!r},{float(a)!r}")
            else:
                lines.append(f"{VA_SENTINEL!r},{VA_SENTINEL!r}")
    elif labels.task is TaskKind.EXPR:
        for c, ok in zip(labels.values, labels.valid):
            lines.append(str(int(c)) if ok else str(CLASS_SENTINEL))
    else:
        invalid_row = ",".join([str(CLASS_SENTINEL)] * len(ACTION_UNITS))
        for row, ok in zip(labels.values, labels.valid):
            lines.append(",".join(str(int(u)) for u in row) if ok else invalid_row)
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


def _annotation_lines(path, n_frames: int | None) -> list[tuple[int, str]]:
    """Read data lines as (1-based line number, text), skipping one header."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read annotation file {path}: {exc}") from exc
    numbered = [(i + 1, line.strip()) for i, line in enumerate(text.splitlines())]
    while numbered and not numbered[-1][1]:
        numbered.pop()
    if not numbered:
        raise DataError(f"{path}: empty annotation file")

    def looks_like_header(line: str) -> bool:
        return any(ch.isalpha() for ch in line)

    if n_frames is None:
        if looks_like_header(numbered[0][1]):
            numbered = numbered[1:]
    elif len(numbered) == n_frames + 1:
        if not looks_like_header(numbered[0][1]):
            raise DataError(
                f"{path}: {len(numbered)} lines for {n_frames} frames and the "
                "first is not a header"
            )
        numbered = numbered[1:]
    elif len(numbered) != n_frames:
        raise DataError(
            f"{path}: {len(numbered)} data lines do not match {n_frames} frames"
        )
    elif looks_like_header(numbered[0][1]):
        raise DataError(f"{path}: header present but line count matches frames")
    if not numbered:
        raise DataError(f"{path}: no data lines")
    return numbered


def load_annotations(path, task: TaskKind, n_frames: int | None = None) -> FrameLabels:
    """Parse an annotation file, mapping sentinel codes to ``valid=False``."""
    task = _as_task(task)
    numbered = _annotation_lines(path, n_frames)
    n = len(numbered)
    valid = np.ones(n, dtype=bool)

    def bad(line_no, line, why):
        return DataError(f"{path}:{line_no}: {why} in {line!r}")

    if task is TaskKind.VA:
        values = np.zeros((n, 2), dtype=np.float64)
        for row, (line_no, line) in enumerate(numbered):
            parts = line.split(",")
            if len(parts) != 2:
                raise bad(line_no, line, "expected two comma-separated reals")
            try:
                v, a = float(parts[0]), float(parts[1])
            except ValueError:
                raise bad(line_no, line, "malformed real number") from None
            if v == VA_SENTINEL or a == VA_SENTINEL:
                valid[row] = False
            elif abs(v) > 1.0 or abs(a) > 1.0:
                raise bad(line_no, line, "valence/arousal outside [-1, 1]")
            else:
                values[row] = (v, a)
    elif task is TaskKind.EXPR:
        values = np.zeros(n, dtype=np.int64)
        for row, (line_no, line) in enumerate(numbered):
            try:
                c = int(line)
            except ValueError:
                raise bad(line_no, line, "malformed class index") from None
            if c == CLASS_SENTINEL:
                valid[row] = False
            elif not 0 <= c < len(EXPRESSION_CLASSES):
                raise bad(line_no, line, f"class index {c} outside 0..7")
            else:
                values[row] = c
    else:
        width = len(ACTION_UNITS)
        values = np.zeros((n, width), dtype=np.int64)
        for row, (line_no, line) in enumerate(numbered):
            parts = line.split(",")
            if len(parts) != width:
                raise bad(line_no, line, f"expected {width} comma-separated indicators")
            try:
                units = [int(p) for p in parts]
            except ValueError:
                raise bad(line_no, line, "malformed indicator") from None
            if any(u == CLASS_SENTINEL for u in units):
                valid[row] = False
            elif any(u not in (0, 1) for u in units):
                raise bad(line_no, line, "indicators must be 0, 1 or -1")
            else:
                values[row] = units
    return FrameLabels(task=task, values=values, valid=valid)


def load_video(feature_path, annotation_path, task: TaskKind,
               video_id: str | None = None) -> VideoRecord:
    """Load and cross-check one feature/annotation pair."""
    features = load_features(feature_path)
    if features.shape[0] < 1:
        raise DataError(f"{feature_path}: video has no frames")
    labels = load_annotations(annotation_path, task, n_frames=features.shape[0])
    if video_id is None:
        video_id = Path(feature_path).stem
    try:
        return VideoRecord(video_id=video_id, features=features, labels=labels)
    except ValueError as exc:
        raise DataError(f"{feature_path} / {annotation_path}: {exc}") from exc


def save_dataset(videos, root, header: bool = True) -> None:
    """Write a dataset directory: features/ and annotations/ per video."""
    root = Path(root)
    (root / "features").mkdir(parents=True, exist_ok=True)
    (root / "annotations").mkdir(parents=True, exist_ok=True)
    for video in videos:
        save_features(root / "features" / f"{video.video_id}{FEATURE_SUFFIX}",
                      video.features)
        save_annotations(root / "annotations" / f"{video.video_id}{ANNOTATION_SUFFIX}",
                         video.labels, header=header)


def load_dataset(root, task: TaskKind) -> list[VideoRecord]:
    """Load every video under a dataset directory, sorted by video id."""
    task = _as_task(task)
    root = Path(root)
    feature_dir = root / "features"
    annotation_dir = root / "annotations"
    if not feature_dir.is_dir():
        raise DataError(f"{root}: missing features/ directory")
    if not annotation_dir.is_dir():
        raise DataError(f"{root}: missing annotations/ directory")
    videos = []
    paths = sorted(feature_dir.glob(f"*{FEATURE_SUFFIX}"))
    if not paths:
        raise DataError(f"{feature_dir}: no {FEATURE_SUFFIX} files found")
    for feature_path in paths:
        annotation_path = annotation_dir / (feature_path.stem + ANNOTATION_SUFFIX)
        if not annotation_path.is_file():
            raise DataError(f"{annotation_path}: missing annotations for "
                            f"{feature_path.name}")
        videos.append(load_video(feature_path, annotation_path, task))
    return videos


# --------------------------------------------------------------------------
# checkpoints
# --------------------------------------------------------------------------

@dataclass
class Checkpoint:
    """Everything needed to resume or reuse a training run."""

    model_config: ModelConfig
    params: dict[str, np.ndarray]
    epoch: int = 0
    best_metric: float | None = None
    optim_config: OptimConfig | None = None
    optim_state: dict | None = None
    rng_state: dict | None = None


_DTYPE_CODES = {"float32": "<f4", "float64": "<f8"}


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    arrays: list[tuple[str, np.ndarray]] = []
    for name in ckpt.params:
        arrays.append((f"param.{name}", np.asarray(ckpt.params[name])))
    optim_step = None
    if ckpt.optim_state is not None:
        optim_step = int(ckpt.optim_state["step_count"])
        for name in ckpt.params:
            arrays.append((f"optim.m.{name}",
                           np.asarray(ckpt.optim_state["m"][name], dtype=np.float64)))
        for name in ckpt.params:
            arrays.append((f"optim.v.{name}",
                           np.asarray(ckpt.optim_state["v"][name], dtype=np.float64)))

    listing = []
    chunks = []
    for name, arr in arrays:
        dtype_name = str(arr.dtype)
        if dtype_name not in _DTYPE_CODES:
            raise ValueError(f"unsupported array dtype {dtype_name} for {name}")
        listing.append([name, list(arr.shape), dtype_name])
        chunks.append(arr.astype(_DTYPE_CODES[dtype_name], copy=False).tobytes(order="C"))

    header = {
        "arrays": listing,
        "best_metric": None if ckpt.best_metric is None else float(ckpt.best_metric),
        "epoch": int(ckpt.epoch),
        "model_config": ckpt.model_config.to_dict(),
        "optim_config": None if ckpt.optim_config is None else ckpt.optim_config.to_dict(),
        "optim_step_count": optim_step,
        "rng_state": ckpt.rng_state,
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for chunk in chunks:
            fh.write(chunk)


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from exc
    fixed = len(CHECKPOINT_MAGIC) + 4 + 8
    if len(raw) < fixed:
        raise DataError(f"{path}: truncated checkpoint")
    if raw[:len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise DataError(f"{path}: bad magic, not a checkpoint")
    version, = struct.unpack_from("<I", raw, len(CHECKPOINT_MAGIC))
    if version != CHECKPOINT_VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    header_len, = struct.unpack_from("<Q", raw, len(CHECKPOINT_MAGIC) + 4)
    if len(raw) < fixed + header_len:
        raise DataError(f"{path}: truncated checkpoint header")
    try:
        header = json.loads(raw[fixed:fixed + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataError(f"{path}: corrupt checkpoint header: {exc}") from exc

    offset = fixed + header_len
    stored: dict[str, np.ndarray] = {}
    for name, shape, dtype_name in header["arrays"]:
        if dtype_name not in _DTYPE_CODES:
            raise DataError(f"{path}: unsupported dtype {dtype_name} in header")
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        nbytes = count * np.dtype(_DTYPE_CODES[dtype_name]).itemsize
        if offset + nbytes > len(raw):
            raise DataError(f"{path}: truncated payload for array {name}")
        arr = np.frombuffer(raw, dtype=_DTYPE_CODES[dtype_name], count=count,
                            offset=offset)
        stored[name] = arr.reshape(shape).astype(dtype_name, copy=True)
        offset += nbytes
    if offset != len(raw):
        raise DataError(f"{path}: {len(raw) - offset} trailing bytes after payload")

    try:
        model_config = ModelConfig.from_dict(header["model_config"])
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"{path}: invalid model config in checkpoint: {exc}") from exc
    params = {name[len("param."):]: arr for name, arr in stored.items()
              if name.startswith("param.")}
    optim_state = None
    if header.get("optim_step_count") is not None:
        optim_state = {
            "step_count": int(header["optim_step_count"]),
            "m": {name[len("optim.m."):]: arr for name, arr in stored.items()
                  if name.startswith("optim.m.")},
            "v": {name[len("optim.v."):]: arr for name, arr in stored.items()
                  if name.startswith("optim.v.")},
        }
    optim_config = None
    if header.get("optim_config") is not None:
        try:
            optim_config = OptimConfig.from_dict(header["optim_config"])
        except (TypeError, ValueError) as exc:
            raise DataError(f"{path}: invalid optimizer config: {exc}") from exc
    return Checkpoint(
        model_config=model_config,
        params=params,
        epoch=int(header.get("epoch", 0)),
        best_metric=header.get("best_metric"),
        optim_config=optim_config,
        optim_state=optim_state,
        rng_state=header.get("rng_state"),
    )


# --------------------------------------------------------------------------
# synthetic data
# --------------------------------------------------------------------------

#: Length of the short causal moving average the labels are built from.
FAST_WINDOW = 8
#: Length and backward offset of the lagged average mixed into the labels.
SLOW_WINDOW = 64
SLOW_LAG = 32
#: Relative weight of the lagged component.
SLOW_WEIGHT = 1.4
#: Shape of the rectified-difference component: frame-to-frame jumps
#: ``relu(x[t] - x[t - LOC_GAP])`` averaged over LOC_WINDOW frames.
LOC_WINDOW = 2
LOC_GAP = 2
LOC_WEIGHT = 1.7
#: Gain inside the tanh squash for VA labels.
VA_GAIN = 0.8
#: Activation threshold for AU labels, in score units.  Positive on
#: purpose: every unit fires on a minority of frames, as real action
#: units do, so marginal statistics alone cannot score well.
AU_THRESHOLD = 0.6
#: AR(1) pole of the latent process and the observation noise level.
LATENT_RHO = 0.9
NOISE_SIGMA = 0.35
#: Fraction of frames marked invalid, mimicking unannotated stretches.
INVALID_RATE = 0.03


@dataclass(frozen=True)
class SyntheticReadout:
    """The fixed label map of the synthetic generator.

    Labels derive from three causal summaries of the stored features:

    * ``fast``  -- mean of the last :data:`FAST_WINDOW` frames;
    * ``slow``  -- mean of a :data:`SLOW_WINDOW`-frame stretch ending
      :data:`SLOW_LAG` frames back, reaching beyond what a short
      convolution stack can see;
    * ``loc``   -- mean of ``relu(x[t] - x[t - LOC_GAP])`` over
      :data:`LOC_WINDOW` frames, a rectified local-motion feature.

    VA squashes ``fast @ w_fast + SLOW_WEIGHT * slow @ w_slow +
    LOC_WEIGHT * loc @ w_loc`` through ``tanh(VA_GAIN * .)``.  EXPR takes
    the argmax of the fast component alone, keeping class runs long
    enough to recover.  AU thresholds ``fast @ w_fast + SLOW_WEIGHT *
    slow @ w_slow`` at :data:`AU_THRESHOLD`.
    """

    task: TaskKind
    w_fast: np.ndarray
    w_slow: np.ndarray
    w_loc: np.ndarray


def synthetic_readout(task: TaskKind, feature_dim: int, seed: int) -> SyntheticReadout:
    task = _as_task(task)
    rng = np.random.default_rng([seed, 424242])
    k = output_dim(task)
    scale = 1.0 / np.sqrt(feature_dim)
    w_fast = rng.standard_normal((feature_dim, k)) * scale
    w_slow = rng.standard_normal((feature_dim, k)) * scale
    w_loc = rng.standard_normal((feature_dim, k)) * scale
    return SyntheticReadout(task=task, w_fast=w_fast, w_slow=w_slow, w_loc=w_loc)


def causal_moving_average(features: np.ndarray, window: int, lag: int = 0) -> np.ndarray:
    """Mean of frames ``t-lag-window+1 .. t-lag`` (1-based, clamped at the start).

    Row ``t`` of the result depends only on rows ``<= t - lag`` of the
    input, computed in float64.
    """
    x = np.asarray(features, dtype=np.float64)
    n = x.shape[0]
    csum = np.vstack([np.zeros((1, x.shape[1])), np.cumsum(x, axis=0)])
    t = np.arange(1, n + 1)
    hi = np.maximum(t - lag, 1)
    lo = np.maximum(hi - window, 0)
    return (csum[hi] - csum[lo]) / (hi - lo)[:, None]


def rectified_difference(features: np.ndarray, gap: int = LOC_GAP) -> np.ndarray:
    """``relu(x[t] - x[t - gap])`` per channel, zero where no past exists."""
    x = np.asarray(features, dtype=np.float64)
    out = np.zeros_like(x)
    out[gap:] = np.maximum(x[gap:] - x[:-gap], 0.0)
    return out


def apply_readout(features: np.ndarray, readout: SyntheticReadout) -> np.ndarray:
    """Recompute labels from features with the published generator map.

    Returns the task's value array: VA ``(n, 2)`` floats, EXPR ``(n,)``
    class indices, AU ``(n, 12)`` binary indicators.
    """
    fast = causal_moving_average(features, FAST_WINDOW)
    if readout.task is TaskKind.EXPR:
        return np.argmax(fast @ readout.w_fast, axis=1).astype(np.int64)
    slow = causal_moving_average(features, SLOW_WINDOW, lag=SLOW_LAG)
    score = fast @ readout.w_fast + SLOW_WEIGHT * (slow @ readout.w_slow)
    if readout.task is TaskKind.AU:
        return (score >= AU_THRESHOLD).astype(np.int64)
    loc = causal_moving_average(rectified_difference(features), LOC_WINDOW)
    return np.tanh(VA_GAIN * (score + LOC_WEIGHT * (loc @ readout.w_loc)))


def generate_synthetic(task: TaskKind, n_videos: int, n_frames: int,
                       feature_dim: int, seed: int) -> list[VideoRecord]:
    """Seeded dataset whose labels are an exact known function of the features.

    Features follow a smooth AR(1) latent with added observation noise,
    stored as float32; labels come from :func:`apply_readout` on the
    stored values, so they are recomputable bit-for-bit.  Roughly
    :data:`INVALID_RATE` of frames are flagged invalid.
    """
    if min(n_videos, n_frames, feature_dim) < 1:
        raise ValueError("n_videos, n_frames and feature_dim must all be >= 1")
    task = _as_task(task)
    readout = synthetic_readout(task, feature_dim, seed)
    videos = []
    for v in range(n_videos):
        rng = np.random.default_rng([seed, 1000 + v])
        shocks = rng.standard_normal((n_frames, feature_dim))
        latent = np.empty_like(shocks)
        latent[0] = shocks[0]
        gain = np.sqrt(1.0 - LATENT_RHO ** 2)
        for t in range(1, n_frames):
            latent[t] = LATENT_RHO * latent[t - 1] + gain * shocks[t]
        noisy = latent + NOISE_SIGMA * rng.standard_normal((n_frames, feature_dim))
        features = noisy.astype(np.float32)

        values = apply_readout(features, readout)
        valid = rng.random(n_frames) >= INVALID_RATE
        valid[:2] = True
        labels = FrameLabels(task=task, values=values, valid=valid)
        videos.append(VideoRecord(video_id=f"synth_{v:03d}", features=features,
                                  labels=labels))
    return videos


def shuffle_labels(videos, seed: int) -> list[VideoRecord]:
    """Control transform: permute each video's frame labels in time.

    Label marginals survive but the feature-to-label relation is
    destroyed, so any metric earned on shuffled data reflects
    memorization or chance.
    """
    rng = np.random.default_rng([seed, 777])
    out = []
    for video in videos:
        perm = rng.permutation(video.n_frames)
        labels = FrameLabels(task=video.labels.task,
                             values=video.labels.values[perm],
                             valid=video.labels.valid[perm])
        out.append(VideoRecord(video_id=video.video_id, features=video.features,
                               labels=labels))
    return out
