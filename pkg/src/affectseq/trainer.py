"""The training loop and its satellites: folds, batching, eval, checkpoints.

One :class:`numpy.random.Generator` seeded from the optimizer config
drives everything stochastic (epoch shuffles and dropout masks), and its
state travels inside checkpoints, so a resumed run consumes the stream
exactly where the interrupted run left it.  Evaluation never touches the
generator, which keeps validation from perturbing training randomness.

History is a list of per-epoch records (epoch, lr, train loss, validation
metric); when an output directory is given the loop appends each record
to ``history.log`` and maintains ``last.ckpt`` plus a ``best.ckpt``
snapshot of the highest-validation-metric epoch.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .errors import NumericalError
from .io import Checkpoint, load_checkpoint, save_checkpoint
from .model import PipelineModel
from .objectives import EvalReport, report_from_frames, task_loss
from .optim import AdamW, OptimConfig, lr_schedule
from .segmentation import SegmentationConfig, merge_predictions, segment_dataset, split

N_FOLDS = 5


def fold_of(video_id: str, n_folds: int = N_FOLDS) -> int:
    """Deterministic fold assignment by CRC-32 of the video id."""
    if n_folds < 1:
        raise ValueError("n_folds must be at least 1")
    return zlib.crc32(video_id.encode("utf-8")) % n_folds


def fold_split(videos, val_fold: int, n_folds: int = N_FOLDS):
    """Partition videos into (train, validation) by fold index."""
    if not 0 <= val_fold < n_folds:
        raise ValueError(f"val_fold must lie in 0..{n_folds - 1}")
    train = [v for v in videos if fold_of(v.video_id, n_folds) != val_fold]
    val = [v for v in videos if fold_of(v.video_id, n_folds) == val_fold]
    return train, val


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    lr: float
    train_loss: float
    val_metric: float

    def format_line(self) -> str:
        return (f"epoch={self.epoch} lr={self.lr!r} "
                f"train_loss={self.train_loss!r} val_metric={self.val_metric!r}")


@dataclass
class TrainResult:
    model: PipelineModel
    history: list[EpochRecord]
    best_epoch: int
    best_metric: float
    best_params: dict[str, np.ndarray]


def predict_video(model: PipelineModel, video, seg_config: SegmentationConfig,
                  batch_size: int = 32) -> np.ndarray:
    """Per-frame raw outputs for one video: split, forward, merge.

    Returns a float64 ``(n_frames, output_dim)`` array; overlapping
    window outputs are averaged by the merge contract.
    """
    segments = split(video, seg_config)
    outputs = []
    with ad.no_grad():
        for lo in range(0, len(segments), batch_size):
            chunk = segments[lo:lo + batch_size]
            feats = np.stack([s.features for s in chunk]).astype(model.config.np_dtype)
            frame_valid = np.stack([s.frame_valid for s in chunk])
            out = model.forward(feats, frame_valid=frame_valid, train=False)
            outputs.extend(np.asarray(out.data[i], dtype=np.float64)
                           for i in range(len(chunk)))
    return merge_predictions(list(zip(segments, outputs)), n_frames=video.n_frames)


def evaluate_model(model: PipelineModel, videos, seg_config: SegmentationConfig,
                   batch_size: int = 32) -> EvalReport:
    """Score a model over whole videos, pooling frames across all of them."""
    if not videos:
        raise ValueError("cannot evaluate on an empty video list")
    task = model.config.task
    outputs, values, valid = [], [], []
    for video in videos:
        if video.labels.task is not task:
            raise ValueError(f"video {video.video_id} is labeled for "
                             f"{video.labels.task.value}, model expects {task.value}")
        outputs.append(predict_video(model, video, seg_config, batch_size))
        values.append(video.labels.values)
        valid.append(video.labels.valid)
    return report_from_frames(task, np.concatenate(outputs),
                              np.concatenate(values), np.concatenate(valid))


def _batch_arrays(segments, indices, dtype):
    feats = np.stack([segments[i].features for i in indices]).astype(dtype)
    frame_valid = np.stack([segments[i].frame_valid for i in indices])
    values = np.stack([segments[i].labels.values for i in indices])
    label_valid = np.stack([segments[i].labels.valid for i in indices])
    return feats, frame_valid, values, label_valid


def train(model: PipelineModel, train_videos, val_videos,
          optim_config: OptimConfig, seg_config: SegmentationConfig,
          out_dir=None, resume_from=None, stop_after_epoch=None) -> TrainResult:
    """Run the full optimization loop for one task.

    Per epoch: shuffle the training segments with the seeded generator,
    batch them, take scheduled AdamW steps on the task loss, then score
    the validation videos.  Segments whose windows contain no valid label
    frames are dropped up front since they cannot contribute to any loss.

    A non-finite training loss raises :class:`NumericalError` immediately;
    checkpoints already written (through the previous epoch) are left in
    place.

    Args:
        model: Freshly initialized (or to-be-resumed) model; trained in
            place.
        train_videos: Videos to fit.
        val_videos: Held-out videos scored once per epoch.
        optim_config: Optimizer and loop hyperparameters.
        seg_config: Window/stride used for both training and validation.
        out_dir: If given, receives ``history.log``, ``last.ckpt`` and
            ``best.ckpt``.
        resume_from: Path to a checkpoint written by a previous run with
            identical model and optimizer configs; training continues
            from the epoch after the one stored.
        stop_after_epoch: Pause the run after this (1-based) epoch while
            keeping the learning-rate schedule of the full
            ``optim_config.epochs`` plan.  Pair with ``out_dir`` and a
            later ``resume_from`` to split one training plan across
            invocations.

    Returns:
        :class:`TrainResult` with the in-place-trained model, the full
        history of this call, and a snapshot of the best-metric
        parameters.  After a resume the snapshot only reflects epochs run
        by this call; the authoritative best lives in ``best.ckpt``.
    """
    task = model.config.task
    if not train_videos:
        raise ValueError("training requires at least one video")
    if not val_videos:
        raise ValueError("validation split is empty; adjust the fold choice")
    if optim_config.warmup_epochs >= optim_config.epochs:
        raise ValueError("warmup_epochs must be smaller than epochs")
    if stop_after_epoch is not None and stop_after_epoch < 1:
        raise ValueError("stop_after_epoch must be >= 1")
    last_epoch = optim_config.epochs
    if stop_after_epoch is not None:
        last_epoch = min(last_epoch, stop_after_epoch)
    for video in list(train_videos) + list(val_videos):
        if video.labels.task is not task:
            raise ValueError(f"video {video.video_id} is labeled for "
                             f"{video.labels.task.value}, model expects {task.value}")
        if video.feature_dim != model.config.feature_dim:
            raise ValueError(f"video {video.video_id} has {video.feature_dim} feature "
                             f"dims, model expects {model.config.feature_dim}")

    segments = [s for s in segment_dataset(train_videos, seg_config)
                if s.labels.valid.any()]
    if not segments:
        raise ValueError("no training segments with valid labels")
    steps_per_epoch = math.ceil(len(segments) / optim_config.batch_size)
    total_steps = steps_per_epoch * optim_config.epochs
    warmup_steps = steps_per_epoch * optim_config.warmup_epochs

    optimizer = AdamW(model.parameters(), optim_config)
    rng = np.random.default_rng(optim_config.seed)
    start_epoch = 1
    best_metric = -math.inf
    best_epoch = 0
    best_params = {name: t.data.copy() for name, t in model.parameters()}

    if resume_from is not None:
        ckpt = load_checkpoint(resume_from)
        if ckpt.model_config != model.config:
            raise ValueError("checkpoint model config does not match the model")
        if ckpt.optim_config is not None and ckpt.optim_config != optim_config:
            raise ValueError("checkpoint optimizer config does not match")
        model.load_state_arrays(ckpt.params)
        if ckpt.optim_state is not None:
            optimizer.load_state_dict(ckpt.optim_state)
        if ckpt.rng_state is not None:
            rng.bit_generator.state = ckpt.rng_state
        start_epoch = ckpt.epoch + 1
        if ckpt.best_metric is not None:
            best_metric = ckpt.best_metric
        best_params = {name: arr.copy() for name, arr in ckpt.params.items()}

    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)

    def write_checkpoint(path, epoch, metric):
        save_checkpoint(path, Checkpoint(
            model_config=model.config,
            params={name: t.data.copy() for name, t in model.parameters()},
            epoch=epoch,
            best_metric=None if metric == -math.inf else metric,
            optim_config=optim_config,
            optim_state=optimizer.state_dict(),
            rng_state=rng.bit_generator.state,
        ))

    history: list[EpochRecord] = []
    dtype = model.config.np_dtype
    for epoch in range(start_epoch, last_epoch + 1):
        order = rng.permutation(len(segments))
        losses = []
        lr_now = 0.0
        for lo in range(0, len(order), optim_config.batch_size):
            indices = order[lo:lo + optim_config.batch_size]
            lr_now = lr_schedule(optimizer.step_count, total_steps, warmup_steps,
                                 optim_config.lr)
            feats, frame_valid, values, label_valid = _batch_arrays(
                segments, indices, dtype)
            ad.clear_tape()
            optimizer.zero_grad()
            out = model.forward(feats, frame_valid=frame_valid, train=True, rng=rng)
            loss = task_loss(task, out, values, label_valid)
            loss_value = loss.item()
            if not math.isfinite(loss_value):
                ad.clear_tape()
                raise NumericalError(
                    f"training diverged: loss {loss_value} at epoch {epoch}, "
                    f"step {optimizer.step_count + 1}"
                )
            ad.backward(loss)
            optimizer.step(lr_now)
            losses.append(loss_value)
        ad.clear_tape()

        report = evaluate_model(model, val_videos, seg_config,
                                optim_config.batch_size)
        record = EpochRecord(
            epoch=epoch,
            lr=lr_now,
            train_loss=float(np.mean(losses)),
            val_metric=float(report.primary_metric),
        )
        history.append(record)

        improved = record.val_metric > best_metric
        if improved:
            best_metric = record.val_metric
            best_epoch = epoch
            best_params = {name: t.data.copy() for name, t in model.parameters()}
        if out_dir is not None:
            with open(out_dir / "history.log", "a", encoding="ascii") as fh:
                fh.write(record.format_line() + "\n")
            write_checkpoint(out_dir / "last.ckpt", epoch, best_metric)
            if improved:
                write_checkpoint(out_dir / "best.ckpt", epoch, best_metric)

    return TrainResult(model=model, history=history, best_epoch=best_epoch,
                       best_metric=best_metric, best_params=best_params)
