"""Overlapping-window segmentation and per-frame prediction merging.

A video of ``n`` frames is cut into windows of fixed length starting every
``stride`` frames, so the nominal segment count is ``floor(n / stride) + 1``.
Segments whose start would fall past the last frame contain no real data and
are dropped; the emitted count is therefore ``ceil(n / stride)``.  Because
``stride <= window``, consecutive windows overlap and every frame is covered
by at least one segment.

Merging goes the other way: per-segment predictions (raw model outputs,
before any argmax/thresholding) are averaged per frame over all segments
that cover the frame with real data, which restores one row per video frame.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .datamodel import FrameLabels, Segment, TaskKind, VideoRecord


@dataclass(frozen=True)
class SegmentationConfig:
    """Window and stride, in frames.  Defaults give 100-frame overlap."""

    window: int = 300
    stride: int = 200

    def __post_init__(self):
        if self.stride < 1:
            raise ValueError("stride must be at least 1")
        if self.stride > self.window:
            raise ValueError(
                f"stride {self.stride} exceeds window {self.window}; "
                "overlapping segmentation requires stride <= window"
            )


def nominal_segment_count(n_frames: int, stride: int) -> int:
    """Segment count before dropping windows that start past the video end."""
    return n_frames // stride + 1


def split(video: VideoRecord, cfg: SegmentationConfig) -> list[Segment]:
    """Cut a video into overlapping fixed-length segments.

    Zero-pads the tail of the final window(s) and marks padded positions in
    ``frame_valid`` and in the label mask, so padding cannot leak into
    losses, metrics, or merged predictions.
    """
    n = video.n_frames
    if n < 1:
        raise ValueError("cannot split an empty video")
    window, stride = cfg.window, cfg.stride

    segments = []
    for index in range(1, nominal_segment_count(n, stride) + 1):
        start = (index - 1) * stride + 1
        if start > n:
            break  # window holds no real frames
        real = min(window, n - start + 1)

        features = np.zeros((window, video.feature_dim), dtype=video.features.dtype)
        features[:real] = video.features[start - 1 : start - 1 + real]

        frame_valid = np.zeros(window, dtype=bool)
        frame_valid[:real] = True

        values = np.zeros((window,) + video.labels.values.shape[1:], video.labels.values.dtype)
        values[:real] = video.labels.values[start - 1 : start - 1 + real]
        valid = np.zeros(window, dtype=bool)
        valid[:real] = video.labels.valid[start - 1 : start - 1 + real]

        segments.append(
            Segment(
                video_id=video.video_id,
                index=index,
                start_frame=start,
                features=features,
                frame_valid=frame_valid,
                labels=FrameLabels(task=video.labels.task, values=values, valid=valid),
            )
        )
    return segments


def merge_predictions(
    per_segment: Sequence[tuple[Segment, np.ndarray]],
    n_frames: int | None = None,
) -> np.ndarray:
    """Average per-segment outputs back into one ``(n_frames, d)`` matrix.

    Each frame's row is the arithmetic mean of the rows predicted for it by
    every segment that covers it with ``frame_valid=True``; padded positions
    contribute nothing.  Segments are accumulated in ``start_frame`` order,
    which makes the result independent of the order of ``per_segment``.

    Raises:
        ValueError: if shapes disagree, or a frame in ``1..n_frames`` is
            covered by no segment.
    """
    if not per_segment:
        raise ValueError("merge_predictions needs at least one segment")

    ordered = sorted(per_segment, key=lambda item: item[0].start_frame)
    d = ordered[0][1].shape[1]
    if n_frames is None:
        n_frames = max(seg.start_frame - 1 + seg.n_real_frames for seg, _ in ordered)

    total = np.zeros((n_frames, d), dtype=np.float64)
    count = np.zeros(n_frames, dtype=np.int64)
    for seg, outputs in ordered:
        outputs = np.asarray(outputs)
        if outputs.shape != (seg.window, d):
            raise ValueError(
                f"segment output shape {outputs.shape} does not match (window, d) = "
                f"({seg.window}, {d})"
            )
        real = seg.n_real_frames
        rows = slice(seg.start_frame - 1, seg.start_frame - 1 + real)
        total[rows] += outputs[:real]
        count[rows] += 1

    if (count == 0).any():
        missing = int(np.flatnonzero(count == 0)[0]) + 1
        raise ValueError(f"frame {missing} is covered by no segment")
    return total / count[:, None]


def segment_dataset(videos: Sequence[VideoRecord], cfg: SegmentationConfig) -> list[Segment]:
    """Split every video and return the flattened segment list."""
    out: list[Segment] = []
    for video in videos:
        out.extend(split(video, cfg))
    return out
