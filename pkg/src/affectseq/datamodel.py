"""Core domain types: tasks, per-frame labels, videos, and window segments.

All values here are immutable after construction (frozen dataclasses holding
read-only numpy arrays), so they can be shared freely across threads.  Frame
indices are 1-based throughout the package; the only 0-based indexing happens
inside array slicing at the I/O boundary.

Annotation validity is an explicit boolean mask.  Sentinel codes from source
files are translated to ``valid=False`` during ingestion and never reappear
in-band, so losses and metrics never have to branch on magic values.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

#: Categorical expression labels, in class-index order 0..7.
EXPRESSION_CLASSES = (
    "anger", "disgust", "fear", "happiness",
    "sadness", "surprise", "neutral", "other",
)

#: Facial action units modeled as independent binary detectors.
ACTION_UNITS = (1, 2, 4, 6, 7, 10, 12, 15, 23, 24, 25, 26)


class TaskKind(Enum):
    """The three prediction tasks supported by the pipeline."""

    VA = "va"
    EXPR = "expr"
    AU = "au"

    @classmethod
    def from_string(cls, name: str) -> "TaskKind":
        try:
            return cls(name.strip().lower())
        except ValueError:
            raise ValueError(f"unknown task {name!r}; expected one of va, expr, au") from None


_OUTPUT_DIMS = {
    TaskKind.VA: 2,
    TaskKind.EXPR: len(EXPRESSION_CLASSES),
    TaskKind.AU: len(ACTION_UNITS),
}


def output_dim(task: TaskKind) -> int:
    """Per-frame output dimensionality of a task: VA 2, EXPR 8, AU 12."""
    return _OUTPUT_DIMS[task]


def _frozen(arr: np.ndarray) -> np.ndarray:
    out = np.array(arr, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class FrameLabels:
    """Per-frame annotations for one task, with an explicit validity mask.

    Attributes:
        task: Which task these labels belong to.
        values: Per-frame label array.  Shape depends on the task:
            VA ``(n, 2)`` floats in [-1, 1]; EXPR ``(n,)`` class indices in
            0..7; AU ``(n, 12)`` binary indicators.
        valid: ``(n,)`` boolean mask; ``False`` frames are excluded from
            every loss and metric.  Values at invalid frames are
            unconstrained.
    """

    task: TaskKind
    values: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        valid = np.asarray(self.valid, dtype=bool)
        if valid.ndim != 1:
            raise ValueError(f"valid mask must be 1-D, got shape {valid.shape}")
        n = valid.shape[0]

        if self.task is TaskKind.VA:
            values = np.asarray(self.values, dtype=np.float64)
            if values.shape != (n, 2):
                raise ValueError(f"VA values must have shape ({n}, 2), got {values.shape}")
            checked = values[valid]
            if checked.size and (np.abs(checked) > 1.0).any():
                raise ValueError("valid VA values must lie in [-1, 1]")
        elif self.task is TaskKind.EXPR:
            values = np.asarray(self.values)
            if values.shape != (n,):
                raise ValueError(f"EXPR values must have shape ({n},), got {values.shape}")
            values = values.astype(np.int64)
            checked = values[valid]
            if checked.size and ((checked < 0) | (checked >= len(EXPRESSION_CLASSES))).any():
                raise ValueError("valid EXPR class indices must lie in 0..7")
        elif self.task is TaskKind.AU:
            values = np.asarray(self.values)
            if values.shape != (n, len(ACTION_UNITS)):
                raise ValueError(
                    f"AU values must have shape ({n}, {len(ACTION_UNITS)}), got {values.shape}"
                )
            values = values.astype(np.int64)
            checked = values[valid]
            if checked.size and not np.isin(checked, (0, 1)).all():
                raise ValueError("valid AU indicators must be 0 or 1")
        else:  # pragma: no cover
            raise ValueError(f"unknown task {self.task!r}")

        object.__setattr__(self, "values", _frozen(values))
        object.__setattr__(self, "valid", _frozen(valid))

    def __len__(self) -> int:
        return self.valid.shape[0]


@dataclass(frozen=True)
class VideoRecord:
    """One video's precomputed per-frame features plus its labels.

    Attributes:
        video_id: Stable identifier; also the stem of the on-disk files.
        features: ``(n_frames, feature_dim)`` float matrix.
        labels: Per-frame labels of length ``n_frames``.
    """

    video_id: str
    features: np.ndarray
    labels: FrameLabels

    def __post_init__(self):
        features = np.asarray(self.features)
        if features.ndim != 2:
            raise ValueError(f"features must be 2-D, got shape {features.shape}")
        if not np.issubdtype(features.dtype, np.floating):
            features = features.astype(np.float32)
        if features.shape[0] < 1:
            raise ValueError("a video must contain at least one frame")
        if len(self.labels) != features.shape[0]:
            raise ValueError(
                f"label count {len(self.labels)} does not match frame count {features.shape[0]}"
            )
        object.__setattr__(self, "features", _frozen(features))

    @property
    def n_frames(self) -> int:
        return self.features.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True)
class Segment:
    """A fixed-length window of frames cut from one video.

    Window length is identical for every segment; when the window reaches
    past the end of the video the tail is zero-padded and flagged in
    ``frame_valid``.  Padding therefore only ever forms a suffix.

    Attributes:
        video_id: Source video.
        index: 1-based segment ordinal within the video.
        start_frame: 1-based index of the first frame in the window.
        features: ``(window, feature_dim)`` feature slice, zero-padded.
        frame_valid: ``(window,)`` mask, ``False`` at padded tail positions.
        labels: Label slice aligned to the window; padded positions carry
            ``valid=False``.
    """

    video_id: str
    index: int
    start_frame: int
    features: np.ndarray
    frame_valid: np.ndarray
    labels: FrameLabels

    def __post_init__(self):
        if self.index < 1:
            raise ValueError("segment index is 1-based")
        if self.start_frame < 1:
            raise ValueError("start_frame is 1-based")
        features = np.asarray(self.features)
        frame_valid = np.asarray(self.frame_valid, dtype=bool)
        if features.ndim != 2:
            raise ValueError("segment features must be 2-D")
        window = features.shape[0]
        if frame_valid.shape != (window,):
            raise ValueError("frame_valid length must equal the window length")
        if not frame_valid[0]:
            raise ValueError("a segment must contain at least one real frame")
        # Non-increasing mask <=> all padding sits at the tail.
        if (np.diff(frame_valid.astype(np.int8)) > 0).any():
            raise ValueError("frame_valid must be a prefix-true/suffix-false pattern")
        if len(self.labels) != window:
            raise ValueError("segment labels must cover the full window")
        object.__setattr__(self, "features", _frozen(features))
        object.__setattr__(self, "frame_valid", _frozen(frame_valid))

    @property
    def window(self) -> int:
        return self.features.shape[0]

    @property
    def n_real_frames(self) -> int:
        return int(self.frame_valid.sum())
