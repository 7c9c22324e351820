"""Invariants of the frozen label/video/segment containers."""

import numpy as np
import pytest

from affectseq.datamodel import (ACTION_UNITS, EXPRESSION_CLASSES, FrameLabels,
                                 Segment, TaskKind, VideoRecord, output_dim)


def make_labels(task, n, rng):
    if task is TaskKind.VA:
        values = rng.uniform(-1.0, 1.0, size=(n, 2))
    elif task is TaskKind.EXPR:
        values = rng.integers(0, 8, size=n)
    else:
        values = rng.integers(0, 2, size=(n, 12))
    return FrameLabels(task=task, values=values, valid=np.ones(n, dtype=bool))


def test_output_dims():
    assert output_dim(TaskKind.VA) == 2
    assert output_dim(TaskKind.EXPR) == len(EXPRESSION_CLASSES) == 8
    assert output_dim(TaskKind.AU) == len(ACTION_UNITS) == 12


def test_task_from_string_round_trip():
    for task in TaskKind:
        assert TaskKind.from_string(task.value) is task
        assert TaskKind.from_string(task.value.upper()) is task
    with pytest.raises(ValueError):
        TaskKind.from_string("sentiment")


def test_labels_value_ranges_enforced():
    ok = np.ones(3, dtype=bool)
    with pytest.raises(ValueError):
        FrameLabels(task=TaskKind.VA, values=[[0.0, 1.5], [0, 0], [0, 0]], valid=ok)
    with pytest.raises(ValueError):
        FrameLabels(task=TaskKind.EXPR, values=[0, 8, 1], valid=ok)
    with pytest.raises(ValueError):
        FrameLabels(task=TaskKind.AU, values=np.full((3, 12), 2), valid=ok)


def test_labels_invalid_frames_unconstrained():
    """Out-of-range values are legal wherever valid=False."""
    valid = np.array([True, False, True])
    labels = FrameLabels(task=TaskKind.VA,
                         values=[[0.5, -0.5], [9.0, -9.0], [0.0, 0.0]],
                         valid=valid)
    assert labels.values[1, 0] == 9.0
    labels = FrameLabels(task=TaskKind.EXPR, values=[3, -1, 7], valid=valid)
    assert labels.values[1] == -1


def test_labels_shape_mismatch_rejected():
    with pytest.raises(ValueError):
        FrameLabels(task=TaskKind.VA, values=np.zeros((4, 3)),
                    valid=np.ones(4, dtype=bool))
    with pytest.raises(ValueError):
        FrameLabels(task=TaskKind.AU, values=np.zeros((4, 11), dtype=int),
                    valid=np.ones(4, dtype=bool))


def test_containers_are_frozen():
    rng = np.random.default_rng(0)
    labels = make_labels(TaskKind.VA, 5, rng)
    video = VideoRecord(video_id="v", features=rng.standard_normal((5, 3)),
                        labels=labels)
    with pytest.raises(ValueError):
        labels.values[0, 0] = 0.0
    with pytest.raises(ValueError):
        video.features[0, 0] = 0.0


def test_video_label_count_must_match_frames():
    rng = np.random.default_rng(1)
    labels = make_labels(TaskKind.EXPR, 4, rng)
    with pytest.raises(ValueError):
        VideoRecord(video_id="v", features=rng.standard_normal((5, 3)),
                    labels=labels)


def test_video_shape_properties():
    rng = np.random.default_rng(2)
    video = VideoRecord(video_id="v", features=rng.standard_normal((7, 11)),
                        labels=make_labels(TaskKind.AU, 7, rng))
    assert video.n_frames == 7
    assert video.feature_dim == 11


def test_segment_padding_must_be_a_suffix():
    rng = np.random.default_rng(3)
    feats = rng.standard_normal((4, 2))
    labels = make_labels(TaskKind.VA, 4, rng)

    Segment(video_id="v", index=1, start_frame=1, features=feats,
            frame_valid=[True, True, False, False], labels=labels)
    with pytest.raises(ValueError):
        Segment(video_id="v", index=1, start_frame=1, features=feats,
                frame_valid=[True, False, True, False], labels=labels)
    with pytest.raises(ValueError):
        Segment(video_id="v", index=1, start_frame=1, features=feats,
                frame_valid=[False, False, False, False], labels=labels)


def test_segment_window_properties():
    rng = np.random.default_rng(4)
    seg = Segment(video_id="v", index=2, start_frame=9,
                  features=rng.standard_normal((6, 3)),
                  frame_valid=[True] * 4 + [False] * 2,
                  labels=make_labels(TaskKind.EXPR, 6, rng))
    assert seg.window == 6
    assert seg.n_real_frames == 4
