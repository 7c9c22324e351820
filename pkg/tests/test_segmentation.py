"""Windowing against a brute-force coverage enumerator, plus merge behavior."""

import numpy as np
import pytest

from affectseq.datamodel import FrameLabels, TaskKind, VideoRecord
from affectseq.segmentation import (SegmentationConfig, merge_predictions,
                                    nominal_segment_count, segment_dataset,
                                    split)


def va_video(n, rng, video_id="vid", dim=3):
    values = rng.uniform(-1.0, 1.0, size=(n, 2))
    valid = rng.random(n) >= 0.1
    labels = FrameLabels(task=TaskKind.VA, values=values, valid=valid)
    return VideoRecord(video_id=video_id,
                       features=rng.standard_normal((n, dim)), labels=labels)


def test_config_rejects_bad_stride():
    with pytest.raises(ValueError):
        SegmentationConfig(window=10, stride=0)
    with pytest.raises(ValueError):
        SegmentationConfig(window=10, stride=11)


def test_split_shapes_and_padding():
    rng = np.random.default_rng(0)
    video = va_video(10, rng)
    segments = split(video, SegmentationConfig(window=6, stride=4))

    assert [s.start_frame for s in segments] == [1, 5, 9]
    for seg in segments:
        assert seg.features.shape == (6, 3)
    # 10 frames, last window starts at 9: frames 9..10 real, 4 padded.
    tail = segments[-1]
    assert tail.n_real_frames == 2
    assert not tail.frame_valid[2:].any()
    assert not tail.labels.valid[2:].any()
    assert (tail.features[2:] == 0).all()


def test_split_exhaustive_against_brute_force():
    """Every frame covered; count within the documented bound; starts exact.

    The oracle enumerates window starts directly for every (n, w, s) with
    n <= 50 and 1 <= s <= w <= 10.
    """
    rng = np.random.default_rng(1)
    for n in range(1, 51):
        video = va_video(n, rng)
        for w in range(1, 11):
            for s in range(1, w + 1):
                segments = split(video, SegmentationConfig(window=w, stride=s))

                expected_starts = [k * s + 1 for k in range(nominal_segment_count(n, s))
                                   if k * s + 1 <= n]
                assert [g.start_frame for g in segments] == expected_starts
                assert len(segments) <= n // s + 1

                covered = np.zeros(n, dtype=bool)
                for g in segments:
                    covered[g.start_frame - 1 : g.start_frame - 1 + g.n_real_frames] = True
                assert covered.all(), (n, w, s)


def test_split_then_merge_is_identity_on_labels():
    """Feeding each segment's own label values through merge returns the video's."""
    rng = np.random.default_rng(2)
    for trial in range(20):
        n = int(rng.integers(1, 40))
        w = int(rng.integers(1, 9))
        s = int(rng.integers(1, w + 1))
        video = va_video(n, rng)
        segments = split(video, SegmentationConfig(window=w, stride=s))
        merged = merge_predictions([(g, g.labels.values) for g in segments],
                                   n_frames=n)
        assert np.allclose(merged, video.labels.values, atol=1e-12)


def test_merge_averages_overlapping_windows():
    rng = np.random.default_rng(3)
    video = va_video(6, rng)
    segments = split(video, SegmentationConfig(window=4, stride=2))
    outputs = [np.full((4, 2), float(i + 1)) for i in range(len(segments))]
    merged = merge_predictions(list(zip(segments, outputs)), n_frames=6)
    # Frames 3..4 are covered by segments 1 and 2, frames 5..6 by 2 and 3.
    assert np.allclose(merged[:2], 1.0)
    assert np.allclose(merged[2:4], 1.5)
    assert np.allclose(merged[4:6], 2.5)


def test_merge_is_order_independent():
    rng = np.random.default_rng(4)
    video = va_video(17, rng)
    segments = split(video, SegmentationConfig(window=5, stride=3))
    pairs = [(g, rng.standard_normal((5, 2))) for g in segments]
    forward = merge_predictions(pairs, n_frames=17)
    backward = merge_predictions(pairs[::-1], n_frames=17)
    assert np.array_equal(forward, backward)


def test_merge_rejects_uncovered_frames():
    rng = np.random.default_rng(5)
    video = va_video(12, rng)
    segments = split(video, SegmentationConfig(window=4, stride=4))
    with pytest.raises(ValueError, match="frame 5"):
        merge_predictions([(segments[0], np.zeros((4, 2)))], n_frames=12)


def test_segment_dataset_flattens_in_order():
    rng = np.random.default_rng(6)
    videos = [va_video(9, rng, video_id=f"v{i}") for i in range(3)]
    segments = segment_dataset(videos, SegmentationConfig(window=5, stride=5))
    assert [g.video_id for g in segments] == ["v0", "v0", "v1", "v1", "v2", "v2"]
