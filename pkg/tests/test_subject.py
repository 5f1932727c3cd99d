import numpy as np
import pytest

from burst_io import Frame
from models import BurstManifest, FaceRegion
from subject import (
    build_subject_map,
    combine_subject_weights,
    face_signal,
    largest_face,
    load_or_synthesize_saliency,
    smootherstep,
    threshold_saliency,
)


def test_smootherstep_endpoints_and_midpoint():
    assert smootherstep(0.0) == 0.0
    assert smootherstep(1.0) == 1.0
    assert smootherstep(0.5) == pytest.approx(0.5)
    assert smootherstep(-3.0) == 0.0
    assert smootherstep(4.0) == 1.0


def test_threshold_zeroes_low_values_and_renormalizes():
    s = np.array([[0.1, 0.42, 0.43], [0.5, 0.8, 0.0]], dtype=np.float32)
    out = threshold_saliency(s)
    assert out[0, 0] == 0.0 and out[0, 1] == 0.0 and out[1, 2] == 0.0
    assert out.max() == pytest.approx(1.0)
    assert out[1, 0] == pytest.approx(0.5 / 0.8)


def test_threshold_of_empty_saliency_stays_zero():
    assert threshold_saliency(np.full((3, 3), 0.2)).max() == 0.0


def test_face_signal_feathering():
    region = FaceRegion(center=(20.0, 10.0), inner_radius=3.0, outer_radius=6.0)
    f = face_signal([region], (21, 41))
    assert f[10, 20] == pytest.approx(1.0)
    assert f[10, 22] == pytest.approx(1.0)
    assert f[10, 27] == 0.0
    assert 0.0 < f[10, 24] < 1.0
    assert f[10, 24] == pytest.approx(smootherstep((6.0 - 4.0) / 3.0))


def test_face_signal_masked_by_segmentation():
    region = FaceRegion(center=(5.0, 5.0), inner_radius=2.0, outer_radius=4.0)
    segmentation = np.zeros((11, 11))
    segmentation[:, :5] = 1.0
    f = face_signal([region], (11, 11), segmentation)
    assert f[5, 4] == pytest.approx(1.0)
    assert f[5, 6] == 0.0


def test_face_region_radii_validated():
    with pytest.raises(ValueError):
        FaceRegion(center=(0.0, 0.0), inner_radius=5.0, outer_radius=5.0)


def test_combined_weights():
    s = np.array([[0.0, 0.5, 1.0]], dtype=np.float32)
    f = np.array([[1.0, 1.0, 0.0]], dtype=np.float32)
    w = combine_subject_weights(s, f)
    # raw weights 0, 1.0, 1.0
    assert w.tolist() == pytest.approx([[0.0, 1.0, 1.0]])
    assert combine_subject_weights(np.zeros((2, 2)), np.ones((2, 2))).max() == 0.0
    with pytest.raises(ValueError):
        combine_subject_weights(np.zeros((2, 2)), np.zeros((3, 3)))


def test_largest_face_keeps_earliest_on_tie():
    first = FaceRegion(center=(1.0, 1.0), inner_radius=1.0, outer_radius=4.0)
    second = FaceRegion(center=(9.0, 9.0), inner_radius=1.0, outer_radius=4.0)
    third = FaceRegion(center=(5.0, 5.0), inner_radius=1.0, outer_radius=3.0)
    assert largest_face([first, second, third]) is first
    assert largest_face([]) is None


def test_saliency_shape_must_match():
    frame = Frame(pixels=np.zeros((10, 12, 3), dtype=np.float32), level="low")
    with pytest.raises(ValueError):
        load_or_synthesize_saliency(frame, np.zeros((12, 10)))


def test_default_saliency_peaks_at_centre():
    frame = Frame(pixels=np.zeros((21, 31, 3), dtype=np.float32), level="low")
    s = load_or_synthesize_saliency(frame)
    assert s[10, 15] == pytest.approx(1.0)
    assert s[0, 0] < s[10, 15]


def test_background_mode_weights_only_largest_face():
    frame = Frame(pixels=np.zeros((40, 60, 3), dtype=np.float32), level="low")
    small = FaceRegion(center=(10.0, 20.0), inner_radius=2.0, outer_radius=4.0)
    large = FaceRegion(center=(45.0, 20.0), inner_radius=3.0, outer_radius=8.0)
    manifest = BurstManifest(frame_paths=["a.png", "b.png"], faces=[small, large])

    both = build_subject_map(frame, manifest, largest_face_only=False)
    largest = build_subject_map(frame, manifest, largest_face_only=True)
    assert both.f[20, 10] == pytest.approx(1.0)
    assert largest.f[20, 10] == 0.0
    assert largest.f[20, 45] == pytest.approx(1.0)


def test_faces_can_be_disabled():
    frame = Frame(pixels=np.zeros((40, 60, 3), dtype=np.float32), level="low")
    face = FaceRegion(center=(30.0, 20.0), inner_radius=2.0, outer_radius=4.0)
    manifest = BurstManifest(frame_paths=["a.png", "b.png"], faces=[face])
    subject = build_subject_map(frame, manifest, use_faces=False)
    assert subject.f.max() == 0.0
    assert np.allclose(subject.w, subject.s)
