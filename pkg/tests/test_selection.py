import numpy as np
import pytest

from alignment import AlignmentSolution, Similarity2D
from conftest import low_frames, make_texture, moving_trackset
from models import SelectionPolicy
from selection import apply_capture_plan, estimate_scene_velocity, plan_capture, select_frames
from utils import SelectionError

FOREGROUND = SelectionPolicy.for_mode("foreground_blur")


def _identity(frames, width, height):
    return AlignmentSolution(
        mode="foreground_blur",
        similarities=[Similarity2D() for _ in range(frames)],
        meshes=[None] * frames,
        frame_indices=list(range(frames)),
        width=width,
        height=height,
    )


class TestPlanCapture:
    def test_one_percent_per_frame(self):
        plan = plan_capture(1.0, FOREGROUND)
        assert plan.duration_s == pytest.approx(1.0)
        assert plan.stride == 3
        assert plan.selected_indices == list(range(0, 31, 3))

    def test_static_scene_gets_longest_capture(self):
        plan = plan_capture(0.0, FOREGROUND)
        assert plan.duration_s == 7.0
        assert plan.stride == 20
        assert len(plan.selected_indices) == 11

    def test_fast_scene_uses_consecutive_frames(self):
        plan = plan_capture(10.0, FOREGROUND)
        assert plan.stride == 1
        assert plan.selected_indices == [0, 1, 2, 3]

    def test_negative_velocity(self):
        with pytest.raises(ValueError):
            plan_capture(-1.0, FOREGROUND)


class TestApplyCapturePlan:
    def test_walks_back_from_base(self):
        assert apply_capture_plan(plan_capture(1.0, FOREGROUND), 8, 7, "foreground_blur") == [7, 4, 1]

    def test_foreground_base_at_start_walks_forward(self):
        assert apply_capture_plan(plan_capture(1.0, FOREGROUND), 8, 0, "foreground_blur") == [0, 3, 6]

    def test_background_needs_past_frames(self):
        with pytest.raises(SelectionError):
            apply_capture_plan(plan_capture(1.0, FOREGROUND), 8, 0, "background_blur")

    def test_stride_shrinks_for_short_burst(self):
        plan = plan_capture(0.0, FOREGROUND)
        assert apply_capture_plan(plan, 8, 7, "foreground_blur") == [7, 6, 5, 4, 3, 2, 1, 0]


class TestSelectFrames:
    # 96 x 128 has a diagonal of 160 px
    def test_stops_when_trail_reaches_target(self):
        track_set = moving_trackset(np.array([[10.0, 10.0], [20.0, 40.0]]), (6.4, 0.0), 14, width=96, height=128)
        count, length, forced = select_frames(track_set, _identity(14, 96, 128), FOREGROUND)
        assert count == 9
        assert length == pytest.approx(32.0)
        assert not forced

    def test_max_frames_forces_stop(self):
        track_set = moving_trackset(np.array([[10.0, 10.0]]), (1.6, 0.0), 14, width=96, height=128)
        count, length, forced = select_frames(track_set, _identity(14, 96, 128), FOREGROUND)
        assert (count, forced) == (12, True)
        assert length == pytest.approx(11.0)

    def test_short_burst_uses_everything(self):
        track_set = moving_trackset(np.array([[10.0, 10.0]]), (1.6, 0.0), 4, width=96, height=128)
        count, length, forced = select_frames(track_set, _identity(4, 96, 128), FOREGROUND)
        assert (count, forced) == (4, True)
        assert length == pytest.approx(3.0)


class TestSceneVelocity:
    def test_moving_patch_over_static_background(self):
        background = make_texture(96, 128, seed=21)
        patch = make_texture(40, 40, seed=9)
        images = []
        for i in range(5):
            image = background.copy()
            x0 = 30 + 3 * i
            image[30:70, x0:x0 + 40] = patch
            images.append(image)
        velocity = estimate_scene_velocity(low_frames(images), FOREGROUND, rng=0)
        assert 1.5 <= velocity <= 2.3

    def test_needs_velocity_window(self, texture):
        with pytest.raises(SelectionError):
            estimate_scene_velocity(low_frames([texture] * 4), FOREGROUND)
