import logging
import math
from typing import List, Optional, Tuple, Union

import numpy as np

import config
from alignment import AlignmentSolution, align_foreground
from burst_io import Frame
from models import CapturePlan, SelectionPolicy
from tracking import TrackSet, track_features, track_length_diag_pct
from utils import SelectionError, percentile

logger = logging.getLogger(__name__)


def estimate_scene_velocity(
    frames: List[Frame],
    policy: SelectionPolicy,
    weight_map: Optional[np.ndarray] = None,
    rng: Union[np.random.Generator, int, None] = None,
) -> float:
    """
    Blur trail growth per frame, in percent of the image diagonal.

    A light version of the full pipeline: features are tracked over the
    viewfinder frames closest to the base, the frames are aligned with
    global similarities only, and the policy percentile of the aligned
    per-frame step lengths is returned.

    Args:
        frames: Low-resolution frames in processing order, base first
        policy: Selection policy of the mode, for the percentile
        weight_map: Optional track weight map
        rng: Generator or seed for feature spawning

    Returns:
        float: Velocity in percent of the diagonal per frame

    Raises:
        SelectionError: If fewer than VELOCITY_WINDOW_FRAMES frames are given
    """
    if len(frames) < config.VELOCITY_WINDOW_FRAMES:
        raise SelectionError(
            f"Velocity estimation needs {config.VELOCITY_WINDOW_FRAMES} frames, got {len(frames)}"
        )
    window = frames[:config.VELOCITY_WINDOW_FRAMES]
    track_set = track_features(window, weight_map=weight_map, rng=rng)
    solution = align_foreground(track_set, with_mesh=False)

    steps = []
    for track in track_set.tracks:
        positions = np.flatnonzero(track.valid)
        aligned = np.vstack([solution.map_points(int(p), track.points[p][None, :]) for p in positions])
        steps.extend(np.linalg.norm(np.diff(aligned, axis=0), axis=1) / np.diff(positions))
    velocity = 100.0 * percentile(steps, policy.percentile) / track_set.diagonal
    logger.info(f"Scene velocity {velocity:.3f}% of diagonal per frame from {len(track_set.tracks)} tracks")
    return velocity


def plan_capture(
    velocity: float,
    policy: SelectionPolicy,
    frame_rate_hz: float = config.FRAME_RATE_HZ,
) -> CapturePlan:
    """
    Capture length and frame stride that reach the trail target under
    constant velocity.

    The duration is capped at MAX_CAPTURE_DURATION_S; a static scene gets
    the cap. The stride spreads at most policy.max_frames frames evenly
    over the capture.

    Raises:
        ValueError: If velocity is negative
    """
    if velocity < 0:
        raise ValueError(f"Velocity must not be negative, got {velocity}")
    if velocity > 0:
        duration = min(policy.target_pct_diag / (velocity * frame_rate_hz), config.MAX_CAPTURE_DURATION_S)
    else:
        duration = config.MAX_CAPTURE_DURATION_S

    span = max(math.ceil(duration * frame_rate_hz - 1e-9), 1)
    stride = max(1, math.ceil(span / (policy.max_frames - 1)))
    plan = CapturePlan(
        duration_s=duration,
        stride=stride,
        span_frames=span,
        selected_indices=list(range(0, span + 1, stride)),
    )
    logger.info(f"Capture plan: {duration:.2f}s, stride {stride}, {len(plan.selected_indices)} frames")
    return plan


def apply_capture_plan(plan: CapturePlan, frame_count: int, base_index: int, mode: str) -> List[int]:
    """
    Burst indices to process, base first and then into the past.

    The plan's frame offsets count back from the base. Background blur
    only ever uses past frames. In foreground mode a base at the start of
    the burst walks forward instead. When the burst is too short for two
    planned frames the stride shrinks to fit what is available.

    Raises:
        SelectionError: If background blur has no frame before the base
    """
    if not 0 <= base_index < frame_count:
        raise ValueError(f"base_index {base_index} out of range for {frame_count} frames")
    direction = -1
    available = base_index
    if available == 0:
        if mode == "background_blur":
            raise SelectionError("Background blur needs frames captured before the base frame")
        direction, available = 1, frame_count - 1 - base_index

    offsets = [offset for offset in plan.selected_indices if offset <= available]
    if len(offsets) < 2:
        stride = max(1, math.ceil(available / (len(plan.selected_indices) - 1)))
        offsets = list(range(0, available + 1, stride))
        logger.warning(f"Burst too short for stride {plan.stride}, using stride {stride}")
    elif len(offsets) < len(plan.selected_indices):
        logger.warning(f"Burst holds {len(offsets)} of {len(plan.selected_indices)} planned frames")
    return [base_index + direction * offset for offset in offsets]


def selection_satisfied(
    track_set: TrackSet,
    transforms: AlignmentSolution,
    policy: SelectionPolicy,
) -> Tuple[bool, float]:
    """
    Whether the processed frames already give a long enough blur trail.

    The trail length is the policy percentile of the aligned polyline
    lengths of all tracks. Reaching policy.max_frames also ends selection.

    Returns:
        Tuple[bool, float]: Stop flag and current trail length in percent of the diagonal
    """
    lengths = [track_length_diag_pct(track, transforms, track_set.diagonal) for track in track_set.tracks]
    length = percentile(lengths, policy.percentile)
    done = length >= policy.target_pct_diag or track_set.num_frames >= policy.max_frames
    return done, length


def select_frames(
    track_set: TrackSet,
    solution: AlignmentSolution,
    policy: SelectionPolicy,
) -> Tuple[int, float, bool]:
    """
    Smallest processing-order prefix whose trail reaches the target.

    Returns:
        Tuple[int, float, bool]: Frame count, trail length and whether the
        stop was forced by max_frames or the end of the burst
    """
    length = 0.0
    for count in range(2, track_set.num_frames + 1):
        prefix = track_set.truncate(count)
        done, length = selection_satisfied(prefix, solution.truncate(count), policy)
        logger.debug(f"{count} frames: trail {length:.2f}% of diagonal")
        if done:
            forced = length < policy.target_pct_diag
            logger.info(f"Selected {count} frames, trail {length:.2f}% of diagonal{' (forced)' if forced else ''}")
            return count, length, forced
    logger.info(f"Burst ended before the trail target, using all {track_set.num_frames} frames")
    return track_set.num_frames, length, True
