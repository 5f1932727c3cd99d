import logging
import math
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Tuple, Union

import cv2
import numpy as np

import config
from burst_io import Frame, linear_to_srgb
from utils import bilinear_sample, image_diagonal, log_stage, luminance

logger = logging.getLogger(__name__)

LK_PARAMS = dict(
    winSize=(config.TRACK_WINDOW_PX, config.TRACK_WINDOW_PX),
    maxLevel=config.TRACK_PYRAMID_LEVELS - 1,
    criteria=(cv2.TERM_CRITERIA_EPS | cv2.TERM_CRITERIA_COUNT, 30, 0.01),
)


@dataclass
class Track:
    """
    Feature trajectory over the processed frames.

    points holds one (x, y) row per processed frame, NaN where the track
    is not valid. A track is valid on one contiguous span.
    """

    points: np.ndarray
    weight: float
    valid: np.ndarray

    @property
    def span(self) -> Tuple[int, int]:
        positions = np.flatnonzero(self.valid)
        return int(positions[0]), int(positions[-1])

    @property
    def valid_count(self) -> int:
        return int(self.valid.sum())

    def truncate(self, count: int) -> "Track":
        return Track(points=self.points[:count].copy(), weight=self.weight, valid=self.valid[:count].copy())

    def mean_velocity(self) -> np.ndarray:
        first, last = self.span
        return (self.points[last] - self.points[first]) / max(last - first, 1)


@dataclass
class TrackSet:
    tracks: List[Track]
    frame_indices: List[int]
    width: int
    height: int
    grid_cell_px: int = config.TRACK_GRID_CELL_PX

    @property
    def num_frames(self) -> int:
        return len(self.frame_indices)

    @property
    def diagonal(self) -> float:
        return image_diagonal(self.width, self.height)

    def truncate(self, count: int) -> "TrackSet":
        tracks = [track.truncate(count) for track in self.tracks]
        return TrackSet(
            tracks=[track for track in tracks if track.valid_count >= 2],
            frame_indices=self.frame_indices[:count],
            width=self.width,
            height=self.height,
            grid_cell_px=self.grid_cell_px,
        )

    def subset(self, keep: List[int]) -> "TrackSet":
        return TrackSet(
            tracks=[self.tracks[i] for i in keep],
            frame_indices=list(self.frame_indices),
            width=self.width,
            height=self.height,
            grid_cell_px=self.grid_cell_px,
        )

    def correspondences(self, a: int, b: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Points of tracks valid at both processed positions a and b, plus their weights."""
        rows = [track for track in self.tracks if track.valid[a] and track.valid[b]]
        if not rows:
            empty = np.zeros((0, 2))
            return empty, empty.copy(), np.zeros(0)
        pts_a = np.array([track.points[a] for track in rows], dtype=np.float64)
        pts_b = np.array([track.points[b] for track in rows], dtype=np.float64)
        weights = np.array([track.weight for track in rows], dtype=np.float64)
        return pts_a, pts_b, weights

    def to_dict(self) -> Dict[str, Any]:
        return {
            "frame_indices": list(self.frame_indices),
            "width": self.width,
            "height": self.height,
            "grid_cell_px": self.grid_cell_px,
            "tracks": [
                {
                    "weight": float(track.weight),
                    "points": [
                        [int(position), float(track.points[position, 0]), float(track.points[position, 1])]
                        for position in np.flatnonzero(track.valid)
                    ],
                }
                for track in self.tracks
            ],
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "TrackSet":
        count = len(data["frame_indices"])
        tracks = []
        for row in data["tracks"]:
            points = np.full((count, 2), np.nan)
            valid = np.zeros(count, dtype=bool)
            for position, x, y in row["points"]:
                points[int(position)] = (x, y)
                valid[int(position)] = True
            tracks.append(Track(points=points, weight=float(row["weight"]), valid=valid))
        return cls(
            tracks=tracks,
            frame_indices=[int(i) for i in data["frame_indices"]],
            width=int(data["width"]),
            height=int(data["height"]),
            grid_cell_px=int(data.get("grid_cell_px", config.TRACK_GRID_CELL_PX)),
        )


def to_tracking_image(frame: Frame) -> np.ndarray:
    gray = linear_to_srgb(luminance(frame.pixels))
    return np.round(gray * 255.0).astype(np.uint8)


def _cell_of(points: np.ndarray, cell: int) -> Tuple[np.ndarray, np.ndarray]:
    cols = np.floor(points[:, 0] / cell).astype(np.int64)
    rows = np.floor(points[:, 1] / cell).astype(np.int64)
    return rows, cols


def detect_features(
    frame: Frame,
    weight_map: Optional[np.ndarray],
    rng: Union[np.random.Generator, int, None] = None,
    occupied: Optional[np.ndarray] = None,
    cell: int = config.TRACK_GRID_CELL_PX,
) -> np.ndarray:
    """
    Spawn at most one Harris corner per grid cell by rejection sampling.

    A cell is tried only when a uniform draw v is below the mean track
    weight of the cell; one draw is made for every cell so the random
    stream does not depend on the image content.

    Args:
        frame: Low-resolution frame
        weight_map: H x W track weights in [0, 1], None for all ones
        rng: Generator or seed
        occupied: Optional rows x cols boolean grid of cells to skip
        cell: Grid cell size in pixels

    Returns:
        np.ndarray: M x 2 array of (x, y) feature positions
    """
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    height, width = frame.height, frame.width
    rows, cols = math.ceil(height / cell), math.ceil(width / cell)
    draws = rng.random((rows, cols))

    if weight_map is None:
        weight_map = np.ones((height, width), dtype=np.float32)

    gray = to_tracking_image(frame).astype(np.float32)
    response = cv2.cornerHarris(gray, config.HARRIS_BLOCK_SIZE, config.HARRIS_APERTURE, config.HARRIS_K)
    peak = float(response.max())
    if peak <= 0.0:
        return np.zeros((0, 2), dtype=np.float32)
    tau = config.HARRIS_RELATIVE_THRESHOLD * peak

    features = []
    for r in range(rows):
        y0, y1 = r * cell, min((r + 1) * cell, height)
        for c in range(cols):
            if occupied is not None and occupied[r, c]:
                continue
            x0, x1 = c * cell, min((c + 1) * cell, width)
            if draws[r, c] >= float(weight_map[y0:y1, x0:x1].mean()):
                continue
            block = response[y0:y1, x0:x1]
            iy, ix = np.unravel_index(int(np.argmax(block)), block.shape)
            if block[iy, ix] >= tau and block[iy, ix] > 0.0:
                features.append((x0 + ix, y0 + iy))
    return np.array(features, dtype=np.float32).reshape(-1, 2)


def _lk(previous: np.ndarray, current: np.ndarray, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    moved, status, _ = cv2.calcOpticalFlowPyrLK(
        previous, current, points.reshape(-1, 1, 2).astype(np.float32), None, **LK_PARAMS
    )
    return moved.reshape(-1, 2), status.reshape(-1).astype(bool)


def match_residual_px(
    previous: np.ndarray,
    current: np.ndarray,
    start: np.ndarray,
    moved: np.ndarray,
    window: int = config.TRACK_WINDOW_PX,
) -> np.ndarray:
    """
    Misregistration of each matched window, in pixels.

    The RMS intensity difference between the window around start in
    previous and the window around moved in current, over the per-axis RMS
    gradient of the previous window. A window of isotropic texture that is
    off by a small offset e scores about |e|.

    Args:
        previous: Tracking image the points start on
        current: Tracking image the points moved to
        start: N x 2 points on previous
        moved: N x 2 matched points on current
        window: Side of the square window

    Returns:
        np.ndarray: N residuals
    """
    previous = np.asarray(previous, dtype=np.float32)
    current = np.asarray(current, dtype=np.float32)
    gx = cv2.Sobel(previous, cv2.CV_32F, 1, 0, ksize=3, scale=0.125)
    gy = cv2.Sobel(previous, cv2.CV_32F, 0, 1, ksize=3, scale=0.125)
    size = (window, window)
    residual = np.empty(len(start))
    for k, (p, q) in enumerate(zip(start, moved)):
        here, there = (float(p[0]), float(p[1])), (float(q[0]), float(q[1]))
        difference = cv2.getRectSubPix(current, size, there) - cv2.getRectSubPix(previous, size, here)
        gradient = np.square(cv2.getRectSubPix(gx, size, here)) + np.square(cv2.getRectSubPix(gy, size, here))
        per_axis = math.sqrt(float(np.mean(gradient)) / 2.0)
        residual[k] = math.sqrt(float(np.mean(np.square(difference)))) / max(per_axis, config.TRACK_MIN_GRADIENT)
    return residual


@log_stage("track_features")
def track_features(
    frames: List[Frame],
    seeds: Optional[np.ndarray] = None,
    weight_map: Optional[np.ndarray] = None,
    rng: Union[np.random.Generator, int, None] = None,
    respawn: bool = config.TRACK_RESPAWN,
    spawn_map: Optional[np.ndarray] = None,
) -> TrackSet:
    """
    Follow features frame to frame with pyramidal Lucas-Kanade.

    A track ends when it leaves the image, when its window residual
    (match_residual_px) exceeds TRACK_MAX_RESIDUAL_PX or when re-tracking
    back to the previous frame misses the start point by more than
    TRACK_MAX_FB_ERROR_PX. Empty cells are re-seeded on every frame when
    respawn is on.

    Args:
        frames: Low-resolution frames in processing order
        seeds: Initial points on frames[0]; detected when None
        weight_map: Track weight map sampled at spawn positions
        rng: Generator or seed for rejection sampling
        respawn: Re-seed empty grid cells on later frames
        spawn_map: Spawn density for rejection sampling; weight_map when None

    Returns:
        TrackSet: Tracks with at least two valid points

    Raises:
        ValueError: If fewer than two frames are given
    """
    if len(frames) < 2:
        raise ValueError(f"Tracking needs at least 2 frames, got {len(frames)}")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)

    count = len(frames)
    height, width = frames[0].height, frames[0].width
    cell = config.TRACK_GRID_CELL_PX
    weights = weight_map if weight_map is not None else np.ones((height, width), dtype=np.float32)
    images = [to_tracking_image(frame) for frame in frames]
    density = spawn_map if spawn_map is not None else weight_map

    if seeds is None:
        seeds = detect_features(frames[0], density, rng)

    tracks: List[Track] = []
    active: List[int] = []

    def spawn(points: np.ndarray, position: int) -> None:
        if len(points) == 0:
            return
        sampled = bilinear_sample(weights, points[:, 0], points[:, 1])
        for point, weight in zip(points, sampled):
            track = Track(points=np.full((count, 2), np.nan), weight=float(weight), valid=np.zeros(count, dtype=bool))
            track.points[position] = point
            track.valid[position] = True
            tracks.append(track)
            active.append(len(tracks) - 1)

    spawn(np.asarray(seeds, dtype=np.float64).reshape(-1, 2), 0)

    for position in range(1, count):
        if active:
            start = np.array([tracks[i].points[position - 1] for i in active])
            moved, status = _lk(images[position - 1], images[position], start)
            back, status_back = _lk(images[position], images[position - 1], moved)
            residual = match_residual_px(images[position - 1], images[position], start, moved)
            fb_error = np.linalg.norm(back - start, axis=1)
            inside = (
                (moved[:, 0] >= 0) & (moved[:, 0] <= width - 1)
                & (moved[:, 1] >= 0) & (moved[:, 1] <= height - 1)
            )
            keep = (
                status & status_back & inside
                & (fb_error <= config.TRACK_MAX_FB_ERROR_PX)
                & (residual <= config.TRACK_MAX_RESIDUAL_PX)
            )
            survivors = []
            for slot, track_id in enumerate(active):
                if keep[slot]:
                    tracks[track_id].points[position] = moved[slot]
                    tracks[track_id].valid[position] = True
                    survivors.append(track_id)
            logger.debug(f"Frame {position}: {len(survivors)}/{len(active)} tracks continue")
            active[:] = survivors

        if respawn:
            occupied = np.zeros((math.ceil(height / cell), math.ceil(width / cell)), dtype=bool)
            if active:
                current = np.array([tracks[i].points[position] for i in active])
                rows, cols = _cell_of(current, cell)
                occupied[np.clip(rows, 0, occupied.shape[0] - 1), np.clip(cols, 0, occupied.shape[1] - 1)] = True
            spawn(detect_features(frames[position], density, rng, occupied).astype(np.float64), position)

    result = [track for track in tracks if track.valid_count >= 2]
    logger.info(f"Tracked {len(result)} features over {count} frames")
    return TrackSet(
        tracks=result,
        frame_indices=[frame.index for frame in frames],
        width=width,
        height=height,
        grid_cell_px=cell,
    )


def track_length_diag_pct(track: Track, transforms: Any = None, diagonal: Optional[float] = None) -> float:
    """
    Length of the aligned track polyline in percent of the image diagonal.

    transforms maps (position, points) into the base frame through its
    map_points method; None leaves points where they are.
    """
    positions = np.flatnonzero(track.valid)
    if len(positions) < 2:
        return 0.0
    if transforms is not None:
        points = np.vstack([transforms.map_points(int(p), track.points[p][None, :]) for p in positions])
        diagonal = diagonal or transforms.diagonal
    else:
        points = track.points[positions]
    if not diagonal:
        raise ValueError("An image diagonal is needed to express track length")
    length = float(np.linalg.norm(np.diff(points, axis=0), axis=1).sum())
    return 100.0 * length / diagonal
