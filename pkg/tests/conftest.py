import asyncio
import os
import sys
from typing import List, Optional, Sequence, Tuple

import cv2
import numpy as np
import pytest

sys.path.insert(0, os.path.join(os.path.dirname(__file__), ".."))

from burst_io import Frame  # noqa: E402
from synth import SyntheticDisc, SyntheticScene, write_burst  # noqa: E402
from tracking import Track, TrackSet  # noqa: E402


def make_texture(height: int, width: int, seed: int = 0, sigma: float = 2.0, channels: int = 3) -> np.ndarray:
    """Smooth random texture in [0.1, 0.9], float32."""
    rng = np.random.default_rng(seed)
    noise = rng.random((height, width, channels)).astype(np.float32)
    blurred = cv2.GaussianBlur(noise, (0, 0), sigma, borderType=cv2.BORDER_REFLECT)
    if blurred.ndim == 2:
        blurred = blurred[..., None]
    low, high = float(blurred.min()), float(blurred.max())
    texture = 0.1 + 0.8 * (blurred - low) / (high - low)
    return texture[..., 0] if channels == 1 else texture


def translate(image: np.ndarray, dx: float, dy: float) -> np.ndarray:
    """Content moved by (dx, dy): out(x) = image(x - d)."""
    height, width = image.shape[:2]
    matrix = np.float32([[1, 0, dx], [0, 1, dy]])
    return cv2.warpAffine(image, matrix, (width, height), flags=cv2.INTER_LINEAR, borderMode=cv2.BORDER_REFLECT)


def low_frames(images: Sequence[np.ndarray]) -> List[Frame]:
    return [Frame(pixels=np.asarray(image, dtype=np.float32), level="low", index=i) for i, image in enumerate(images)]


def make_trackset(
    trajectories: Sequence[np.ndarray],
    weights: Optional[Sequence[float]] = None,
    width: int = 128,
    height: int = 96,
) -> TrackSet:
    """Tracks from per-track (frames x 2) point arrays, NaN rows marking invalid frames."""
    tracks = []
    for i, points in enumerate(trajectories):
        points = np.asarray(points, dtype=np.float64)
        valid = ~np.isnan(points).any(axis=1)
        weight = 1.0 if weights is None else float(weights[i])
        tracks.append(Track(points=points.copy(), weight=weight, valid=valid))
    count = len(trajectories[0])
    return TrackSet(tracks=tracks, frame_indices=list(range(count)), width=width, height=height)


def grid_points(width: int, height: int, step: int = 8) -> np.ndarray:
    xs, ys = np.meshgrid(np.arange(step / 2, width, step), np.arange(step / 2, height, step))
    return np.stack([xs.ravel(), ys.ravel()], axis=1).astype(np.float64)


def moving_trackset(
    base_points: np.ndarray,
    velocity: Tuple[float, float],
    frames: int,
    weight: float = 1.0,
    width: int = 128,
    height: int = 96,
) -> TrackSet:
    """Tracks starting at base_points (position 0) and moving at a constant velocity per position."""
    steps = np.arange(frames)[:, None] * np.asarray(velocity, dtype=np.float64)
    trajectories = [point + steps for point in base_points]
    return make_trackset(trajectories, [weight] * len(trajectories), width, height)


@pytest.fixture
def texture() -> np.ndarray:
    return make_texture(96, 128, seed=3, sigma=2.0)


@pytest.fixture
def static_burst(tmp_path) -> str:
    scene = SyntheticScene(width=512, height=384, frames=4, seed=11)
    return asyncio.run(write_burst(scene, str(tmp_path / "static")))


@pytest.fixture
def disc_burst(tmp_path) -> str:
    scene = SyntheticScene(
        width=512,
        height=384,
        frames=4,
        seed=5,
        discs=[SyntheticDisc(center=(128.0, 192.0), radius=40.0, velocity=(12.0, 0.0), brightness=0.9)],
    )
    return asyncio.run(write_burst(scene, str(tmp_path / "disc")))
