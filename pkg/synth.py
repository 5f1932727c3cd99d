import asyncio
import logging
import os
from typing import List, Optional, Tuple

import aiofiles
import cv2
import numpy as np
from pydantic import BaseModel, Field

import config
from burst_io import write_png
from models import BurstManifest, FaceRegion, Mode
from utils import pixel_grid

logger = logging.getLogger(__name__)


class SyntheticDisc(BaseModel):
    """Textured disc moving at constant velocity, in full-resolution pixels."""

    center: Tuple[float, float]
    radius: float = Field(gt=0)
    velocity: Tuple[float, float] = (0.0, 0.0)
    brightness: float = Field(0.8, ge=0, le=1)


class SyntheticScene(BaseModel):
    width: int = Field(config.SYNTH_WIDTH, ge=16)
    height: int = Field(config.SYNTH_HEIGHT, ge=16)
    frames: int = Field(config.SYNTH_FRAMES, ge=2)
    seed: int = config.SYNTH_SEED
    texture_sigma_px: float = Field(config.SYNTH_TEXTURE_SIGMA_PX, gt=0)
    camera_velocity: Tuple[float, float] = (0.0, 0.0)
    camera_roll_deg: float = 0.0
    discs: List[SyntheticDisc] = Field(default_factory=list)
    mode: Mode = "foreground_blur"
    faces: List[FaceRegion] = Field(default_factory=list)


def _texture(rng: np.random.Generator, height: int, width: int, sigma: float) -> np.ndarray:
    noise = rng.random((height, width, 3)).astype(np.float32)
    blurred = cv2.GaussianBlur(noise, (0, 0), sigma, borderType=cv2.BORDER_REFLECT)
    low, high = float(blurred.min()), float(blurred.max())
    return (0.1 + 0.8 * (blurred - low) / max(high - low, 1e-6)).astype(np.float32)


def render_burst(scene: SyntheticScene) -> List[np.ndarray]:
    """
    Linear RGB frames of the scene.

    The background texture moves with the camera path (translation plus
    roll about the image centre per frame) and each disc carries its own
    texture along its velocity plus the camera translation on top of it.
    """
    rng = np.random.default_rng(scene.seed)
    margin = int(np.ceil(np.hypot(*scene.camera_velocity) * scene.frames)) + scene.width // 2
    canvas = _texture(rng, scene.height + 2 * margin, scene.width + 2 * margin, scene.texture_sigma_px)
    disc_textures = [
        _texture(rng, int(4 * disc.radius) + 4, int(4 * disc.radius) + 4, max(disc.radius / 8.0, 1.5)) * disc.brightness
        for disc in scene.discs
    ]
    xs, ys = pixel_grid(scene.height, scene.width)
    centre = ((scene.width - 1) / 2.0, (scene.height - 1) / 2.0)

    frames = []
    for f in range(scene.frames):
        shift_x, shift_y = scene.camera_velocity[0] * f, scene.camera_velocity[1] * f
        rotation = cv2.getRotationMatrix2D(centre, scene.camera_roll_deg * f, 1.0)
        # frame(x) = canvas(R^-1 (x - shift - c) + c + margin)
        inverse = cv2.invertAffineTransform(rotation)
        inverse[:, 2] += margin - inverse[:, :2] @ np.array([shift_x, shift_y])
        pixels = cv2.warpAffine(
            canvas, inverse, (scene.width, scene.height),
            flags=cv2.INTER_LINEAR | cv2.WARP_INVERSE_MAP, borderMode=cv2.BORDER_REFLECT,
        ).astype(np.float64)

        for disc, texture in zip(scene.discs, disc_textures):
            cx = disc.center[0] + disc.velocity[0] * f + shift_x
            cy = disc.center[1] + disc.velocity[1] * f + shift_y
            coverage = np.clip(disc.radius + 0.5 - np.hypot(xs - cx, ys - cy), 0.0, 1.0)
            half = texture.shape[0] / 2.0
            map_x = (xs - cx + half).astype(np.float32)
            map_y = (ys - cy + half).astype(np.float32)
            colour = cv2.remap(texture, map_x, map_y, cv2.INTER_LINEAR, borderMode=cv2.BORDER_REFLECT)
            pixels = coverage[..., None] * colour + (1.0 - coverage[..., None]) * pixels
        frames.append(np.clip(pixels, 0.0, 1.0).astype(np.float32))
    logger.debug(f"Rendered {len(frames)} synthetic frames of {scene.width}x{scene.height}")
    return frames


async def write_burst(
    scene: SyntheticScene,
    directory: str,
    base_index: Optional[int] = None,
    bit_depth: int = 8,
) -> str:
    """
    Render the scene and write its frames plus a manifest.

    Args:
        scene: Scene description
        directory: Output directory, created when missing
        base_index: Base frame; the last frame when None
        bit_depth: PNG sample depth of the frames

    Returns:
        str: Path of the written manifest.json
    """
    os.makedirs(directory, exist_ok=True)
    frames = await asyncio.to_thread(render_burst, scene)
    names = [f"frame_{i:03d}.png" for i in range(len(frames))]
    await asyncio.gather(*[
        write_png(os.path.join(directory, name), pixels, bit_depth)
        for name, pixels in zip(names, frames)
    ])
    manifest = BurstManifest(
        frame_paths=names,
        base_index=base_index,
        mode=scene.mode,
        faces=scene.faces,
    )
    path = os.path.join(directory, "manifest.json")
    async with aiofiles.open(path, "w") as handle:
        await handle.write(manifest.model_dump_json(indent=2))
    logger.info(f"Wrote synthetic burst of {len(frames)} frames to {directory}")
    return path
