import asyncio
import logging
import os
from dataclasses import dataclass
from typing import Any, Dict, List, Union

import aiofiles
import cv2
import numpy as np

import config
from models import BurstManifest
from utils import log_stage

logger = logging.getLogger(__name__)

LEVEL_AFTER_DOWNSAMPLE = {
    ("full", config.HALF_RES_FACTOR): "half",
    ("full", config.LOW_RES_FACTOR): "low",
    ("half", config.LOW_RES_FACTOR // config.HALF_RES_FACTOR): "low",
}


@dataclass
class Frame:
    """One burst image in linear RGB (float32, H x W x 3) at a pyramid level."""

    pixels: np.ndarray
    level: str = "full"
    index: int = 0
    timestamp_s: float = 0.0

    @property
    def width(self) -> int:
        return int(self.pixels.shape[1])

    @property
    def height(self) -> int:
        return int(self.pixels.shape[0])

    def with_pixels(self, pixels: np.ndarray) -> "Frame":
        return Frame(pixels=pixels.astype(np.float32, copy=False), level=self.level,
                     index=self.index, timestamp_s=self.timestamp_s)


def srgb_to_linear(values: Any) -> np.ndarray:
    values = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0)
    return np.where(values <= 0.04045, values / 12.92, ((values + 0.055) / 1.055) ** 2.4)


def linear_to_srgb(values: Any) -> np.ndarray:
    values = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0)
    return np.where(values <= 0.0031308, values * 12.92, 1.055 * values ** (1.0 / 2.4) - 0.055)


def soft_gamma(values: Any, k: float = config.SOFT_GAMMA_K) -> Union[float, np.ndarray]:
    """
    Invertible brightness curve v / (v + (1 - v) k) on [0, 1].

    Applying it with k and then with 1/k returns the input.

    Args:
        values: Scalar or array, clamped to [0, 1]
        k: Positive curve parameter, 3.0 to darken before blurring

    Returns:
        float or np.ndarray: Curve values in [0, 1]

    Raises:
        ValueError: If k is not positive
    """
    if k <= 0:
        raise ValueError(f"soft gamma parameter must be positive, got {k}")
    array = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0)
    result = array / (array + (1.0 - array) * k)
    if result.ndim == 0:
        return float(result)
    return result


def decode_image(data: bytes, linear_input: bool = False, name: str = "image") -> np.ndarray:
    buffer = np.frombuffer(data, dtype=np.uint8)
    image = cv2.imdecode(buffer, cv2.IMREAD_UNCHANGED)
    if image is None:
        raise ValueError(f"Could not decode {name}")

    if image.ndim == 2:
        image = np.repeat(image[..., None], 3, axis=2)
    elif image.shape[2] == 4:
        image = image[..., :3]
    image = image[..., ::-1]

    if image.dtype == np.uint8:
        values = image.astype(np.float64) / 255.0
        linear = values if linear_input else srgb_to_linear(values)
    elif image.dtype == np.uint16:
        values = image.astype(np.float64) / 65535.0
        is_linear = linear_input or config.SIXTEEN_BIT_IS_LINEAR
        linear = values if is_linear else srgb_to_linear(values)
    else:
        raise ValueError(f"Unsupported sample type {image.dtype} in {name}")
    return np.ascontiguousarray(linear, dtype=np.float32)


def encode_png(pixels: np.ndarray, bit_depth: int = 8) -> bytes:
    if bit_depth not in (8, 16):
        raise ValueError(f"bit_depth must be 8 or 16, got {bit_depth}")
    top = 255.0 if bit_depth == 8 else 65535.0
    linear = bit_depth == 16 and config.SIXTEEN_BIT_IS_LINEAR
    values = np.clip(np.asarray(pixels, dtype=np.float64), 0.0, 1.0) if linear else linear_to_srgb(pixels)
    encoded = np.round(values * top)
    encoded = encoded.astype(np.uint8 if bit_depth == 8 else np.uint16)
    if encoded.ndim == 3:
        encoded = np.ascontiguousarray(encoded[..., ::-1])
    ok, buffer = cv2.imencode(".png", encoded)
    if not ok:
        raise ValueError("PNG encoding failed")
    return buffer.tobytes()


def load_gray_map(path: str) -> np.ndarray:
    """Read a grayscale PNG map and scale it to [0, 1] by its sample range."""
    if not os.path.isfile(path):
        raise FileNotFoundError(f"Map not found: {path}")
    image = cv2.imread(path, cv2.IMREAD_UNCHANGED)
    if image is None:
        raise ValueError(f"Could not decode map {path}")
    if image.ndim == 3:
        image = image[..., 0]
    top = 65535.0 if image.dtype == np.uint16 else 255.0
    return image.astype(np.float32) / np.float32(top)


async def load_manifest(path: str) -> BurstManifest:
    if not os.path.isfile(path):
        raise FileNotFoundError(f"Manifest not found: {path}")
    async with aiofiles.open(path, "r") as handle:
        text = await handle.read()
    manifest = BurstManifest.model_validate_json(text)

    root = os.path.dirname(os.path.abspath(path))

    def resolve(value):
        if value is None or os.path.isabs(value):
            return value
        return os.path.join(root, value)

    return manifest.model_copy(update={
        "frame_paths": [resolve(p) for p in manifest.frame_paths],
        "saliency_path": resolve(manifest.saliency_path),
        "face_mask_path": resolve(manifest.face_mask_path),
        "segmentation_path": resolve(manifest.segmentation_path),
        "flow_dir": resolve(manifest.flow_dir),
    })


async def _read_frame(path: str, index: int, manifest: BurstManifest, semaphore: asyncio.Semaphore) -> Frame:
    async with semaphore:
        async with aiofiles.open(path, "rb") as handle:
            data = await handle.read()
        pixels = await asyncio.to_thread(decode_image, data, manifest.linear_input, path)
    logger.debug(f"Decoded frame {index} from {path} ({pixels.shape[1]}x{pixels.shape[0]})")
    return Frame(pixels=pixels, level="full", index=index, timestamp_s=index / manifest.frame_rate_hz)


@log_stage("load_burst")
async def load_burst(manifest: BurstManifest, workers: int = config.WORKERS) -> List[Frame]:
    """
    Decode every frame of the manifest into linear RGB at full resolution.

    Args:
        manifest: Validated burst manifest
        workers: Maximum number of frames decoded at the same time

    Returns:
        List[Frame]: Frames in manifest order

    Raises:
        FileNotFoundError: If a frame file is missing
        ValueError: If a frame cannot be decoded or dimensions differ
    """
    missing = [path for path in manifest.frame_paths if not os.path.isfile(path)]
    if missing:
        raise FileNotFoundError(f"Missing frame files: {', '.join(missing)}")

    semaphore = asyncio.Semaphore(workers)
    frames = await asyncio.gather(*[
        _read_frame(path, index, manifest, semaphore)
        for index, path in enumerate(manifest.frame_paths)
    ])

    expected = frames[0].pixels.shape
    for frame in frames[1:]:
        if frame.pixels.shape != expected:
            raise ValueError(
                f"Frame {frame.index} is {frame.width}x{frame.height}, expected {expected[1]}x{expected[0]}"
            )
    logger.info(f"Loaded {len(frames)} frames of {expected[1]}x{expected[0]}")
    return list(frames)


def downsample(frame: Frame, factor: int) -> Frame:
    """
    Box-filter a frame by an integer factor.

    Dimensions that are not multiples of the factor are padded by edge
    replication first, so the output size is ceil(size / factor).
    """
    if factor < 1:
        raise ValueError(f"factor must be a positive integer, got {factor}")
    pixels = frame.pixels
    height, width = pixels.shape[:2]
    pad_y = (-height) % factor
    pad_x = (-width) % factor
    if pad_y or pad_x:
        pad = ((0, pad_y), (0, pad_x)) + ((0, 0),) * (pixels.ndim - 2)
        pixels = np.pad(pixels, pad, mode="edge")
    rows, cols = pixels.shape[0] // factor, pixels.shape[1] // factor
    blocks = pixels.reshape((rows, factor, cols, factor) + pixels.shape[2:]).astype(np.float64)
    reduced = blocks.mean(axis=(1, 3)).astype(np.float32)
    level = LEVEL_AFTER_DOWNSAMPLE.get((frame.level, factor), frame.level)
    return Frame(pixels=reduced, level=level, index=frame.index, timestamp_s=frame.timestamp_s)


def build_pyramid(frame: Frame) -> Dict[str, Frame]:
    return {
        "full": frame,
        "half": downsample(frame, config.HALF_RES_FACTOR),
        "low": downsample(frame, config.LOW_RES_FACTOR),
    }


async def write_png(path: str, pixels: np.ndarray, bit_depth: int = 8) -> str:
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    data = await asyncio.to_thread(encode_png, pixels, bit_depth)
    async with aiofiles.open(path, "wb") as handle:
        await handle.write(data)
    logger.debug(f"Wrote {path}")
    return path
