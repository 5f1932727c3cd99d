import logging
from dataclasses import dataclass
from typing import List, Optional, Tuple, Union

import numpy as np

import config
from burst_io import Frame, load_gray_map
from models import BurstManifest, FaceRegion
from utils import image_diagonal, pixel_grid

logger = logging.getLogger(__name__)


@dataclass
class SubjectWeightMap:
    s: np.ndarray
    f: np.ndarray
    w: np.ndarray


def smootherstep(t: Union[float, np.ndarray]) -> Union[float, np.ndarray]:
    t = np.clip(np.asarray(t, dtype=np.float64), 0.0, 1.0)
    value = t * t * t * (t * (t * 6.0 - 15.0) + 10.0)
    if value.ndim == 0:
        return float(value)
    return value


def threshold_saliency(s: np.ndarray, threshold: float = config.SALIENCY_THRESHOLD) -> np.ndarray:
    """Zero out values below the threshold and rescale the rest so the maximum is 1."""
    s = np.clip(np.asarray(s, dtype=np.float32), 0.0, 1.0).copy()
    s[s < threshold] = 0.0
    peak = float(s.max()) if s.size else 0.0
    if peak > 0.0:
        s /= peak
    return s


def gaussian_saliency_prior(height: int, width: int) -> np.ndarray:
    xs, ys = pixel_grid(height, width)
    sigma = config.SALIENCY_PRIOR_SIGMA_DIAG * image_diagonal(width, height)
    r2 = (xs - (width - 1) / 2.0) ** 2 + (ys - (height - 1) / 2.0) ** 2
    prior = np.exp(-r2 / (2.0 * sigma * sigma))
    return (prior / prior.max()).astype(np.float32)


def load_or_synthesize_saliency(
    frame: Frame,
    source: Optional[Union[str, np.ndarray]] = None,
    threshold: float = config.SALIENCY_THRESHOLD,
) -> np.ndarray:
    """
    Saliency map at low resolution, thresholded and renormalized to [0, 1].

    Args:
        frame: Low-resolution frame that fixes the map dimensions
        source: Path to a grayscale map, an array, or None for the centered prior
        threshold: Values below it become exactly zero

    Returns:
        np.ndarray: H x W saliency map

    Raises:
        ValueError: If the external map does not match the frame dimensions
    """
    if source is None:
        s = gaussian_saliency_prior(frame.height, frame.width)
    else:
        s = load_gray_map(source) if isinstance(source, str) else np.asarray(source, dtype=np.float32)
        if s.shape != (frame.height, frame.width):
            raise ValueError(
                f"Saliency map is {s.shape[1]}x{s.shape[0]}, expected {frame.width}x{frame.height}"
            )
    return threshold_saliency(s, threshold)


def face_signal(
    regions: List[FaceRegion],
    dims: Tuple[int, int],
    segmentation: Optional[np.ndarray] = None,
) -> np.ndarray:
    height, width = dims
    f = np.zeros((height, width), dtype=np.float64)
    if not regions:
        return f.astype(np.float32)
    xs, ys = pixel_grid(height, width)
    for region in regions:
        cx = min(max(region.center[0], 0.0), width - 1.0)
        cy = min(max(region.center[1], 0.0), height - 1.0)
        distance = np.hypot(xs - cx, ys - cy)
        t = (region.outer_radius - distance) / (region.outer_radius - region.inner_radius)
        f = np.maximum(f, smootherstep(t))
    if segmentation is not None:
        if segmentation.shape != (height, width):
            raise ValueError(f"Segmentation mask shape {segmentation.shape} does not match {dims}")
        f = f * np.clip(segmentation, 0.0, 1.0)
    return f.astype(np.float32)


def combine_subject_weights(s: np.ndarray, f: np.ndarray) -> np.ndarray:
    if s.shape != f.shape:
        raise ValueError(f"Saliency {s.shape} and face signal {f.shape} differ in shape")
    w = s.astype(np.float64) * (1.0 + f.astype(np.float64))
    peak = float(w.max()) if w.size else 0.0
    if peak <= 0.0:
        return np.zeros_like(s, dtype=np.float32)
    return (w / peak).astype(np.float32)


def largest_face(regions: List[FaceRegion]) -> Optional[FaceRegion]:
    # equal radii keep the earliest region
    best = None
    for region in regions:
        if best is None or region.outer_radius > best.outer_radius:
            best = region
    return best


def build_subject_map(
    frame: Frame,
    manifest: BurstManifest,
    use_faces: bool = config.USE_FACES,
    largest_face_only: bool = False,
) -> SubjectWeightMap:
    s = load_or_synthesize_saliency(frame, manifest.saliency_path)
    dims = (frame.height, frame.width)

    if use_faces:
        regions = list(manifest.faces)
        if largest_face_only and len(regions) > 1:
            regions = [largest_face(regions)]
            logger.info(f"Aligning on the largest of {len(manifest.faces)} faces")
        segmentation = load_gray_map(manifest.segmentation_path) if manifest.segmentation_path else None
        f = face_signal(regions, dims, segmentation)
        if manifest.face_mask_path:
            mask = load_gray_map(manifest.face_mask_path)
            if mask.shape != dims:
                raise ValueError(f"Face mask shape {mask.shape} does not match {dims}")
            f = np.maximum(f, mask)
    else:
        f = np.zeros(dims, dtype=np.float32)

    w = combine_subject_weights(s, f)
    logger.debug(f"Subject map: {int((w > 0).sum())} weighted pixels, {len(manifest.faces)} faces")
    return SubjectWeightMap(s=s, f=f, w=w)
