import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import cv2
import numpy as np

import config
from burst_io import Frame, linear_to_srgb
from models import FaceRegion
from motionblur import upsample_field
from subject import face_signal
from tracking import TrackSet, track_length_diag_pct
from utils import luminance, percentile

logger = logging.getLogger(__name__)


@dataclass
class FlowMask:
    m_flow: np.ndarray
    magnitude: np.ndarray
    reference: float


def compute_flow_mask(
    flows: Sequence[np.ndarray],
    alpha: float = config.FLOW_MASK_ALPHA,
    beta: float = config.FLOW_MASK_BETA,
    reference_percentile: float = config.FLOW_MASK_PERCENTILE,
) -> FlowMask:
    """
    Where the scene moves enough to be blurred.

    |F| is the largest flow magnitude over all pairs at each pixel and
    |F|_ref its high percentile. The mask ramps from 0 at alpha |F|_ref
    to 1 at beta |F|_ref. A reference below FLOW_MASK_MIN_REFERENCE_PX
    counts as a static scene and gives an all-zero mask.

    Args:
        flows: H x W x 2 flow fields, one or more
        alpha: Lower ramp end as a fraction of the reference
        beta: Upper ramp end as a fraction of the reference
        reference_percentile: Percentile of |F| used as reference

    Returns:
        FlowMask: Mask, |F| and the reference magnitude

    Raises:
        ValueError: If no flow is given or alpha >= beta
    """
    if len(flows) == 0:
        raise ValueError("compute_flow_mask needs at least one flow field")
    if alpha >= beta:
        raise ValueError(f"alpha {alpha} must be smaller than beta {beta}")

    magnitude = np.max([np.linalg.norm(np.asarray(f, dtype=np.float64), axis=-1) for f in flows], axis=0)
    reference = percentile(magnitude, reference_percentile)
    if reference < config.FLOW_MASK_MIN_REFERENCE_PX:
        logger.info(f"Reference motion {reference:.3f} px is below the floor, scene treated as static")
        return FlowMask(m_flow=np.zeros_like(magnitude), magnitude=magnitude, reference=reference)

    m_flow = np.clip((magnitude - alpha * reference) / ((beta - alpha) * reference), 0.0, 1.0)
    logger.debug(f"Flow mask: reference {reference:.3f} px, {float(m_flow.mean()):.1%} mean coverage")
    return FlowMask(m_flow=m_flow, magnitude=magnitude, reference=reference)


def _box(values: np.ndarray, radius: int) -> np.ndarray:
    size = 2 * radius + 1
    return cv2.boxFilter(values, cv2.CV_64F, (size, size), normalize=True, borderType=cv2.BORDER_REFLECT)


def refine_mask_edge_aware(
    mask: np.ndarray,
    guide: np.ndarray,
    radius: int = config.GUIDED_RADIUS_PX,
    eps: float = config.GUIDED_EPS,
) -> np.ndarray:
    """Guided filter of the mask with the sharp image's gamma-encoded luminance as guide."""
    mask = np.asarray(mask, dtype=np.float64)
    guide = np.asarray(guide, dtype=np.float64)
    if guide.shape[:2] != mask.shape:
        raise ValueError(f"Guide {guide.shape[:2]} and mask {mask.shape} differ in size")
    gray = linear_to_srgb(luminance(guide)) if guide.ndim == 3 else guide

    mean_i = _box(gray, radius)
    mean_p = _box(mask, radius)
    var_i = _box(gray * gray, radius) - mean_i * mean_i
    cov_ip = _box(gray * mask, radius) - mean_i * mean_p
    a = cov_ip / (var_i + eps)
    b = mean_p - a * mean_i
    refined = _box(a, radius) * gray + _box(b, radius)
    return np.clip(refined, 0.0, 1.0)


def annotate_face_motion(
    regions: List[FaceRegion],
    track_set: TrackSet,
    transforms=None,
) -> List[FaceRegion]:
    """
    Mean aligned track length (percent of diagonal) of the tracks inside
    each face at the base frame. A face without tracks gets 0.
    """
    annotated = []
    for region in regions:
        lengths = []
        for track in track_set.tracks:
            position = 0 if track.valid[0] else track.span[0]
            point = track.points[position]
            if transforms is not None:
                point = transforms.map_points(position, point[None, :])[0]
            if np.hypot(point[0] - region.center[0], point[1] - region.center[1]) <= region.outer_radius:
                lengths.append(track_length_diag_pct(track, transforms, track_set.diagonal))
        motion = float(np.mean(lengths)) if lengths else 0.0
        annotated.append(region.model_copy(update={"motion_mean": motion}))
        logger.debug(f"Face at {region.center}: {len(lengths)} tracks, mean motion {motion:.2f}% of diagonal")
    return annotated


def face_protection_mask(
    regions: List[FaceRegion],
    dims: Tuple[int, int],
    factor: float = 1.0,
    threshold: float = config.FACE_MOTION_MAX_PCT_DIAG,
) -> np.ndarray:
    """
    Feathered mask of the faces that should stay sharp.

    Regions are given in low-resolution pixels and drawn on a grid
    `factor` times finer. A face is protected when its mean motion is
    below threshold or unknown.
    """
    offset = (factor - 1.0) / 2.0
    protected = [
        FaceRegion(
            center=(region.center[0] * factor + offset, region.center[1] * factor + offset),
            inner_radius=region.inner_radius * factor,
            outer_radius=region.outer_radius * factor,
            motion_mean=region.motion_mean,
        )
        for region in regions
        if region.motion_mean is None or region.motion_mean < threshold
    ]
    if len(protected) < len(regions):
        logger.info(f"{len(regions) - len(protected)} moving faces left unprotected")
    return face_signal(protected, dims).astype(np.float64)


def composite_mask(m_flow_refined: np.ndarray, protection: Optional[np.ndarray] = None) -> np.ndarray:
    """Blur weight: 1 takes the blurred pixel, 0 the sharp one."""
    sharpness = 1.0 - np.asarray(m_flow_refined, dtype=np.float64)
    if protection is not None:
        sharpness = np.maximum(sharpness, protection)
    return np.clip(1.0 - sharpness, 0.0, 1.0)


def composite_final(sharp: Frame, blurred: np.ndarray, mask: np.ndarray) -> Frame:
    """
    Blend the half-resolution blur into the full-resolution sharp frame.

    Raises:
        ValueError: If the blurred image and mask differ in size or do not
            match half the sharp frame's size
    """
    blurred = np.asarray(blurred, dtype=np.float32)
    mask = np.asarray(mask, dtype=np.float32)
    if blurred.shape[:2] != mask.shape:
        raise ValueError(f"Blurred image {blurred.shape[:2]} and mask {mask.shape} differ in size")
    expected = (-(-sharp.height // config.HALF_RES_FACTOR), -(-sharp.width // config.HALF_RES_FACTOR))
    if mask.shape != expected:
        raise ValueError(f"Half-resolution inputs are {mask.shape}, expected {expected}")

    # exact 2x level mapping, so odd full sizes keep the pixel-centre convention
    shape = (sharp.height, sharp.width)
    factor = float(config.HALF_RES_FACTOR)
    blurred_up = upsample_field(blurred, shape, factor, scale_values=False).astype(np.float32)
    mask_up = np.clip(upsample_field(mask, shape, factor, scale_values=False), 0.0, 1.0).astype(np.float32)[..., None]
    pixels = mask_up * blurred_up + (1.0 - mask_up) * sharp.pixels
    return sharp.with_pixels(pixels)
