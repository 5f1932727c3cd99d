import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple, Union

import cv2
import numpy as np

import config
from burst_io import Frame, linear_to_srgb, soft_gamma, srgb_to_linear
from utils import DisparityOverflowError, bilinear_sample, level_offset, luminance, pixel_grid

logger = logging.getLogger(__name__)

FARNEBACK_PARAMS = dict(
    pyr_scale=config.FLOW_PYR_SCALE,
    levels=config.FLOW_LEVELS,
    winsize=config.FLOW_WINSIZE,
    iterations=config.FLOW_ITERATIONS,
    poly_n=config.FLOW_POLY_N,
    poly_sigma=config.FLOW_POLY_SIGMA,
    flags=0,
)

ImageLike = Union[Frame, np.ndarray]


@dataclass
class KernelMap:
    """
    Line segment and blend weight per output pixel for one input of a pair.

    The blurred pixel x reads the input along x + s * delta(x), s in [0, 1].
    """

    delta: np.ndarray
    weight: np.ndarray
    clamp_fraction: float = 0.0


@dataclass
class FlowPairField:
    """Flow into (backward) and out of (forward) one burst frame, on that frame's grid."""

    forward: np.ndarray
    backward: np.ndarray
    source: str = "classical"


@dataclass
class HermitePath:
    """Cubic path with rho(0) = start, rho(1) = end, rho'(0) = m0, rho'(1) = m1."""

    start: np.ndarray
    end: np.ndarray
    m0: np.ndarray
    m1: np.ndarray

    def at(self, t: float) -> np.ndarray:
        t2, t3 = t * t, t * t * t
        return (
            (2 * t3 - 3 * t2 + 1) * self.start
            + (t3 - 2 * t2 + t) * self.m0
            + (-2 * t3 + 3 * t2) * self.end
            + (t3 - t2) * self.m1
        )

    def tangent(self, t: float) -> np.ndarray:
        t2 = t * t
        return (
            (6 * t2 - 6 * t) * self.start
            + (3 * t2 - 4 * t + 1) * self.m0
            + (-6 * t2 + 6 * t) * self.end
            + (3 * t2 - 2 * t) * self.m1
        )


def _pixels(image: ImageLike) -> np.ndarray:
    return image.pixels if isinstance(image, Frame) else np.asarray(image)


def _flow_image(image: ImageLike) -> np.ndarray:
    gray = linear_to_srgb(luminance(_pixels(image)))
    return np.round(gray * 255.0).astype(np.uint8)


def _norm(vectors: np.ndarray) -> np.ndarray:
    return np.linalg.norm(vectors, axis=-1)


def estimate_flow(frame_from: ImageLike, frame_to: ImageLike) -> np.ndarray:
    """Dense flow f with frame_from(x) ~ frame_to(x + f(x)), as H x W x 2 float64."""
    flow = cv2.calcOpticalFlowFarneback(
        _flow_image(frame_from), _flow_image(frame_to), None, **FARNEBACK_PARAMS
    )
    return flow.astype(np.float64)


def _sample_field(field: np.ndarray, positions: np.ndarray) -> np.ndarray:
    return bilinear_sample(field, positions[..., 0], positions[..., 1])


def _consistency_error(delta: np.ndarray, other: np.ndarray) -> np.ndarray:
    xs, ys = pixel_grid(*delta.shape[:2])
    grid = np.stack([xs, ys], axis=-1)
    return _norm(delta + _sample_field(other, grid + delta))


def clamp_disparity(delta: np.ndarray, limit: float) -> Tuple[np.ndarray, np.ndarray]:
    """Flow with every vector longer than limit shortened to it, plus the mask of shortened pixels."""
    magnitude = _norm(delta)
    clamped = magnitude > limit
    scale = np.where(clamped, limit / np.maximum(magnitude, 1e-12), 1.0)
    return delta * scale[..., None], clamped


def trail_sources(path: HermitePath, min_length: float = config.TRAIL_MIN_LENGTH_PX) -> np.ndarray:
    """
    Pixel whose motion path every pixel follows.

    Dense flow only moves the pixels that hold moving content, so the
    pixels a moving object sweeps over keep their own, shorter paths.
    Each pixel with a chord of at least min_length walks its path in
    half-pixel steps and claims the pixels it crosses. A claim holds only
    when the walker's chord is strictly longer than the one already held,
    and every pixel starts out holding its own path.

    Args:
        path: Per-pixel paths on an H x W grid, starting at the pixel centres
        min_length: Shortest chord that spreads

    Returns:
        np.ndarray: H x W flat index of the followed pixel
    """
    height, width = path.start.shape[:2]
    chord = _norm(path.end - path.start).ravel()
    best_source = np.arange(height * width)
    best_length = chord.copy()
    walkers = np.flatnonzero(chord >= min_length)
    if len(walkers) == 0:
        return best_source.reshape(height, width)

    moving = HermitePath(*(np.broadcast_to(v, path.start.shape).reshape(-1, 2)[walkers]
                           for v in (path.start, path.end, path.m0, path.m1)))
    lengths = chord[walkers]
    # arc length of a cubic Hermite path is at most 1.5 |chord| + |m0| + |m1|
    reach = float((1.5 * lengths + _norm(moving.m0) + _norm(moving.m1)).max())
    steps = int(math.ceil(config.SAMPLES_PER_PIXEL * reach)) + 1

    for t in np.linspace(0.0, 1.0, steps):
        position = np.rint(moving.at(t)).astype(np.int64)
        inside = (
            (position[:, 0] >= 0) & (position[:, 0] < width)
            & (position[:, 1] >= 0) & (position[:, 1] < height)
        )
        target = position[inside, 1] * width + position[inside, 0]
        source, length = walkers[inside], lengths[inside]
        longer = length > best_length[target]
        if not longer.any():
            continue
        target, source, length = target[longer], source[longer], length[longer]
        order = np.lexsort((-length, target))
        target, source, length = target[order], source[order], length[order]
        first = np.unique(target, return_index=True)[1]
        best_length[target[first]] = length[first]
        best_source[target[first]] = source[first]

    claimed = int((best_source != np.arange(height * width)).sum())
    logger.debug(f"Spread {len(walkers)} moving paths over {claimed} more pixels")
    return best_source.reshape(height, width)


def follow_paths(path: HermitePath, sources: np.ndarray) -> HermitePath:
    """Paths anchored at every pixel that move like the paths of their source pixels."""
    start = np.broadcast_to(path.start, path.start.shape)

    def take(field: np.ndarray) -> np.ndarray:
        return np.broadcast_to(field, start.shape).reshape(-1, 2)[sources]

    return HermitePath(
        start=start,
        end=start + take(path.end) - take(path.start),
        m0=take(path.m0),
        m1=take(path.m1),
    )


def predict_kernels(
    frame_a: ImageLike,
    frame_b: ImageLike,
    max_disparity_px: float = config.MAX_DISPARITY_PX,
    max_clamp_fraction: float = config.MAX_CLAMP_FRACTION,
    flows: Optional[Tuple[np.ndarray, np.ndarray]] = None,
) -> Tuple[KernelMap, KernelMap]:
    """
    Kernel maps of an aligned frame pair from dense flow.

    delta_a(x) points to where frame a holds what frame b shows at x, and
    delta_b(x) to where frame b holds what frame a shows at x. Both inputs
    weigh 0.5 where the two flows agree; where forward-backward
    consistency fails the weight moves to the consistent side.

    After clamping, every pixel takes the segment and weight of the
    longest segment crossing it (see trail_sources), so the kernels cover
    the whole sweep of a moving object and not only the pixels it starts
    from.

    Args:
        frame_a: Earlier low-resolution aligned frame
        frame_b: Later low-resolution aligned frame
        max_disparity_px: Segment length cap
        max_clamp_fraction: Largest tolerated share of clamped pixels
        flows: Optional precomputed (delta_a, delta_b)

    Returns:
        Tuple[KernelMap, KernelMap]: Kernels of frame a and frame b

    Raises:
        DisparityOverflowError: If more than max_clamp_fraction of the pixels were clamped
    """
    if flows is None:
        delta_a = estimate_flow(frame_b, frame_a)
        delta_b = estimate_flow(frame_a, frame_b)
    else:
        delta_a, delta_b = (np.asarray(f, dtype=np.float64) for f in flows)
    if delta_a.shape != delta_b.shape:
        raise ValueError(f"Flow shapes differ: {delta_a.shape} vs {delta_b.shape}")

    error_a = _consistency_error(delta_a, delta_b)
    error_b = _consistency_error(delta_b, delta_a)
    confidence_a = 1.0 / (1.0 + np.exp((error_a - config.CONSISTENCY_MIDPOINT_PX) / config.CONSISTENCY_SLOPE_PX))
    confidence_b = 1.0 / (1.0 + np.exp((error_b - config.CONSISTENCY_MIDPOINT_PX) / config.CONSISTENCY_SLOPE_PX))
    total = confidence_a + confidence_b
    weight_a = np.where(total > 1e-12, confidence_a / np.maximum(total, 1e-12), 0.5)

    delta_a, clamped_a = clamp_disparity(delta_a, max_disparity_px)
    delta_b, clamped_b = clamp_disparity(delta_b, max_disparity_px)
    clamp_fraction = float((clamped_a | clamped_b).mean())
    if clamp_fraction > 0.0:
        logger.warning(f"Clamped {clamp_fraction:.1%} of kernel segments to {max_disparity_px} px")
    if clamp_fraction > max_clamp_fraction:
        raise DisparityOverflowError(
            f"{clamp_fraction:.1%} of pixels exceed {max_disparity_px} px of disparity"
        )

    xs, ys = pixel_grid(*delta_a.shape[:2])
    grid = np.stack([xs, ys], axis=-1)
    followed_a = trail_sources(build_spline(grid, delta_a, delta_a, delta_a))
    followed_b = trail_sources(build_spline(grid, delta_b, delta_b, delta_b))
    share_a = weight_a.ravel()[followed_a]
    share_b = (1.0 - weight_a).ravel()[followed_b]
    total = share_a + share_b
    weight_a = np.where(total > 1e-12, share_a / np.maximum(total, 1e-12), 0.5)

    return (
        KernelMap(delta=delta_a.reshape(-1, 2)[followed_a], weight=weight_a, clamp_fraction=clamp_fraction),
        KernelMap(delta=delta_b.reshape(-1, 2)[followed_b], weight=1.0 - weight_a, clamp_fraction=clamp_fraction),
    )


def ramp_weights(count: int, uniform: bool = False) -> np.ndarray:
    if count < 1:
        raise ValueError(f"Sample count must be positive, got {count}")
    if uniform:
        return np.ones(count)
    return 1.0 - np.arange(count) / count


def sample_count(length: Union[float, np.ndarray]) -> Union[int, np.ndarray]:
    """Samples along a segment: two per pixel of length, clamped to [MIN_SAMPLES, MAX_SAMPLES]."""
    count = np.clip(
        np.ceil(config.SAMPLES_PER_PIXEL * np.asarray(length, dtype=np.float64)),
        config.MIN_SAMPLES,
        config.MAX_SAMPLES,
    ).astype(np.int64)
    if count.ndim == 0:
        return int(count)
    return count


def upsample_field(field: np.ndarray, shape: Tuple[int, int], factor: float, scale_values: bool) -> np.ndarray:
    """Bilinear lookup of a coarse field on a grid `factor` times finer."""
    height, width = shape
    xs, ys = pixel_grid(height, width)
    offset = level_offset(factor)
    fine = bilinear_sample(np.asarray(field, dtype=np.float64), (xs - offset) / factor, (ys - offset) / factor)
    return fine * factor if scale_values else fine


def upsample_kernels(kernel: KernelMap, shape: Tuple[int, int], factor: float) -> KernelMap:
    return KernelMap(
        delta=upsample_field(kernel.delta, shape, factor, scale_values=True),
        weight=upsample_field(kernel.weight, shape, factor, scale_values=False),
        clamp_fraction=kernel.clamp_fraction,
    )


def _line_integral(image: np.ndarray, kernel: KernelMap, samples: Optional[int], ramp: bool) -> np.ndarray:
    height, width = image.shape[:2]
    xs, ys = pixel_grid(height, width)
    delta = kernel.delta if ramp else kernel.delta * config.ABLATION_SEGMENT_FRACTION
    if samples is None:
        counts = sample_count(_norm(delta))
    else:
        counts = np.full((height, width), max(int(samples), config.MIN_SAMPLES), dtype=np.int64)

    color = image.ndim == 3
    acc = np.zeros(image.shape, dtype=np.float64)
    total = np.zeros((height, width), dtype=np.float64)
    for n in range(int(counts.max())):
        active = n < counts
        fraction = n / np.maximum(counts - 1, 1)
        w = np.where(active, 1.0 - n / counts if ramp else 1.0, 0.0)
        sample = bilinear_sample(image, xs + fraction * delta[..., 0], ys + fraction * delta[..., 1])
        acc += (w[..., None] if color else w) * sample
        total += w
    return acc / (total[..., None] if color else total)


def render_pair_linear(
    image_a: np.ndarray,
    image_b: np.ndarray,
    kernel_a: KernelMap,
    kernel_b: KernelMap,
    samples: Optional[int] = None,
    ramp: bool = config.RAMP_WEIGHTS,
) -> np.ndarray:
    """
    Blur one frame pair with its line kernels.

    Each input is integrated along its segment with decreasing ramp
    weights 1 - n/N, normalized by their sum, and the two integrals are
    blended with the kernel weights. Samples are bilinear and clamp at
    the image border.

    With ramp=False every sample weighs the same and each segment is cut
    to ABLATION_SEGMENT_FRACTION of its length. The gap this ablation
    leaves in the middle of a trail comes from the shortened segments;
    uniform weights over full segments would still reach across.

    Args:
        image_a: First input at the kernels' resolution
        image_b: Second input
        kernel_a: Kernel map of image_a
        kernel_b: Kernel map of image_b
        samples: Fixed N; None picks N per pixel from the segment length
        ramp: False gives uniform weights over shortened segments

    Returns:
        np.ndarray: Blurred image
    """
    image_a = np.asarray(image_a, dtype=np.float64)
    image_b = np.asarray(image_b, dtype=np.float64)
    if image_a.shape != image_b.shape or image_a.shape[:2] != kernel_a.delta.shape[:2]:
        raise ValueError(
            f"Image and kernel shapes differ: {image_a.shape}, {image_b.shape}, {kernel_a.delta.shape}"
        )
    part_a = _line_integral(image_a, kernel_a, samples, ramp)
    part_b = _line_integral(image_b, kernel_b, samples, ramp)
    if image_a.ndim == 3:
        return kernel_a.weight[..., None] * part_a + kernel_b.weight[..., None] * part_b
    return kernel_a.weight * part_a + kernel_b.weight * part_b


def instantaneous_flow(forward: np.ndarray, backward: np.ndarray) -> np.ndarray:
    """
    Tangent of the motion path at a frame from its incoming and outgoing flow.

    The direction is that of forward + backward and the length is the
    harmonic mean of the two lengths, stretched by theta / sin(theta) up
    to a right angle. Beyond it the stretch fades back to 1 as the path
    doubles back. theta is the angle between the two flows.
    """
    forward = np.asarray(forward, dtype=np.float64)
    backward = np.asarray(backward, dtype=np.float64)
    length_f = _norm(forward)
    length_b = _norm(backward)
    total = forward + backward
    length_total = _norm(total)

    product = length_f * length_b
    cos_theta = np.where(product > 0, (forward * backward).sum(axis=-1) / np.maximum(product, 1e-300), 1.0)
    theta = np.arccos(np.clip(cos_theta, -1.0, 1.0))

    taper = np.where(theta <= math.pi / 2, 1.0, 1.0 - (2.0 * theta / math.pi - 1.0) ** 4)
    small = theta < config.SERIES_ANGLE
    arc = np.where(small, 1.0 + theta * theta / 6.0, theta / np.where(small, 1.0, np.maximum(np.sin(theta), 1e-12)))
    stretch = np.where(theta <= math.pi / 2, arc, 1.0 + (math.pi / 2 - 1.0) * taper)

    valid = (length_f > 0) & (length_b > 0) & (length_total > 1e-12) & (taper >= config.TAPER_EPS)
    harmonic = 2.0 * product / np.maximum(length_f + length_b, 1e-300)
    magnitude = np.where(valid, harmonic * stretch, 0.0)
    direction = total / np.maximum(length_total, 1e-300)[..., None]
    return np.where(valid[..., None], direction * magnitude[..., None], 0.0)


def build_spline(
    points: np.ndarray,
    forward: np.ndarray,
    delta_start: np.ndarray,
    delta_end: np.ndarray,
) -> HermitePath:
    """delta_end is the instantaneous flow of the next frame sampled at points + forward."""
    points = np.asarray(points, dtype=np.float64)
    return HermitePath(
        start=points,
        end=points + np.asarray(forward, dtype=np.float64),
        m0=np.asarray(delta_start, dtype=np.float64),
        m1=np.asarray(delta_end, dtype=np.float64),
    )


def extrapolate_flow_endpoint(a: np.ndarray, b: np.ndarray, c: np.ndarray) -> np.ndarray:
    """
    Next position D after the path A, B, C.

    A is mirrored across the perpendicular bisector of BC and the step
    from C to the mirror image is clamped to |BC|. D = C when B = C.
    """
    a, b, c = (np.asarray(v, dtype=np.float64) for v in (a, b, c))
    bc = c - b
    length = _norm(bc)
    degenerate = length < 1e-12
    normal = bc / np.where(degenerate, 1.0, length)[..., None]
    middle = 0.5 * (b + c)
    mirrored = a - 2.0 * ((a - middle) * normal).sum(axis=-1, keepdims=True) * normal
    step = mirrored - c
    step_length = _norm(step)
    scale = np.where(step_length > length, length / np.maximum(step_length, 1e-300), 1.0)
    d = c + step * scale[..., None]
    return np.where(degenerate[..., None], c, d)


def burst_flows(
    images: Sequence[ImageLike],
    forward: Optional[List[np.ndarray]] = None,
    backward: Optional[List[np.ndarray]] = None,
) -> List[FlowPairField]:
    """
    Incoming and outgoing flow of every frame of a chronological burst.

    forward[i] carries content of frame i to frame i+1 on frame i's grid;
    backward[i] carries content of frame i+1 back to frame i on frame
    i+1's grid. Missing lists are estimated. The outgoing flow of the last
    frame and the incoming flow of the first are extrapolated.

    Returns:
        List[FlowPairField]: One field per frame
    """
    count = len(images)
    if count < 2:
        raise ValueError(f"Burst flows need at least 2 frames, got {count}")
    if forward is None:
        forward = [estimate_flow(images[i], images[i + 1]) for i in range(count - 1)]
    if backward is None:
        backward = [estimate_flow(images[i + 1], images[i]) for i in range(count - 1)]
    if len(forward) != count - 1 or len(backward) != count - 1:
        raise ValueError(f"Expected {count - 1} flows per direction, got {len(forward)} and {len(backward)}")

    outgoing = [np.asarray(f, dtype=np.float64) for f in forward] + [None]
    incoming = [None] + [-np.asarray(g, dtype=np.float64) for g in backward]
    xs, ys = pixel_grid(*outgoing[0].shape[:2])
    grid = np.stack([xs, ys], axis=-1)

    # last frame: continue the path A -> B -> C = p
    b = grid - incoming[-1]
    a = b - _sample_field(incoming[-2], b) if count > 2 else 2.0 * b - grid
    outgoing[-1] = extrapolate_flow_endpoint(a, b, grid) - grid

    # first frame: the same construction backwards in time
    b = grid + outgoing[0]
    a = b + _sample_field(outgoing[1], b) if count > 2 else 2.0 * b - grid
    incoming[0] = grid - extrapolate_flow_endpoint(a, b, grid)

    return [FlowPairField(forward=f, backward=g) for f, g in zip(outgoing, incoming)]


def to_blur_space(pixels: np.ndarray, colorspace: str = config.BLUR_COLORSPACE, k: float = config.SOFT_GAMMA_K) -> np.ndarray:
    if colorspace == "soft_gamma":
        return soft_gamma(pixels, k)
    if colorspace == "srgb":
        return linear_to_srgb(pixels)
    if colorspace == "linear":
        return np.asarray(pixels, dtype=np.float64)
    raise ValueError(f"Unknown blur colorspace {colorspace}")


def from_blur_space(pixels: np.ndarray, colorspace: str = config.BLUR_COLORSPACE, k: float = config.SOFT_GAMMA_K) -> np.ndarray:
    if colorspace == "soft_gamma":
        return soft_gamma(pixels, 1.0 / k)
    if colorspace == "srgb":
        return srgb_to_linear(pixels)
    if colorspace == "linear":
        return np.asarray(pixels, dtype=np.float64)
    raise ValueError(f"Unknown blur colorspace {colorspace}")


def _pass_paths(
    flows: List[FlowPairField],
    deltas: List[np.ndarray],
    i: int,
    grid: np.ndarray,
    interpolation: str,
) -> Tuple[HermitePath, HermitePath]:
    outgoing = flows[i].forward
    incoming = flows[i + 1].backward
    if interpolation == "linear":
        return (
            build_spline(grid, outgoing, outgoing, outgoing),
            build_spline(grid, -incoming, -incoming, -incoming),
        )
    if interpolation != "spline":
        raise ValueError(f"Unknown interpolation {interpolation}")
    forward_path = build_spline(grid, outgoing, deltas[i], _sample_field(deltas[i + 1], grid + outgoing))
    backward_path = build_spline(grid, -incoming, -deltas[i + 1], -_sample_field(deltas[i], grid - incoming))
    return forward_path, backward_path


def _accumulate_pass(
    source: np.ndarray,
    path: HermitePath,
    grid: np.ndarray,
    weight: np.ndarray,
    samples: Optional[int],
    acc: np.ndarray,
    total: np.ndarray,
) -> None:
    length = float(_norm(path.end - path.start).max(initial=0.0))
    count = max(int(samples), config.MIN_SAMPLES) if samples is not None else sample_count(length)
    times = (np.arange(count) + 0.5) / count

    speed_sum = np.zeros(grid.shape[:2])
    for t in times:
        speed_sum += _norm(path.tangent(t))
    mean_speed = speed_sum / count

    for t in times:
        speed = _norm(path.tangent(t))
        normalized = np.where(mean_speed > 1e-9, speed / np.maximum(mean_speed, 1e-9), 1.0)
        w = normalized * (1.0 - t) * weight
        position = 2.0 * grid - path.at(t)
        acc += w[..., None] * bilinear_sample(source, position[..., 0], position[..., 1])
        total += w


def accumulate_burst(
    images: Sequence[np.ndarray],
    flows: List[FlowPairField],
    pair_weights: Optional[List[Tuple[np.ndarray, np.ndarray]]] = None,
    samples: Optional[int] = None,
    interpolation: str = config.INTERPOLATION,
    colorspace: str = config.BLUR_COLORSPACE,
    k: float = config.SOFT_GAMMA_K,
) -> np.ndarray:
    """
    Render the long exposure of a chronological aligned burst.

    Every frame pair contributes a forward pass from its first frame and
    a backward pass from its second. A pass walks the motion path with
    midpoint samples in t, each weighted by its normalized path speed and
    by a linear falloff away from its own frame, so the two passes of a
    pair share every instant of the interval. Accumulation runs in the
    chosen blur colorspace and is inverted at the end.

    Args:
        images: K + 1 aligned H x W x 3 linear images in time order
        flows: Per-frame flow fields at the images' resolution
        pair_weights: Optional (W_first, W_second) kernel weights per pair
        samples: Samples per pass; None adapts to the longest path
        interpolation: "spline" or "linear" motion paths
        colorspace: "soft_gamma", "linear" or "srgb"
        k: Soft gamma parameter

    Returns:
        np.ndarray: Blurred linear image

    Raises:
        ValueError: If fewer than two frames are given or the flows do not match
    """
    count = len(images)
    if count < 2:
        raise ValueError(f"Accumulation needs at least 2 frames, got {count}")
    if len(flows) != count:
        raise ValueError(f"Got {len(flows)} flow fields for {count} frames")

    encoded = [to_blur_space(np.asarray(image, dtype=np.float64), colorspace, k) for image in images]
    height, width = encoded[0].shape[:2]
    xs, ys = pixel_grid(height, width)
    grid = np.stack([xs, ys], axis=-1)
    deltas = [instantaneous_flow(f.forward, f.backward) for f in flows] if interpolation == "spline" else []

    acc = np.zeros(encoded[0].shape, dtype=np.float64)
    total = np.zeros((height, width), dtype=np.float64)
    for i in range(count - 1):
        w_first, w_second = pair_weights[i] if pair_weights is not None else (0.5, 0.5)
        forward_path, backward_path = _pass_paths(flows, deltas, i, grid, interpolation)
        for source, path, weight in ((encoded[i], forward_path, w_first), (encoded[i + 1], backward_path, w_second)):
            followed = trail_sources(path)
            weight = np.broadcast_to(np.asarray(weight, dtype=np.float64), (height, width)).ravel()[followed]
            _accumulate_pass(source, follow_paths(path, followed), grid, 2.0 * weight, samples, acc, total)
        logger.debug(f"Accumulated passes of pair {i}")

    blurred = acc / np.maximum(total, 1e-12)[..., None]
    return from_blur_space(blurred, colorspace, k).astype(np.float32)
