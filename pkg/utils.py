import asyncio
import logging
import math
import time
from functools import wraps
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np

logger = logging.getLogger(__name__)


class PipelineError(Exception):
    """Base class for errors raised by the long-exposure pipeline."""


class FallbackError(PipelineError):
    """
    Raised when the burst cannot produce a trustworthy long exposure.

    The pipeline answers it by writing only the conventional (sharp) output.

    Args:
        reason: Short machine-readable reason stored in the run report
    """

    def __init__(self, reason: str, detail: str = ""):
        super().__init__(f"{reason}: {detail}" if detail else reason)
        self.reason = reason
        self.detail = detail


class NoSubjectError(FallbackError):
    def __init__(self, detail: str = ""):
        super().__init__("no_subject_tracks", detail)


class SolverDivergenceError(FallbackError):
    def __init__(self, detail: str = ""):
        super().__init__("solver_divergence", detail)


class DisparityOverflowError(FallbackError):
    def __init__(self, detail: str = ""):
        super().__init__("disparity_overflow", detail)


class SelectionError(PipelineError):
    pass


def log_stage(stage: str):
    """
    Decorator that logs start, end and elapsed time of a pipeline stage.
    Works for both coroutines and plain functions.

    Args:
        stage: Name printed in the log lines

    Returns:
        Callable: Decorator wrapping the stage function

    Example:
        @log_stage("tracking")
        async def track(...):
            ...
    """
    def decorator(func: Callable):
        if asyncio.iscoroutinefunction(func):
            @wraps(func)
            async def async_wrapper(*args: Any, **kwargs: Any):
                started = time.perf_counter()
                logger.info(f"Stage {stage} started")
                result = await func(*args, **kwargs)
                logger.info(f"Stage {stage} finished in {time.perf_counter() - started:.2f}s")
                return result
            return async_wrapper

        @wraps(func)
        def wrapper(*args: Any, **kwargs: Any):
            started = time.perf_counter()
            logger.debug(f"Stage {stage} started")
            result = func(*args, **kwargs)
            logger.debug(f"Stage {stage} finished in {time.perf_counter() - started:.2f}s")
            return result
        return wrapper
    return decorator


class CommandRouter:
    """
    Groups one CLI subcommand: its help text, its arguments and its handler.
    Plugins create a router and app.py attaches them to the argument parser.
    """

    def __init__(self, name: str):
        self.name = name
        self.help = ""
        self.arguments: List[Tuple[Tuple[Any, ...], Dict[str, Any]]] = []
        self.handler: Optional[Callable] = None

    def argument(self, *args: Any, **kwargs: Any) -> "CommandRouter":
        self.arguments.append((args, kwargs))
        return self

    def command(self, help: str = ""):
        def decorator(func: Callable):
            self.help = help
            self.handler = func
            return func
        return decorator

    def attach(self, subparsers: Any) -> None:
        if self.handler is None:
            raise ValueError(f"Router {self.name} has no handler")
        parser = subparsers.add_parser(self.name, help=self.help)
        for args, kwargs in self.arguments:
            parser.add_argument(*args, **kwargs)
        parser.set_defaults(handler=self.handler)


def bilinear_sample(image: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """
    Sample an image at real-valued positions with bilinear interpolation.
    Positions outside the image clamp to the nearest edge pixel.

    Args:
        image: H x W or H x W x C array
        x: Column coordinates, any shape
        y: Row coordinates, same shape as x

    Returns:
        np.ndarray: Samples with shape x.shape (+ C)
    """
    height, width = image.shape[:2]
    x = np.clip(np.asarray(x, dtype=np.float64), 0.0, width - 1)
    y = np.clip(np.asarray(y, dtype=np.float64), 0.0, height - 1)
    x0 = np.floor(x).astype(np.int64)
    y0 = np.floor(y).astype(np.int64)
    x1 = np.minimum(x0 + 1, width - 1)
    y1 = np.minimum(y0 + 1, height - 1)
    fx = x - x0
    fy = y - y0
    if image.ndim == 3:
        fx = fx[..., None]
        fy = fy[..., None]
    top = image[y0, x0] * (1.0 - fx) + image[y0, x1] * fx
    bottom = image[y1, x0] * (1.0 - fx) + image[y1, x1] * fx
    return (top * (1.0 - fy) + bottom * fy).astype(image.dtype, copy=False)


def pixel_grid(height: int, width: int) -> Tuple[np.ndarray, np.ndarray]:
    ys, xs = np.mgrid[0:height, 0:width]
    return xs.astype(np.float64), ys.astype(np.float64)


def luminance(pixels: np.ndarray) -> np.ndarray:
    if pixels.ndim == 2:
        return pixels
    return pixels[..., 0] * 0.2126 + pixels[..., 1] * 0.7152 + pixels[..., 2] * 0.0722


def percentile(values: Any, q: float) -> float:
    values = np.asarray(values, dtype=np.float64).ravel()
    if values.size == 0:
        return 0.0
    return float(np.percentile(values, q))


def image_diagonal(width: int, height: int) -> float:
    return math.hypot(width, height)


def level_offset(factor: float) -> float:
    # pixel centres: fine = factor * coarse + offset
    return (factor - 1.0) / 2.0
