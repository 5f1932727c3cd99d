import json
import logging
from argparse import Namespace
from typing import Any, Dict

import aiofiles

from models import PipelineConfig
from pipeline import run
from utils import CommandRouter

logger = logging.getLogger(__name__)

run_router = CommandRouter(name="run")

MESSAGES = {
    "done": "📸 Long exposure written to {path}",
    "trail": "🌠 {count} frames {indices}, trail {length:.2f}% of the diagonal",
    "forced": "⚠️ Frame cap or end of burst reached before the trail target",
    "fallback": "🔙 Kept the conventional image only: {reason}",
    "config_error": "❌ Bad configuration: {error}",
    "error": "❌ Pipeline failed: {error}",
}

# flag -> (PipelineConfig field, argparse options)
OVERRIDES = {
    "--mode": ("mode", {"choices": ["foreground_blur", "background_blur"]}),
    "--seed": ("seed", {"type": int}),
    "--workers": ("workers", {"type": int}),
    "--output-dir": ("output_dir", {}),
    "--work-dir": ("work_dir", {}),
    "--flow-source": ("flow_source", {"choices": ["classical", "oracle_file"]}),
    "--renderer": ("renderer", {"choices": ["spline", "line_kernel"]}),
    "--interpolation": ("interpolation", {"choices": ["spline", "linear"]}),
    "--blur-colorspace": ("blur_colorspace", {"choices": ["soft_gamma", "linear", "srgb"]}),
    "--soft-gamma-k": ("soft_gamma_k", {"type": float}),
    "--max-disparity-px": ("max_disparity_px", {"type": float}),
    "--max-clamp-fraction": ("max_clamp_fraction", {"type": float}),
    "--samples": ("samples", {"type": int}),
    "--percentile": ("percentile", {"type": float}),
    "--target-pct-diag": ("target_pct_diag", {"type": float}),
    "--max-frames": ("max_frames", {"type": int}),
    "--output-bit-depth": ("output_bit_depth", {"type": int, "choices": [8, 16]}),
}

SWITCHES = {
    "--no-ramp": ("ramp_weights", False),
    "--no-faces": ("use_faces", False),
    "--no-capture-plan": ("simulate_capture_plan", False),
    "--debug-dumps": ("debug_dumps", True),
}


def pipeline_arguments(router: CommandRouter) -> CommandRouter:
    """Manifest, config file and override flags shared by every pipeline command."""
    router.argument("manifest", help="Burst manifest JSON")
    router.argument("--config", help="PipelineConfig JSON file; flags override its values")
    router.argument("--lambda-b", type=float, help="Background parallelism weight, 0 disables it")
    for flag, (field, options) in OVERRIDES.items():
        router.argument(flag, dest=field, default=None, **options)
    for flag, (field, value) in SWITCHES.items():
        router.argument(flag, dest=field, action="store_const", const=value, default=None)
    return router


async def load_settings(args: Namespace) -> PipelineConfig:
    """
    Build the run configuration from the optional --config file and the flags.

    Raises:
        FileNotFoundError: If the config file does not exist
        ValueError: If the file or a flag holds an invalid value
    """
    data: Dict[str, Any] = {}
    if args.config:
        async with aiofiles.open(args.config, "r") as handle:
            data = json.loads(await handle.read())

    for field, _ in list(OVERRIDES.values()) + list(SWITCHES.values()):
        value = getattr(args, field, None)
        if value is not None:
            data[field] = value
    if args.lambda_b is not None:
        data["solver"] = {**data.get("solver", {}), "lambda_b": args.lambda_b}
    return PipelineConfig.model_validate(data)


pipeline_arguments(run_router)


@run_router.command(help="Run every stage and write the conventional and long-exposure images")
async def run_command(args: Namespace) -> int:
    try:
        settings = await load_settings(args)
    except Exception as e:
        logger.error(MESSAGES["config_error"].format(error=e))
        return 1

    try:
        report = await run(args.manifest, settings)
    except Exception as e:
        logger.error(MESSAGES["error"].format(error=e))
        return 1

    if report.fallback:
        logger.warning(MESSAGES["fallback"].format(reason=report.fallback_reason))
        return 2
    logger.info(MESSAGES["trail"].format(
        count=len(report.selected_indices),
        indices=report.selected_indices,
        length=report.trail_length_pct,
    ))
    if report.selection_forced:
        logger.warning(MESSAGES["forced"])
    logger.info(MESSAGES["done"].format(path=report.outputs["long_exposure"]))
    return 0
