import logging
from argparse import Namespace

from pipeline import render_command
from utils import CommandRouter, FallbackError

from .run_pipeline import load_settings, pipeline_arguments

logger = logging.getLogger(__name__)

render_router = pipeline_arguments(CommandRouter(name="render"))

MESSAGES = {
    "done": "🎞️ Rendered {pairs} pairs, {clamp:.1%} of kernels clamped",
    "fallback": "🔙 Motion too large to render: {reason}",
    "error": "❌ Rendering failed: {error}",
}


@render_router.command(help="Render the blur of the selected frames at half resolution")
async def render(args: Namespace) -> int:
    try:
        settings = await load_settings(args)
        result = await render_command(args.manifest, settings)
    except FallbackError as e:
        logger.warning(MESSAGES["fallback"].format(reason=e.reason))
        return 2
    except Exception as e:
        logger.error(MESSAGES["error"].format(error=e))
        return 1

    if result["status"] != "success":
        logger.error(MESSAGES["error"].format(error=result["message"]))
        return 1
    logger.info(MESSAGES["done"].format(pairs=result["pairs"], clamp=result["clamp_fraction"]))
    return 0
