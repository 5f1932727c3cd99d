import logging
from argparse import Namespace

from pipeline import align_command
from utils import CommandRouter, FallbackError

from .run_pipeline import load_settings, pipeline_arguments

logger = logging.getLogger(__name__)

align_router = pipeline_arguments(CommandRouter(name="align"))

MESSAGES = {
    "done": "📐 Aligned {frames} frames",
    "costs": "📉 Solver costs {costs}",
    "fallback": "🔙 Alignment gave up: {reason}",
    "error": "❌ Alignment failed: {error}",
}


@align_router.command(help="Align the dumped tracks and write transforms.json")
async def align(args: Namespace) -> int:
    try:
        settings = await load_settings(args)
        result = await align_command(args.manifest, settings)
    except FallbackError as e:
        logger.warning(MESSAGES["fallback"].format(reason=e.reason))
        return 2
    except Exception as e:
        logger.error(MESSAGES["error"].format(error=e))
        return 1

    if result["status"] != "success":
        logger.error(MESSAGES["error"].format(error=result["message"]))
        return 1
    logger.info(MESSAGES["done"].format(frames=result["frames"]))
    if result["costs"]:
        logger.info(MESSAGES["costs"].format(costs=[round(c, 4) for c in result["costs"]]))
    return 0
