import logging
from argparse import Namespace

from pipeline import select_command
from utils import CommandRouter

from .run_pipeline import load_settings, pipeline_arguments

logger = logging.getLogger(__name__)

select_router = pipeline_arguments(CommandRouter(name="select"))

MESSAGES = {
    "done": "🌠 Selected frames {indices}, trail {length:.2f}% of the diagonal",
    "forced": "⚠️ Frame cap or end of burst reached before the trail target",
    "error": "❌ Selection failed: {error}",
}


@select_router.command(help="Pick the number of frames from the dumped tracks and transforms")
async def select(args: Namespace) -> int:
    try:
        settings = await load_settings(args)
        result = await select_command(args.manifest, settings)
    except Exception as e:
        logger.error(MESSAGES["error"].format(error=e))
        return 1

    if result["status"] != "success":
        logger.error(MESSAGES["error"].format(error=result["message"]))
        return 1
    logger.info(MESSAGES["done"].format(indices=result["selected_indices"], length=result["trail_length_pct"]))
    if result["forced"]:
        logger.warning(MESSAGES["forced"])
    return 0
