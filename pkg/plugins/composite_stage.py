import logging
from argparse import Namespace

from pipeline import composite_command
from utils import CommandRouter

from .run_pipeline import load_settings, pipeline_arguments

logger = logging.getLogger(__name__)

composite_router = pipeline_arguments(CommandRouter(name="composite"))

MESSAGES = {
    "done": "📸 Long exposure written to {path}",
    "error": "❌ Compositing failed: {error}",
}


@composite_router.command(help="Composite the rendered blur over the base frame and write the report")
async def composite(args: Namespace) -> int:
    try:
        settings = await load_settings(args)
        result = await composite_command(args.manifest, settings)
    except Exception as e:
        logger.error(MESSAGES["error"].format(error=e))
        return 1

    if result["status"] != "success":
        logger.error(MESSAGES["error"].format(error=result["message"]))
        return 1
    logger.info(MESSAGES["done"].format(path=result["report"].outputs["long_exposure"]))
    return 0
