import logging
from argparse import Namespace

from pipeline import track_command
from utils import CommandRouter, FallbackError

from .run_pipeline import load_settings, pipeline_arguments

logger = logging.getLogger(__name__)

track_router = pipeline_arguments(CommandRouter(name="track"))

MESSAGES = {
    "done": "🎯 {tracks} tracks over frames {order}",
    "fallback": "🔙 Tracking cannot continue: {reason}",
    "error": "❌ Tracking failed: {error}",
}


@track_router.command(help="Plan the processing order and track features into the work directory")
async def track(args: Namespace) -> int:
    try:
        settings = await load_settings(args)
        result = await track_command(args.manifest, settings)
    except FallbackError as e:
        logger.warning(MESSAGES["fallback"].format(reason=e.reason))
        return 2
    except Exception as e:
        logger.error(MESSAGES["error"].format(error=e))
        return 1

    if result["status"] != "success":
        logger.error(MESSAGES["error"].format(error=result["message"]))
        return 1
    logger.info(MESSAGES["done"].format(tracks=result["tracks"], order=result["order"]))
    return 0
