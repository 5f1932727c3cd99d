import argparse
import asyncio
import logging
import sys
from typing import List, Optional

logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="longexposure",
        description="Long-exposure photographs from handheld bursts",
    )
    parser.add_argument("--verbose", action="store_true", help="Log at DEBUG level")
    subparsers = parser.add_subparsers(dest="command", required=True)

    logger.info("Loading command routers...")
    logger.info("Loading run_router...")
    from plugins.run_pipeline import run_router

    logger.info("Loading track_router...")
    from plugins.track_stage import track_router

    logger.info("Loading align_router...")
    from plugins.align_stage import align_router

    logger.info("Loading select_router...")
    from plugins.select_stage import select_router

    logger.info("Loading render_router...")
    from plugins.render_stage import render_router

    logger.info("Loading composite_router...")
    from plugins.composite_stage import composite_router

    logger.info("Loading synth_router...")
    from plugins.synth_burst import synth_router

    for router in (run_router, track_router, align_router, select_router, render_router, composite_router, synth_router):
        router.attach(subparsers)
    return parser


async def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.verbose:
        logging.getLogger().setLevel(logging.DEBUG)
    logger.info(f"Running {args.command}...")
    return await args.handler(args)


if __name__ == "__main__":
    sys.exit(asyncio.run(main()))
