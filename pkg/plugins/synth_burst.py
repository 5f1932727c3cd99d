import logging
from argparse import ArgumentTypeError, Namespace

import config
from synth import SyntheticDisc, SyntheticScene, write_burst
from utils import CommandRouter

logger = logging.getLogger(__name__)

synth_router = CommandRouter(name="synth")

MESSAGES = {
    "done": "🧪 Synthetic burst of {frames} frames, manifest at {path}",
    "error": "❌ Could not write the synthetic burst: {error}",
}


def parse_disc(value: str) -> SyntheticDisc:
    """Disc given as "x,y,radius[,vx,vy]" in full-resolution pixels."""
    try:
        numbers = [float(v) for v in value.split(",")]
    except ValueError:
        raise ArgumentTypeError(f"Disc must be comma-separated numbers, got {value!r}")
    if len(numbers) not in (3, 5):
        raise ArgumentTypeError(f"Disc needs x,y,radius or x,y,radius,vx,vy, got {value!r}")
    velocity = (numbers[3], numbers[4]) if len(numbers) == 5 else (0.0, 0.0)
    return SyntheticDisc(center=(numbers[0], numbers[1]), radius=numbers[2], velocity=velocity)


synth_router.argument("directory", help="Output directory for the frames and manifest.json")
synth_router.argument("--width", type=int, default=config.SYNTH_WIDTH)
synth_router.argument("--height", type=int, default=config.SYNTH_HEIGHT)
synth_router.argument("--frames", type=int, default=config.SYNTH_FRAMES)
synth_router.argument("--seed", type=int, default=config.SYNTH_SEED)
synth_router.argument("--texture-sigma", type=float, default=config.SYNTH_TEXTURE_SIGMA_PX)
synth_router.argument("--camera-velocity", type=float, nargs=2, default=(0.0, 0.0), metavar=("DX", "DY"))
synth_router.argument("--camera-roll", type=float, default=0.0, help="Degrees per frame")
synth_router.argument("--disc", type=parse_disc, action="append", default=[], help="x,y,radius[,vx,vy]")
synth_router.argument("--mode", choices=["foreground_blur", "background_blur"], default="foreground_blur")
synth_router.argument("--base-index", type=int, default=None)
synth_router.argument("--bit-depth", type=int, choices=[8, 16], default=8)


@synth_router.command(help="Write a synthetic burst with a textured background and moving discs")
async def synth(args: Namespace) -> int:
    try:
        scene = SyntheticScene(
            width=args.width,
            height=args.height,
            frames=args.frames,
            seed=args.seed,
            texture_sigma_px=args.texture_sigma,
            camera_velocity=tuple(args.camera_velocity),
            camera_roll_deg=args.camera_roll,
            discs=args.disc,
            mode=args.mode,
        )
        path = await write_burst(scene, args.directory, base_index=args.base_index, bit_depth=args.bit_depth)
    except Exception as e:
        logger.error(MESSAGES["error"].format(error=e))
        return 1
    logger.info(MESSAGES["done"].format(frames=scene.frames, path=path))
    return 0
