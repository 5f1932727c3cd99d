import asyncio
import logging
import os
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

import config
from alignment import AlignmentSolution, align_background, align_foreground, warp_frame
from burst_io import Frame, build_pyramid, load_burst, load_manifest, write_png
from compositing import (
    annotate_face_motion,
    composite_final,
    composite_mask,
    compute_flow_mask,
    face_protection_mask,
    refine_mask_edge_aware,
)
from models import BurstManifest, CapturePlan, PipelineConfig, RunReport, SelectionPolicy
from motionblur import (
    FlowPairField,
    accumulate_burst,
    burst_flows,
    clamp_disparity,
    estimate_flow,
    from_blur_space,
    predict_kernels,
    render_pair_linear,
    to_blur_space,
    upsample_field,
    upsample_kernels,
)
from selection import apply_capture_plan, estimate_scene_velocity, plan_capture, select_frames
from store import ArtifactStore, flow_name
from subject import SubjectWeightMap, build_subject_map
from tracking import TrackSet, track_features
from utils import FallbackError, SelectionError, log_stage

logger = logging.getLogger(__name__)

HALF_FROM_LOW = config.LOW_RES_FACTOR // config.HALF_RES_FACTOR


@dataclass
class BurstContext:
    manifest: BurstManifest
    settings: PipelineConfig
    frames: List[Frame]
    pyramids: List[Dict[str, Frame]]

    @property
    def mode(self) -> str:
        return self.settings.mode or self.manifest.mode

    @property
    def base_index(self) -> int:
        return self.manifest.base_index

    @property
    def base(self) -> Frame:
        return self.frames[self.base_index]

    def level(self, index: int, level: str) -> Frame:
        return self.pyramids[index][level]


@dataclass
class RenderResult:
    blurred: np.ndarray
    flows: Dict[Tuple[int, int], np.ndarray]
    clamp_fraction: float


@log_stage("load")
async def load_context(manifest_path: str, settings: PipelineConfig) -> BurstContext:
    manifest = await load_manifest(manifest_path)
    frames = await load_burst(manifest, settings.workers)
    semaphore = asyncio.Semaphore(settings.workers)

    async def pyramid(frame: Frame) -> Dict[str, Frame]:
        async with semaphore:
            return await asyncio.to_thread(build_pyramid, frame)

    pyramids = await asyncio.gather(*[pyramid(frame) for frame in frames])
    return BurstContext(manifest=manifest, settings=settings, frames=frames, pyramids=list(pyramids))


def _stride_one_order(frame_count: int, base_index: int, mode: str) -> List[int]:
    past = list(range(base_index, -1, -1))
    if len(past) < 2 and mode == "foreground_blur":
        return list(range(base_index, frame_count))
    return past


def plan_order(ctx: BurstContext) -> Tuple[List[int], Optional[CapturePlan]]:
    """
    Burst indices to process, base first.

    With capture simulation on, the scene velocity over the frames next
    to the base decides the stride; otherwise every frame is used.

    Raises:
        SelectionError: If fewer than two frames can be processed
    """
    policy = ctx.settings.policy(ctx.mode)
    count = len(ctx.frames)
    order = _stride_one_order(count, ctx.base_index, ctx.mode)
    if len(order) < 2:
        raise SelectionError(f"No frame to pair with base frame {ctx.base_index} in {ctx.mode} mode")

    if ctx.settings.simulate_capture_plan:
        window = [ctx.level(i, "low") for i in order[:config.VELOCITY_WINDOW_FRAMES]]
        try:
            velocity = estimate_scene_velocity(window, policy, rng=ctx.settings.seed)
            plan = plan_capture(velocity, policy, ctx.manifest.frame_rate_hz)
            return apply_capture_plan(plan, count, ctx.base_index, ctx.mode), plan
        except SelectionError as e:
            logger.warning(f"Capture planning skipped: {e}")
    return order[:policy.max_frames], None


def subject_map_for(ctx: BurstContext) -> SubjectWeightMap:
    return build_subject_map(
        ctx.level(ctx.base_index, "low"),
        ctx.manifest,
        use_faces=ctx.settings.use_faces,
        largest_face_only=ctx.mode == "background_blur",
    )


def track_stage(ctx: BurstContext, order: List[int]) -> TrackSet:
    subject = subject_map_for(ctx)
    if ctx.mode == "background_blur":
        spawn = np.maximum(subject.w, config.TRACK_MIN_SPAWN_WEIGHT)
    else:
        spawn = np.ones_like(subject.w)
    return track_features(
        [ctx.level(i, "low") for i in order],
        weight_map=subject.w,
        spawn_map=spawn,
        rng=np.random.default_rng(ctx.settings.seed),
    )


def align_stage(track_set: TrackSet, mode: str, settings: PipelineConfig) -> AlignmentSolution:
    if mode == "background_blur":
        return align_background(track_set, settings.solver, settings.seed)
    return align_foreground(track_set)


def select_stage(
    order: List[int],
    track_set: TrackSet,
    solution: AlignmentSolution,
    policy: SelectionPolicy,
) -> Dict[str, Any]:
    count, length, forced = select_frames(track_set, solution, policy)
    return {
        "processing_order": list(order),
        "selected_indices": list(order[:count]),
        "count": count,
        "trail_length_pct": length,
        "forced": forced,
    }


async def _load_oracle_flow(ctx: BurstContext, source: int, target: int) -> np.ndarray:
    if not ctx.manifest.flow_dir:
        raise ValueError("flow_source is oracle_file but the manifest has no flow_dir")
    store = ArtifactStore(ctx.manifest.flow_dir)
    result = await store.load_buffer(flow_name(source, target))
    if result["status"] != "success":
        raise FileNotFoundError(result["message"])
    return result["array"].astype(np.float64)


async def _pair_flows(
    ctx: BurstContext,
    low: Dict[int, Frame],
    a: int,
    b: int,
    semaphore: asyncio.Semaphore,
) -> Tuple[np.ndarray, np.ndarray]:
    """Flow a -> b and b -> a of two aligned low-resolution frames."""
    if ctx.settings.flow_source == "oracle_file":
        return await _load_oracle_flow(ctx, a, b), await _load_oracle_flow(ctx, b, a)
    async with semaphore:
        forward = await asyncio.to_thread(estimate_flow, low[a], low[b])
        backward = await asyncio.to_thread(estimate_flow, low[b], low[a])
    logger.debug(f"Flow {a} <-> {b}: max {float(np.linalg.norm(forward, axis=-1).max()):.2f} px")
    return forward, backward


@log_stage("render")
async def render_stage(
    ctx: BurstContext,
    selected: List[int],
    solution: AlignmentSolution,
) -> RenderResult:
    """
    Warp the selected frames onto the base, predict kernels per adjacent
    pair in time order and render the blur at half resolution.

    Raises:
        DisparityOverflowError: If a pair's kernels had to be clamped too often
    """
    settings = ctx.settings
    positions = {index: position for position, index in enumerate(solution.frame_indices)}
    chronological = sorted(selected)
    semaphore = asyncio.Semaphore(settings.workers)

    async def warp(index: int, level: str) -> Frame:
        async with semaphore:
            return await asyncio.to_thread(warp_frame, ctx.level(index, level), solution, positions[index])

    low_frames = await asyncio.gather(*[warp(i, "low") for i in chronological])
    half_frames = await asyncio.gather(*[warp(i, "half") for i in chronological])
    low = dict(zip(chronological, low_frames))
    pairs = list(zip(chronological[:-1], chronological[1:]))
    pair_flows = await asyncio.gather(*[_pair_flows(ctx, low, a, b, semaphore) for a, b in pairs])

    kernels = []
    for (a, b), (forward, backward) in zip(pairs, pair_flows):
        kernels.append(predict_kernels(
            low[a], low[b],
            max_disparity_px=settings.max_disparity_px,
            max_clamp_fraction=settings.max_clamp_fraction,
            flows=(backward, forward),
        ))
    clamp_fraction = max((kernel_a.clamp_fraction for kernel_a, _ in kernels), default=0.0)

    half_shape = half_frames[0].pixels.shape[:2]
    half_images = [frame.pixels for frame in half_frames]
    colorspace, k = settings.blur_colorspace, settings.color.soft_gamma_k
    if settings.renderer == "spline":
        # raw pair flows: accumulate_burst spreads the motion paths itself
        low_fields = burst_flows(
            [frame.pixels for frame in low_frames],
            forward=[clamp_disparity(forward, settings.max_disparity_px)[0] for forward, _ in pair_flows],
            backward=[clamp_disparity(backward, settings.max_disparity_px)[0] for _, backward in pair_flows],
        )
        half_fields = [
            FlowPairField(
                forward=upsample_field(field.forward, half_shape, HALF_FROM_LOW, scale_values=True),
                backward=upsample_field(field.backward, half_shape, HALF_FROM_LOW, scale_values=True),
                source=settings.flow_source,
            )
            for field in low_fields
        ]
        weights = [
            (
                upsample_field(kernel_a.weight, half_shape, HALF_FROM_LOW, scale_values=False),
                upsample_field(kernel_b.weight, half_shape, HALF_FROM_LOW, scale_values=False),
            )
            for kernel_a, kernel_b in kernels
        ]
        blurred = await asyncio.to_thread(
            accumulate_burst, half_images, half_fields, weights, settings.samples,
            settings.interpolation, colorspace, k,
        )
    else:
        encoded = [to_blur_space(image, colorspace, k) for image in half_images]
        renders = [
            render_pair_linear(
                encoded[i], encoded[i + 1],
                upsample_kernels(kernel_a, half_shape, HALF_FROM_LOW),
                upsample_kernels(kernel_b, half_shape, HALF_FROM_LOW),
                samples=settings.samples,
                ramp=settings.ramp_weights,
            )
            for i, (kernel_a, kernel_b) in enumerate(kernels)
        ]
        blurred = from_blur_space(np.mean(renders, axis=0), colorspace, k).astype(np.float32)

    flows = {}
    for (a, b), (forward, backward) in zip(pairs, pair_flows):
        flows[(a, b)] = forward
        flows[(b, a)] = backward
    logger.info(f"Rendered {len(pairs)} pairs with the {settings.renderer} renderer")
    return RenderResult(blurred=blurred, flows=flows, clamp_fraction=clamp_fraction)


@dataclass
class CompositeResult:
    image: Frame
    masks: Dict[str, np.ndarray]


def composite_stage(
    ctx: BurstContext,
    blurred: np.ndarray,
    flows: List[np.ndarray],
    track_set: TrackSet,
    solution: AlignmentSolution,
) -> CompositeResult:
    base_half = ctx.level(ctx.base_index, "half")
    half_shape = (base_half.height, base_half.width)

    flow_mask = compute_flow_mask(flows)
    m_flow = upsample_field(flow_mask.m_flow, half_shape, HALF_FROM_LOW, scale_values=False)
    refined = refine_mask_edge_aware(m_flow, base_half.pixels)

    faces = annotate_face_motion(list(ctx.manifest.faces), track_set, solution)
    protection = face_protection_mask(faces, half_shape, factor=HALF_FROM_LOW)
    mask = composite_mask(refined, protection)
    image = composite_final(ctx.base, blurred, mask)
    return CompositeResult(
        image=image,
        masks={"m_flow": m_flow, "m_flow_refined": refined, "protection": protection, "composite": mask},
    )


def _plan_dict(order: List[int], plan: Optional[CapturePlan]) -> Dict[str, Any]:
    return {"processing_order": list(order), "capture_plan": plan.model_dump() if plan is not None else None}


async def save_render(store: ArtifactStore, render: RenderResult) -> Dict[str, Any]:
    await store.save_json("render.json", {
        "clamp_fraction": render.clamp_fraction,
        "flows": [[a, b] for a, b in render.flows],
    })
    for (a, b), flow in render.flows.items():
        await store.save_buffer(flow_name(a, b), flow)
    return await store.save_buffer("blurred.raw", render.blurred)


async def _write_long_exposure(ctx: BurstContext, result: CompositeResult, store: Optional[ArtifactStore]) -> str:
    path = await write_png(
        os.path.join(ctx.settings.output_dir, config.LONG_EXPOSURE_NAME),
        result.image.pixels,
        ctx.settings.output_bit_depth,
    )
    if store is not None:
        for name, mask in result.masks.items():
            await store.save_mask(f"mask_{name}.png", mask)
    return path


async def _write_conventional(ctx: BurstContext) -> str:
    return await write_png(
        os.path.join(ctx.settings.output_dir, config.CONVENTIONAL_NAME),
        ctx.base.pixels,
        ctx.settings.output_bit_depth,
    )


@log_stage("run")
async def run(manifest_path: str, settings: Optional[PipelineConfig] = None) -> RunReport:
    """
    Produce the conventional and the long-exposure image of a burst.

    The conventional image (the base frame) is always written. Any
    FallbackError on the way to the long exposure is recorded in the
    report instead of being raised.

    Args:
        manifest_path: Burst manifest JSON
        settings: Run configuration

    Returns:
        RunReport: What was selected, measured and written
    """
    settings = settings or PipelineConfig()
    ctx = await load_context(manifest_path, settings)
    store = ArtifactStore(settings.work_dir) if settings.debug_dumps else None
    report = RunReport(mode=ctx.mode, frame_count=len(ctx.frames), base_index=ctx.base_index)
    report.outputs["conventional"] = await _write_conventional(ctx)

    try:
        order, plan = plan_order(ctx)
        report.processing_order = order
        report.capture_plan = plan
        track_set = track_stage(ctx, order)
        if store is not None:
            await store.save_json("plan.json", _plan_dict(order, plan))
            await store.save_tracks(track_set)

        solution = align_stage(track_set, ctx.mode, settings)
        report.solver_costs = list(solution.costs)
        if store is not None:
            await store.save_transforms(solution)

        selection = select_stage(order, track_set, solution, settings.policy(ctx.mode))
        report.selected_indices = selection["selected_indices"]
        report.trail_length_pct = selection["trail_length_pct"]
        report.selection_forced = selection["forced"]
        if store is not None:
            await store.save_selection(selection)

        count = selection["count"]
        render = await render_stage(ctx, selection["selected_indices"], solution.truncate(count))
        report.clamp_fraction = render.clamp_fraction
        if store is not None:
            await save_render(store, render)

        result = composite_stage(
            ctx, render.blurred, list(render.flows.values()), track_set.truncate(count), solution.truncate(count)
        )
        report.outputs["long_exposure"] = await _write_long_exposure(ctx, result, store)
    except FallbackError as e:
        logger.warning(f"Falling back to the conventional image: {e}")
        report.fallback = True
        report.fallback_reason = e.reason

    await ArtifactStore(settings.work_dir).save_report(report, settings.output_dir)
    return report


def _missing(result: Dict[str, Any]) -> Dict[str, Any]:
    return {"status": "error", "message": f"Missing upstream artifact: {result['message']}"}


async def track_command(manifest_path: str, settings: PipelineConfig) -> Dict[str, Any]:
    """Plan the processing order and track features; writes plan.json and tracks.json."""
    ctx = await load_context(manifest_path, settings)
    store = ArtifactStore(settings.work_dir)
    order, plan = plan_order(ctx)
    track_set = track_stage(ctx, order)
    await store.save_json("plan.json", _plan_dict(order, plan))
    saved = await store.save_tracks(track_set)
    if saved["status"] != "success":
        return saved
    return {"status": "success", "order": order, "tracks": len(track_set.tracks)}


async def align_command(manifest_path: str, settings: PipelineConfig) -> Dict[str, Any]:
    """Align the dumped tracks; writes transforms.json."""
    manifest = await load_manifest(manifest_path)
    store = ArtifactStore(settings.work_dir)
    tracks = await store.load_tracks()
    if tracks["status"] != "success":
        return _missing(tracks)
    solution = align_stage(tracks["tracks"], settings.mode or manifest.mode, settings)
    saved = await store.save_transforms(solution)
    if saved["status"] != "success":
        return saved
    return {"status": "success", "frames": len(solution.similarities), "costs": solution.costs}


async def select_command(manifest_path: str, settings: PipelineConfig) -> Dict[str, Any]:
    """Pick the frame count from the dumped tracks and transforms; writes selection.json."""
    manifest = await load_manifest(manifest_path)
    store = ArtifactStore(settings.work_dir)
    plan = await store.load_json("plan.json")
    tracks = await store.load_tracks()
    transforms = await store.load_transforms()
    for result in (plan, tracks, transforms):
        if result["status"] != "success":
            return _missing(result)
    policy = settings.policy(settings.mode or manifest.mode)
    selection = select_stage(plan["data"]["processing_order"], tracks["tracks"], transforms["solution"], policy)
    saved = await store.save_selection(selection)
    if saved["status"] != "success":
        return saved
    return {"status": "success", **selection}


async def render_command(manifest_path: str, settings: PipelineConfig) -> Dict[str, Any]:
    """Render the blur of the selected frames; writes blurred.raw, the pair flows and render.json."""
    store = ArtifactStore(settings.work_dir)
    selection = await store.load_selection()
    transforms = await store.load_transforms()
    for result in (selection, transforms):
        if result["status"] != "success":
            return _missing(result)
    ctx = await load_context(manifest_path, settings)
    count = selection["selection"]["count"]
    render = await render_stage(ctx, selection["selection"]["selected_indices"], transforms["solution"].truncate(count))
    saved = await save_render(store, render)
    if saved["status"] != "success":
        return saved
    return {"status": "success", "pairs": len(render.flows) // 2, "clamp_fraction": render.clamp_fraction}


async def composite_command(manifest_path: str, settings: PipelineConfig) -> Dict[str, Any]:
    """Composite the dumped blur over the base frame; writes both images and the report."""
    store = ArtifactStore(settings.work_dir)
    loaded = {
        "plan": await store.load_json("plan.json"),
        "tracks": await store.load_tracks(),
        "transforms": await store.load_transforms(),
        "selection": await store.load_selection(),
        "render": await store.load_json("render.json"),
        "blurred": await store.load_buffer("blurred.raw"),
    }
    for result in loaded.values():
        if result["status"] != "success":
            return _missing(result)

    flows = []
    for a, b in loaded["render"]["data"]["flows"]:
        flow = await store.load_buffer(flow_name(a, b))
        if flow["status"] != "success":
            return _missing(flow)
        flows.append(flow["array"].astype(np.float64))

    ctx = await load_context(manifest_path, settings)
    selection = loaded["selection"]["selection"]
    count = selection["count"]
    solution = loaded["transforms"]["solution"]
    plan = loaded["plan"]["data"]["capture_plan"]
    report = RunReport(
        mode=ctx.mode,
        frame_count=len(ctx.frames),
        base_index=ctx.base_index,
        processing_order=loaded["plan"]["data"]["processing_order"],
        selected_indices=selection["selected_indices"],
        trail_length_pct=selection["trail_length_pct"],
        selection_forced=selection["forced"],
        capture_plan=CapturePlan(**plan) if plan is not None else None,
        solver_costs=solution.costs,
        clamp_fraction=loaded["render"]["data"]["clamp_fraction"],
    )
    report.outputs["conventional"] = await _write_conventional(ctx)
    result = composite_stage(
        ctx, loaded["blurred"]["array"], flows,
        loaded["tracks"]["tracks"].truncate(count), solution.truncate(count),
    )
    report.outputs["long_exposure"] = await _write_long_exposure(ctx, result, store if settings.debug_dumps else None)
    await store.save_report(report, settings.output_dir)
    return {"status": "success", "report": report}
