import math
from typing import Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

import config

Mode = Literal["foreground_blur", "background_blur"]


class FaceRegion(BaseModel):
    """Feathered face region in low-resolution pixel coordinates."""

    center: Tuple[float, float]
    inner_radius: float = Field(gt=0)
    outer_radius: float = Field(gt=0)
    motion_mean: Optional[float] = None

    @model_validator(mode="after")
    def check_radii(self) -> "FaceRegion":
        if self.inner_radius >= self.outer_radius:
            raise ValueError(
                f"inner_radius {self.inner_radius} must be smaller than outer_radius {self.outer_radius}"
            )
        return self

    @property
    def area(self) -> float:
        return math.pi * self.outer_radius ** 2


class ColorParams(BaseModel):
    soft_gamma_k: float = Field(config.SOFT_GAMMA_K, gt=0)


class BurstManifest(BaseModel):
    """
    Burst description read from a JSON manifest.

    Paths are kept as written; burst_io.load_manifest resolves relative
    paths against the manifest location. When base_index is omitted the
    most recently captured (last) frame is the base.
    """

    model_config = ConfigDict(extra="forbid")

    frame_paths: List[str]
    base_index: Optional[int] = None
    frame_rate_hz: float = Field(config.FRAME_RATE_HZ, gt=0)
    mode: Mode = "foreground_blur"
    linear_input: bool = False
    faces: List[FaceRegion] = Field(default_factory=list)
    saliency_path: Optional[str] = None
    face_mask_path: Optional[str] = None
    segmentation_path: Optional[str] = None
    flow_dir: Optional[str] = None

    @field_validator("frame_paths")
    @classmethod
    def check_frame_count(cls, value: List[str]) -> List[str]:
        if len(value) < config.MIN_BURST_FRAMES:
            raise ValueError(f"A burst needs at least {config.MIN_BURST_FRAMES} frames, got {len(value)}")
        return value

    @model_validator(mode="after")
    def resolve_base_index(self) -> "BurstManifest":
        if self.base_index is None:
            self.base_index = len(self.frame_paths) - 1
        if not 0 <= self.base_index < len(self.frame_paths):
            raise ValueError(
                f"base_index {self.base_index} out of range for {len(self.frame_paths)} frames"
            )
        return self


class SolverParams(BaseModel):
    lambda_f: float = Field(config.LAMBDA_F, ge=0)
    lambda_b: float = Field(config.LAMBDA_B, ge=0)
    roll_fraction: float = Field(config.ROLL_FRACTION, ge=0, le=1)
    max_iters: int = Field(config.SOLVER_MAX_ITERS, ge=1)
    tol: float = Field(config.SOLVER_TOL, gt=0)
    damping: float = Field(config.SOLVER_DAMPING, gt=0)


class SelectionPolicy(BaseModel):
    percentile: float = Field(gt=0, le=100)
    target_pct_diag: float = Field(gt=0)
    max_frames: int = Field(ge=2)

    @classmethod
    def for_mode(cls, mode: str) -> "SelectionPolicy":
        if mode == "background_blur":
            return cls(
                percentile=config.BG_PERCENTILE,
                target_pct_diag=config.BG_TARGET_PCT_DIAG,
                max_frames=config.BG_MAX_PAST_FRAMES + 1,
            )
        return cls(
            percentile=config.FG_PERCENTILE,
            target_pct_diag=config.FG_TARGET_PCT_DIAG,
            max_frames=config.FG_MAX_FRAMES,
        )


class CapturePlan(BaseModel):
    duration_s: float = Field(ge=0, le=config.MAX_CAPTURE_DURATION_S)
    stride: int = Field(ge=1)
    span_frames: int = Field(ge=1)
    selected_indices: List[int]

    @field_validator("selected_indices")
    @classmethod
    def check_selected(cls, value: List[int]) -> List[int]:
        if len(value) > config.FG_MAX_FRAMES:
            raise ValueError(f"At most {config.FG_MAX_FRAMES} frames can be selected, got {len(value)}")
        return value


class PipelineConfig(BaseModel):
    """
    Run configuration. Defaults come from config.py; a JSON file and then
    command-line flags override them.
    """

    model_config = ConfigDict(extra="forbid")

    mode: Optional[Mode] = None
    percentile: Optional[float] = Field(None, gt=0, le=100)
    target_pct_diag: Optional[float] = Field(None, gt=0)
    max_frames: Optional[int] = Field(None, ge=2)
    solver: SolverParams = Field(default_factory=SolverParams)
    flow_source: Literal["classical", "oracle_file"] = "classical"
    renderer: Literal["spline", "line_kernel"] = config.RENDERER
    interpolation: Literal["spline", "linear"] = config.INTERPOLATION
    blur_colorspace: Literal["soft_gamma", "linear", "srgb"] = config.BLUR_COLORSPACE
    soft_gamma_k: float = Field(config.SOFT_GAMMA_K, gt=0)
    ramp_weights: bool = config.RAMP_WEIGHTS
    use_faces: bool = config.USE_FACES
    simulate_capture_plan: bool = config.SIMULATE_CAPTURE_PLAN
    max_disparity_px: float = Field(config.MAX_DISPARITY_PX, gt=0)
    max_clamp_fraction: float = Field(config.MAX_CLAMP_FRACTION, ge=0, le=1)
    samples: Optional[int] = Field(None, ge=config.MIN_SAMPLES)
    debug_dumps: bool = config.DEBUG_DUMPS
    seed: int = config.RNG_SEED
    workers: int = Field(config.WORKERS, ge=1)
    output_dir: str = config.OUTPUT_DIR
    work_dir: str = config.WORK_DIR
    output_bit_depth: Literal[8, 16] = config.OUTPUT_BIT_DEPTH

    @property
    def color(self) -> ColorParams:
        return ColorParams(soft_gamma_k=self.soft_gamma_k)

    def policy(self, mode: str) -> SelectionPolicy:
        policy = SelectionPolicy.for_mode(mode)
        updates = {
            key: value
            for key, value in {
                "percentile": self.percentile,
                "target_pct_diag": self.target_pct_diag,
                "max_frames": self.max_frames,
            }.items()
            if value is not None
        }
        return policy.model_copy(update=updates)


class RunReport(BaseModel):
    mode: Mode
    frame_count: int
    base_index: int
    processing_order: List[int] = Field(default_factory=list)
    selected_indices: List[int] = Field(default_factory=list)
    trail_length_pct: float = 0.0
    selection_forced: bool = False
    capture_plan: Optional[CapturePlan] = None
    solver_costs: List[float] = Field(default_factory=list)
    clamp_fraction: float = 0.0
    fallback: bool = False
    fallback_reason: Optional[str] = None
    outputs: Dict[str, str] = Field(default_factory=dict)
