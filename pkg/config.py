#burst
FRAME_RATE_HZ = 30.0
LOW_RES_FACTOR = 8
HALF_RES_FACTOR = 2
SOFT_GAMMA_K = 3.0
SIXTEEN_BIT_IS_LINEAR = True
MIN_BURST_FRAMES = 2

#subject
SALIENCY_THRESHOLD = 0.43
SALIENCY_PRIOR_SIGMA_DIAG = 0.25
USE_FACES = True

#tracking
TRACK_GRID_CELL_PX = 5
HARRIS_K = 0.04
HARRIS_BLOCK_SIZE = 3
HARRIS_APERTURE = 3
HARRIS_RELATIVE_THRESHOLD = 1e-4
TRACK_WINDOW_PX = 11
TRACK_PYRAMID_LEVELS = 3
TRACK_MAX_FB_ERROR_PX = 1.0
TRACK_MAX_RESIDUAL_PX = 1.0
TRACK_MIN_GRADIENT = 1.0
TRACK_RESPAWN = True
TRACK_MIN_SPAWN_WEIGHT = 0.5

#alignment
LAMBDA_F = 1.0
LAMBDA_B = 10.0
ROLL_FRACTION = 0.25
SOLVER_MAX_ITERS = 50
SOLVER_TOL = 1e-8
SOLVER_DAMPING = 1e-4
SOLVER_IRLS_EPS = 1e-6
SOLVER_MIN_SCALE = 0.5
SOLVER_MAX_SCALE = 2.0
MIN_FLOW_VECTOR_PX = 0.25
MESH_COLS = 8
MESH_ROWS = 6
MESH_SUPPORT_FACTOR = 1.5
MESH_MIN_POINTS = 4
MESH_MAX_NEIGHBOR_DELTA_PX = 4.0
MESH_INLIER_MAX_RESIDUAL_PX = 4.0
GLOBAL_MIN_CORRESPONDENCES = 6
GLOBAL_OUTLIER_FACTOR = 3.0
GLOBAL_OUTLIER_FLOOR_PX = 0.5
CLUSTER_MAX_K = 4
CLUSTER_COHERENCE_PX = 1.0
CLUSTER_MIN_BANDWIDTH_PX = 0.5

#selection
FG_PERCENTILE = 98.0
FG_TARGET_PCT_DIAG = 30.0
FG_MAX_FRAMES = 12
BG_PERCENTILE = 80.0
BG_TARGET_PCT_DIAG = 2.8
BG_MAX_PAST_FRAMES = 8
MAX_CAPTURE_DURATION_S = 7.0
VELOCITY_WINDOW_FRAMES = 5
SIMULATE_CAPTURE_PLAN = True

#motion
FLOW_PYR_SCALE = 0.5
FLOW_LEVELS = 4
FLOW_WINSIZE = 15
FLOW_ITERATIONS = 5
FLOW_POLY_N = 5
FLOW_POLY_SIGMA = 1.1
MAX_DISPARITY_PX = 64.0
MAX_CLAMP_FRACTION = 0.10
CONSISTENCY_MIDPOINT_PX = 2.0
CONSISTENCY_SLOPE_PX = 0.5
ABLATION_SEGMENT_FRACTION = 0.4

#rendering
SAMPLES_PER_PIXEL = 2.0
MIN_SAMPLES = 2
MAX_SAMPLES = 256
SERIES_ANGLE = 1e-3
TAPER_EPS = 1e-6
RENDERER = "spline"
INTERPOLATION = "spline"
BLUR_COLORSPACE = "soft_gamma"
RAMP_WEIGHTS = True
TRAIL_MIN_LENGTH_PX = 0.5

#compositing
FLOW_MASK_ALPHA = 0.16
FLOW_MASK_BETA = 0.32
FLOW_MASK_PERCENTILE = 99.0
FLOW_MASK_MIN_REFERENCE_PX = 0.25
GUIDED_RADIUS_PX = 8
GUIDED_EPS = 1e-3
FACE_MOTION_MAX_PCT_DIAG = 1.0

#pipeline
WORKERS = 4
RNG_SEED = 0
OUTPUT_DIR = "out"
WORK_DIR = "work"
DEBUG_DUMPS = False
CONVENTIONAL_NAME = "conventional.png"
LONG_EXPOSURE_NAME = "long_exposure.png"
REPORT_NAME = "report.json"
OUTPUT_BIT_DEPTH = 8

#synthetic
SYNTH_WIDTH = 512
SYNTH_HEIGHT = 384
SYNTH_FRAMES = 8
SYNTH_TEXTURE_SIGMA_PX = 10.0
SYNTH_SEED = 7
