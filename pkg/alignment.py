import logging
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np
from sklearn.cluster import spectral_clustering

import config
from burst_io import Frame
from models import SolverParams
from tracking import TrackSet
from utils import (
    NoSubjectError,
    SolverDivergenceError,
    bilinear_sample,
    image_diagonal,
    level_offset,
    log_stage,
    pixel_grid,
)

logger = logging.getLogger(__name__)

LEVEL_SCALE = {
    "low": 1,
    "half": config.LOW_RES_FACTOR // config.HALF_RES_FACTOR,
    "full": config.LOW_RES_FACTOR,
}


@dataclass
class Similarity2D:
    """x' = s * R(theta) * x + t"""

    s: float = 1.0
    theta: float = 0.0
    tx: float = 0.0
    ty: float = 0.0

    @classmethod
    def identity(cls) -> "Similarity2D":
        return cls()

    @property
    def R(self) -> np.ndarray:
        c, s = math.cos(self.theta), math.sin(self.theta)
        return np.array([[c, -s], [s, c]])

    @property
    def t(self) -> np.ndarray:
        return np.array([self.tx, self.ty])

    def apply(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64)
        flat = points.reshape(-1, 2)
        mapped = self.s * flat @ self.R.T + self.t
        return mapped.reshape(points.shape)

    def inverse(self) -> "Similarity2D":
        s = 1.0 / self.s
        t = -s * (self.R.T @ self.t)
        return Similarity2D(s=s, theta=-self.theta, tx=float(t[0]), ty=float(t[1]))

    def compose(self, other: "Similarity2D") -> "Similarity2D":
        """self after other."""
        t = self.s * (self.R @ other.t) + self.t
        return Similarity2D(
            s=self.s * other.s, theta=self.theta + other.theta, tx=float(t[0]), ty=float(t[1])
        )

    def rescaled(self, factor: float) -> "Similarity2D":
        """The same motion expressed on a level `factor` times finer."""
        offset = np.full(2, level_offset(factor))
        t = factor * self.t + offset - self.s * (self.R @ offset)
        return Similarity2D(s=self.s, theta=self.theta, tx=float(t[0]), ty=float(t[1]))

    def to_vector(self) -> np.ndarray:
        return np.array([self.s, self.theta, self.tx, self.ty])

    @classmethod
    def from_vector(cls, vector: np.ndarray) -> "Similarity2D":
        return cls(s=float(vector[0]), theta=float(vector[1]), tx=float(vector[2]), ty=float(vector[3]))

    def to_dict(self) -> Dict[str, float]:
        return {"s": self.s, "theta": self.theta, "tx": self.tx, "ty": self.ty}

    @classmethod
    def from_dict(cls, data: Dict[str, float]) -> "Similarity2D":
        return cls(s=float(data["s"]), theta=float(data["theta"]), tx=float(data["tx"]), ty=float(data["ty"]))


@dataclass
class MeshWarp:
    """
    Vertex displacements of a cols x rows cell grid over a low-resolution
    image. Vertex (r, c) sits at (c * cell_w, r * cell_h).
    """

    displacements: np.ndarray
    width: int
    height: int

    @classmethod
    def identity(cls, width: int, height: int,
                 cols: int = config.MESH_COLS, rows: int = config.MESH_ROWS) -> "MeshWarp":
        return cls(displacements=np.zeros((rows + 1, cols + 1, 2)), width=width, height=height)

    @property
    def cols(self) -> int:
        return self.displacements.shape[1] - 1

    @property
    def rows(self) -> int:
        return self.displacements.shape[0] - 1

    @property
    def cell_w(self) -> float:
        return self.width / self.cols

    @property
    def cell_h(self) -> float:
        return self.height / self.rows

    @property
    def support_radius(self) -> float:
        return config.MESH_SUPPORT_FACTOR * max(self.cell_w, self.cell_h)

    def vertex_positions(self) -> np.ndarray:
        rows, cols = np.mgrid[0:self.rows + 1, 0:self.cols + 1]
        return np.stack([cols * self.cell_w, rows * self.cell_h], axis=-1).astype(np.float64)

    def displacement_at(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64)
        u = points[..., 0] / self.cell_w
        v = points[..., 1] / self.cell_h
        return bilinear_sample(self.displacements.astype(np.float64), u, v)

    def field(self, shape: Tuple[int, int], factor: float = 1.0) -> np.ndarray:
        """Dense displacement on an H x W grid `factor` times finer than the mesh's image."""
        height, width = shape
        xs, ys = pixel_grid(height, width)
        offset = level_offset(factor)
        coarse = np.stack([(xs - offset) / factor, (ys - offset) / factor], axis=-1)
        return factor * self.displacement_at(coarse)

    def to_dict(self) -> Dict[str, Any]:
        return {"width": self.width, "height": self.height, "displacements": self.displacements.tolist()}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "MeshWarp":
        return cls(
            displacements=np.asarray(data["displacements"], dtype=np.float64),
            width=int(data["width"]),
            height=int(data["height"]),
        )


@dataclass
class AlignmentSolution:
    """
    Per processed frame transforms into the base frame at low resolution.

    Position 0 of the processing order is the base and holds the identity.
    A point x of frame p maps to y = T_p(x) and then to y + mesh_p(y).
    """

    mode: str
    similarities: List[Similarity2D]
    meshes: List[Optional[MeshWarp]]
    frame_indices: List[int]
    width: int
    height: int
    costs: List[float] = field(default_factory=list)

    @property
    def diagonal(self) -> float:
        return image_diagonal(self.width, self.height)

    def map_points(self, position: int, points: np.ndarray) -> np.ndarray:
        mapped = self.similarities[position].apply(points)
        mesh = self.meshes[position]
        if mesh is not None:
            mapped = mapped + mesh.displacement_at(mapped)
        return mapped

    def truncate(self, count: int) -> "AlignmentSolution":
        return AlignmentSolution(
            mode=self.mode,
            similarities=self.similarities[:count],
            meshes=self.meshes[:count],
            frame_indices=self.frame_indices[:count],
            width=self.width,
            height=self.height,
            costs=self.costs[:max(count - 1, 0)],
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "mode": self.mode,
            "frame_indices": list(self.frame_indices),
            "width": self.width,
            "height": self.height,
            "costs": [float(c) for c in self.costs],
            "frames": [
                {
                    "similarity": similarity.to_dict(),
                    "mesh": mesh.to_dict() if mesh is not None else None,
                }
                for similarity, mesh in zip(self.similarities, self.meshes)
            ],
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "AlignmentSolution":
        frames = data["frames"]
        return cls(
            mode=data["mode"],
            similarities=[Similarity2D.from_dict(row["similarity"]) for row in frames],
            meshes=[MeshWarp.from_dict(row["mesh"]) if row["mesh"] is not None else None for row in frames],
            frame_indices=[int(i) for i in data["frame_indices"]],
            width=int(data["width"]),
            height=int(data["height"]),
            costs=[float(c) for c in data.get("costs", [])],
        )


def estimate_global_similarity(
    src: np.ndarray,
    dst: np.ndarray,
    weights: Optional[np.ndarray] = None,
) -> Similarity2D:
    """
    Closed-form weighted least-squares similarity mapping src onto dst.

    Args:
        src: N x 2 source points
        dst: N x 2 target points
        weights: Optional non-negative per-point weights

    Returns:
        Similarity2D: Minimizer of sum w * |dst - s R src - t|^2

    Raises:
        ValueError: If fewer than two points are given or the source points coincide
    """
    src = np.asarray(src, dtype=np.float64).reshape(-1, 2)
    dst = np.asarray(dst, dtype=np.float64).reshape(-1, 2)
    if len(src) != len(dst):
        raise ValueError(f"Got {len(src)} source and {len(dst)} target points")
    if len(src) < 2:
        raise ValueError(f"A similarity needs at least 2 correspondences, got {len(src)}")
    w = np.ones(len(src)) if weights is None else np.clip(np.asarray(weights, dtype=np.float64), 0.0, None)
    total = float(w.sum())
    if total <= 0.0:
        raise ValueError("All correspondence weights are zero")

    mu_s = (w[:, None] * src).sum(axis=0) / total
    mu_d = (w[:, None] * dst).sum(axis=0) / total
    xs = src - mu_s
    xd = dst - mu_d
    variance = float((w * (xs ** 2).sum(axis=1)).sum())
    if variance <= 1e-12 * total:
        raise ValueError("Degenerate correspondences: source points coincide")

    a = float((w * (xs * xd).sum(axis=1)).sum())
    b = float((w * (xs[:, 0] * xd[:, 1] - xs[:, 1] * xd[:, 0])).sum())
    theta = math.atan2(b, a)
    s = math.hypot(a, b) / variance
    similarity = Similarity2D(s=s, theta=theta)
    t = mu_d - s * (similarity.R @ mu_s)
    similarity.tx, similarity.ty = float(t[0]), float(t[1])
    return similarity


def _fit_fixed_rotation(src: np.ndarray, dst: np.ndarray, theta: float) -> Similarity2D:
    # best scale and translation once the angle is fixed
    mu_s, mu_d = src.mean(axis=0), dst.mean(axis=0)
    xs, xd = src - mu_s, dst - mu_d
    rotated = xs @ Similarity2D(theta=theta).R.T
    variance = float((xs ** 2).sum())
    s = float((xd * rotated).sum()) / variance if variance > 0 else 1.0
    t = mu_d - s * (Similarity2D(theta=theta).R @ mu_s)
    return Similarity2D(s=s, theta=theta, tx=float(t[0]), ty=float(t[1]))


def _limit_neighbor_delta(displacements: np.ndarray, bound: float, max_rounds: int = 100) -> np.ndarray:
    """Relax vertices whose displacement differs from a 4-neighbour by more than bound."""
    d = displacements.copy()
    for _ in range(max_rounds):
        dx = np.linalg.norm(np.diff(d, axis=1), axis=-1)
        dy = np.linalg.norm(np.diff(d, axis=0), axis=-1)
        if max(dx.max(initial=0.0), dy.max(initial=0.0)) <= bound:
            break
        offending = np.zeros(d.shape[:2], dtype=bool)
        offending[:, :-1] |= dx > bound
        offending[:, 1:] |= dx > bound
        offending[:-1, :] |= dy > bound
        offending[1:, :] |= dy > bound

        padded = np.pad(d, ((1, 1), (1, 1), (0, 0)), mode="edge")
        average = (
            padded[1:-1, 1:-1] + padded[:-2, 1:-1] + padded[2:, 1:-1]
            + padded[1:-1, :-2] + padded[1:-1, 2:]
        ) / 5.0
        d[offending] = average[offending]
    return d


def refine_mesh_foreground(
    positions: np.ndarray,
    vectors: np.ndarray,
    width: int,
    height: int,
    cols: int = config.MESH_COLS,
    rows: int = config.MESH_ROWS,
) -> MeshWarp:
    """
    Fit a local similarity at every mesh vertex from the residual vectors
    left after global alignment.

    Points within the support radius of a vertex count with equal weight;
    points further away do not count at all. A vertex with fewer than
    MESH_MIN_POINTS points takes the displacement of the nearest vertex
    that could be estimated.

    Args:
        positions: N x 2 residual positions in base-frame space
        vectors: N x 2 residuals, base position minus globally aligned position
        width: Low-resolution image width
        height: Low-resolution image height

    Returns:
        MeshWarp: Vertex displacements, identity when there are no residuals
    """
    mesh = MeshWarp.identity(width, height, cols, rows)
    positions = np.asarray(positions, dtype=np.float64).reshape(-1, 2)
    vectors = np.asarray(vectors, dtype=np.float64).reshape(-1, 2)
    if len(positions) == 0:
        return mesh

    targets = positions + vectors
    vertices = mesh.vertex_positions()
    radius = mesh.support_radius
    estimated = np.zeros(vertices.shape[:2], dtype=bool)
    displacements = np.zeros_like(vertices)

    for r in range(rows + 1):
        for c in range(cols + 1):
            vertex = vertices[r, c]
            inside = np.linalg.norm(positions - vertex, axis=1) <= radius
            if inside.sum() < config.MESH_MIN_POINTS:
                continue
            try:
                local = estimate_global_similarity(positions[inside], targets[inside])
            except ValueError:
                continue
            displacements[r, c] = local.apply(vertex[None, :])[0] - vertex
            estimated[r, c] = True

    missing = np.argwhere(~estimated)
    if len(missing) and estimated.any():
        known = np.argwhere(estimated)
        for r, c in missing:
            nearest = known[np.argmin(((known - (r, c)) ** 2).sum(axis=1))]
            displacements[r, c] = displacements[nearest[0], nearest[1]]
        logger.warning(f"{len(missing)} mesh vertices inherited a neighbour's displacement")
    elif not estimated.any():
        logger.warning("No mesh vertex had enough support, keeping the identity mesh")

    mesh.displacements = _limit_neighbor_delta(displacements, config.MESH_MAX_NEIGHBOR_DELTA_PX)
    return mesh


def _robust_similarity(src: np.ndarray, dst: np.ndarray) -> Optional[Tuple[Similarity2D, np.ndarray]]:
    if len(src) < 2:
        return None
    try:
        similarity = estimate_global_similarity(src, dst)
    except ValueError:
        return None
    inliers = np.ones(len(src), dtype=bool)
    if len(src) < config.GLOBAL_MIN_CORRESPONDENCES:
        return similarity, inliers

    for _ in range(2):
        residual = np.linalg.norm(dst - similarity.apply(src), axis=1)
        threshold = max(config.GLOBAL_OUTLIER_FACTOR * float(np.median(residual)), config.GLOBAL_OUTLIER_FLOOR_PX)
        candidate = residual <= threshold
        if candidate.sum() < config.GLOBAL_MIN_CORRESPONDENCES or candidate.all():
            break
        try:
            similarity = estimate_global_similarity(src[candidate], dst[candidate])
        except ValueError:
            break
        inliers = candidate
    return similarity, inliers


@log_stage("align_foreground")
def align_foreground(track_set: TrackSet, with_mesh: bool = True) -> AlignmentSolution:
    """
    Cancel global motion with one similarity per frame, then absorb the
    remaining parallax with a per-frame mesh.

    Frames are solved in processing order. A frame with too few tracks in
    common with the base is tied to base space through its already solved
    predecessor.

    Args:
        track_set: Tracks over the processed frames, position 0 being the base
        with_mesh: False keeps only the global similarities

    Returns:
        AlignmentSolution: Similarities and meshes into the base frame
    """
    count = track_set.num_frames
    width, height = track_set.width, track_set.height
    solution = AlignmentSolution(
        mode="foreground_blur",
        similarities=[Similarity2D.identity() for _ in range(count)],
        meshes=[None] * count,
        frame_indices=list(track_set.frame_indices),
        width=width,
        height=height,
    )

    for position in range(1, count):
        src, ref_points, _ = track_set.correspondences(position, 0)
        reference = 0
        if len(src) < config.GLOBAL_MIN_CORRESPONDENCES:
            reference = position - 1
            src, ref_points, _ = track_set.correspondences(position, reference)
            logger.debug(f"Frame {position}: chaining through frame {reference} ({len(src)} tracks)")
        targets = solution.map_points(reference, ref_points) if len(ref_points) else ref_points

        estimate = _robust_similarity(src, targets)
        if estimate is None:
            logger.warning(f"Frame {position}: too few tracks, holding the previous transform")
            solution.similarities[position] = solution.similarities[position - 1]
            solution.meshes[position] = MeshWarp.identity(width, height)
            continue
        similarity, inliers = estimate
        solution.similarities[position] = similarity
        if not with_mesh:
            continue

        aligned = similarity.apply(src[inliers])
        residuals = targets[inliers] - aligned
        keep = np.linalg.norm(residuals, axis=1) <= config.MESH_INLIER_MAX_RESIDUAL_PX
        solution.meshes[position] = refine_mesh_foreground(aligned[keep], residuals[keep], width, height)
        logger.debug(
            f"Frame {position}: s={similarity.s:.4f} theta={math.degrees(similarity.theta):.3f} "
            f"t=({similarity.tx:.2f}, {similarity.ty:.2f}), {int(keep.sum())} mesh residuals"
        )
    return solution


def _eigengap_clusters(affinity: np.ndarray) -> int:
    n = len(affinity)
    top = min(config.CLUSTER_MAX_K, n - 1)
    if top <= 2:
        return 2
    degree = affinity.sum(axis=1)
    scale = 1.0 / np.sqrt(np.maximum(degree, 1e-12))
    laplacian = np.eye(n) - scale[:, None] * affinity * scale[None, :]
    eigenvalues = np.sort(np.linalg.eigvalsh(laplacian))
    gaps = [eigenvalues[k] - eigenvalues[k - 1] for k in range(2, top + 1)]
    return 2 + int(np.argmax(gaps))


def cluster_subject_tracks(
    track_set: TrackSet,
    weight_map: Optional[np.ndarray] = None,
    seed: int = config.RNG_SEED,
) -> TrackSet:
    """
    Keep the most salient coherent motion among the subject tracks.

    Tracks are compared by mean velocity through a Gaussian affinity whose
    bandwidth is the median pairwise velocity distance. The number of
    clusters (2 to CLUSTER_MAX_K) comes from the largest eigengap of the
    normalized graph Laplacian, and the cluster with the largest summed
    subject weight wins.

    Args:
        track_set: All tracks; subject tracks have weight > 0
        weight_map: Optional map to re-sample track weights at their first point
        seed: Random state of the clustering

    Returns:
        TrackSet: The selected subject tracks

    Raises:
        NoSubjectError: If no track carries subject weight
    """
    weights = []
    for track in track_set.tracks:
        if weight_map is None:
            weights.append(track.weight)
            continue
        first = track.points[track.span[0]]
        weights.append(float(bilinear_sample(weight_map.astype(np.float64), first[0], first[1])))
    weights = np.asarray(weights, dtype=np.float64)
    subject = np.flatnonzero(weights > 0.0)
    if len(subject) == 0:
        raise NoSubjectError(f"none of {len(track_set.tracks)} tracks lies on the subject")

    velocities = np.array([track_set.tracks[i].mean_velocity() for i in subject])
    distances = np.linalg.norm(velocities[:, None, :] - velocities[None, :, :], axis=-1)
    if len(subject) < 3 or distances.max() < config.CLUSTER_COHERENCE_PX:
        return track_set.subset(subject.tolist())

    upper = distances[np.triu_indices(len(subject), k=1)]
    sigma = max(float(np.median(upper)), config.CLUSTER_MIN_BANDWIDTH_PX)
    affinity = np.exp(-distances ** 2 / (2.0 * sigma ** 2))
    clusters = _eigengap_clusters(affinity)
    labels = spectral_clustering(affinity, n_clusters=clusters, random_state=seed, assign_labels="kmeans")

    totals = np.array([weights[subject][labels == label].sum() for label in range(clusters)])
    best = int(np.argmax(totals))
    keep = subject[labels == best]
    logger.info(f"Subject clustering: {clusters} clusters, kept {len(keep)}/{len(subject)} tracks")
    return track_set.subset(keep.tolist())


def smooth_l1(x: Any) -> Any:
    a = np.abs(np.asarray(x, dtype=np.float64))
    value = np.where(a < 1.0, 0.5 * a * a, a - 0.5)
    if value.ndim == 0:
        return float(value)
    return value


def parallelism_penalty(u_prev: np.ndarray, u_new: np.ndarray) -> np.ndarray:
    """Smooth-L1 of one minus the cosine between paired unit directions (N x 2 each)."""
    cosine = np.clip(np.sum(u_prev * u_new, axis=1), -1.0, 1.0)
    return np.atleast_1d(smooth_l1(1.0 - cosine))


def _wrap_angle(angle: float) -> float:
    return (angle + math.pi) % (2.0 * math.pi) - math.pi


def _numeric_jacobian(residual: Callable[[np.ndarray], np.ndarray], p: np.ndarray) -> np.ndarray:
    base = residual(p)
    jacobian = np.zeros((len(base), len(p)))
    for i in range(len(p)):
        h = 1e-6 * max(1.0, abs(p[i]))
        forward, backward = p.copy(), p.copy()
        forward[i] += h
        backward[i] -= h
        jacobian[:, i] = (residual(forward) - residual(backward)) / (2.0 * h)
    return jacobian


def _damped_gauss_newton(
    residual: Callable[[np.ndarray], np.ndarray],
    p0: np.ndarray,
    project: Callable[[np.ndarray], np.ndarray],
    params: SolverParams,
) -> Tuple[np.ndarray, float]:
    """Levenberg-Marquardt on a residual vector, with a projection onto the feasible set after each step."""
    p = project(p0.astype(np.float64))
    r = residual(p)
    cost = float(r @ r)
    mu = params.damping

    for iteration in range(params.max_iters):
        if len(r) == 0:
            break
        J = _numeric_jacobian(residual, p)
        A = J.T @ J
        g = J.T @ r
        improved = False
        while mu < 1e10:
            try:
                step = np.linalg.solve(A + mu * np.eye(len(p)), g)
            except np.linalg.LinAlgError:
                mu *= 10.0
                continue
            candidate = project(p - step)
            r_candidate = residual(candidate)
            cost_candidate = float(r_candidate @ r_candidate)
            if np.isfinite(cost_candidate) and cost_candidate <= cost:
                moved = float(np.linalg.norm(candidate - p))
                p, r, cost = candidate, r_candidate, cost_candidate
                mu = max(mu / 10.0, 1e-12)
                improved = True
                break
            mu *= 10.0
        if not improved or moved < params.tol:
            logger.debug(f"Solver stopped after {iteration + 1} iterations, cost {cost:.6g}")
            break
    return p, cost


def solve_background_alignment(
    subject_tracks: TrackSet,
    background_tracks: TrackSet,
    params: Optional[SolverParams] = None,
) -> Tuple[List[Similarity2D], List[float]]:
    """
    Align every frame on the subject while keeping the background flow
    as parallel as possible from one frame pair to the next.

    The frames are solved one new frame at a time. The subject term is
    the sum of unsquared point distances, handled by reweighting its
    residuals. The parallelism term compares the unit direction of each
    background track's aligned flow over the two latest frame pairs.
    Each frame starts from the closed-form subject similarity, and its
    roll relative to the previous frame never exceeds roll_fraction of
    the closed-form relative roll.

    Args:
        subject_tracks: Tracks of the selected subject cluster
        background_tracks: Tracks off the subject
        params: Term weights and solver settings

    Returns:
        Tuple[List[Similarity2D], List[float]]: Transforms into the
        reference frame (position 0) and the final cost of each new frame

    Raises:
        SolverDivergenceError: If the cost is not finite or the scale leaves
            [SOLVER_MIN_SCALE, SOLVER_MAX_SCALE]
    """
    params = params or SolverParams()
    count = subject_tracks.num_frames
    similarities = [Similarity2D.identity()]
    costs: List[float] = []
    sqrt_f = math.sqrt(params.lambda_f)
    sqrt_b = math.sqrt(params.lambda_b)

    for k in range(1, count):
        j = k - 1
        src, ref_points, _ = subject_tracks.correspondences(k, j)
        if len(src) < 2:
            logger.warning(f"Frame {k}: {len(src)} subject tracks, holding the previous transform")
            similarities.append(similarities[j])
            costs.append(0.0)
            continue
        targets = similarities[j].apply(ref_points)

        try:
            initial = estimate_global_similarity(src, targets)
        except ValueError as e:
            raise SolverDivergenceError(f"frame {k}: {e}")
        estimated_roll = _wrap_angle(initial.theta - similarities[j].theta)
        bound = params.roll_fraction * abs(estimated_roll)
        low, high = similarities[j].theta - bound, similarities[j].theta + bound
        start = _fit_fixed_rotation(src, targets, min(max(initial.theta, low), high))

        previous_flow = None
        if k >= 2 and params.lambda_b > 0:
            rows = [
                track for track in background_tracks.tracks
                if track.valid[k - 2] and track.valid[j] and track.valid[k]
            ]
            if rows:
                xi = np.array([track.points[k - 2] for track in rows])
                xj = np.array([track.points[j] for track in rows])
                xk = np.array([track.points[k] for track in rows])
                yj = similarities[j].apply(xj)
                v_prev = yj - similarities[k - 2].apply(xi)
                v_init = start.apply(xk) - yj
                usable = (
                    (np.linalg.norm(v_prev, axis=1) >= config.MIN_FLOW_VECTOR_PX)
                    & (np.linalg.norm(v_init, axis=1) >= config.MIN_FLOW_VECTOR_PX)
                )
                if usable.any():
                    previous_flow = (
                        xk[usable],
                        yj[usable],
                        v_prev[usable] / np.linalg.norm(v_prev[usable], axis=1, keepdims=True),
                    )

        def residual(p: np.ndarray) -> np.ndarray:
            transform = Similarity2D.from_vector(p)
            e = transform.apply(src) - targets
            r_f = sqrt_f * e / np.sqrt(np.linalg.norm(e, axis=1, keepdims=True) + config.SOLVER_IRLS_EPS)
            if previous_flow is None:
                return r_f.ravel()
            xk_b, yj_b, u_prev = previous_flow
            v_new = transform.apply(xk_b) - yj_b
            u_new = v_new / np.maximum(np.linalg.norm(v_new, axis=1, keepdims=True), 1e-12)
            r_b = sqrt_b * np.sqrt(parallelism_penalty(u_prev, u_new))
            return np.concatenate([r_f.ravel(), r_b])

        def project(p: np.ndarray) -> np.ndarray:
            p = p.copy()
            p[1] = min(max(p[1], low), high)
            return p

        p, cost = _damped_gauss_newton(residual, start.to_vector(), project, params)
        if not np.all(np.isfinite(p)) or not math.isfinite(cost):
            raise SolverDivergenceError(f"frame {k}: non-finite solution")
        if not config.SOLVER_MIN_SCALE <= p[0] <= config.SOLVER_MAX_SCALE:
            raise SolverDivergenceError(f"frame {k}: scale {p[0]:.3f} out of range")

        similarities.append(Similarity2D.from_vector(p))
        costs.append(cost)
        logger.debug(
            f"Frame {k}: roll {math.degrees(p[1] - similarities[j].theta):.3f} deg "
            f"(estimated {math.degrees(estimated_roll):.3f}), cost {cost:.6g}"
        )
    return similarities, costs


@log_stage("align_background")
def align_background(
    track_set: TrackSet,
    params: Optional[SolverParams] = None,
    seed: int = config.RNG_SEED,
) -> AlignmentSolution:
    """Cluster the subject tracks and solve the regularized alignment over the processing order."""
    subject = cluster_subject_tracks(track_set, seed=seed)
    background = track_set.subset([i for i, track in enumerate(track_set.tracks) if track.weight <= 0.0])
    similarities, costs = solve_background_alignment(subject, background, params)
    return AlignmentSolution(
        mode="background_blur",
        similarities=similarities,
        meshes=[None] * len(similarities),
        frame_indices=list(track_set.frame_indices),
        width=track_set.width,
        height=track_set.height,
        costs=costs,
    )


def compose_warp(
    position: int,
    solution: AlignmentSolution,
    shape: Optional[Tuple[int, int]] = None,
    factor: float = LEVEL_SCALE["half"],
) -> np.ndarray:
    """
    Gather offsets that align one frame with the base.

    The aligned frame at pixel y reads the source frame at y + d(y).

    Args:
        position: Processing position of the frame
        solution: Alignment at low resolution
        shape: Output H x W; defaults to the low-resolution size times factor
        factor: Output level scale relative to low resolution

    Returns:
        np.ndarray: H x W x 2 displacement field
    """
    if shape is None:
        shape = (int(solution.height * factor), int(solution.width * factor))
    height, width = shape
    inverse = solution.similarities[position].rescaled(factor).inverse()
    xs, ys = pixel_grid(height, width)
    grid = np.stack([xs, ys], axis=-1)
    mesh = solution.meshes[position]
    unmeshed = grid - mesh.field(shape, factor) if mesh is not None else grid
    return inverse.apply(unmeshed) - grid


def warp_frame(frame: Frame, solution: AlignmentSolution, position: int) -> Frame:
    factor = LEVEL_SCALE[frame.level]
    d = compose_warp(position, solution, (frame.height, frame.width), factor)
    xs, ys = pixel_grid(frame.height, frame.width)
    pixels = bilinear_sample(frame.pixels.astype(np.float64), xs + d[..., 0], ys + d[..., 1])
    return frame.with_pixels(pixels)
