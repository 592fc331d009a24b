"""Rigid-body math, camera projection, point clouds, and the weighted-SVD pose solver.

Pose convention used everywhere in this package: a pose maps model-frame
points into the camera frame, ``p_cam = R @ p_model + t``. Formulas that
are naturally expressed as the inverse map (camera -> model) go through
:meth:`RigidPose.inverse` explicitly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "CameraIntrinsics",
    "DepthImage",
    "BinaryMask",
    "RigidPose",
    "PointCloud",
    "DegenerateGeometryError",
    "backproject",
    "transform",
    "solve_pose_weighted_svd",
    "nearest_neighbors",
    "project",
    "rotation_about_axis",
    "rotation_angle_between",
    "random_rigid_pose",
]

# Reference clouds larger than this are queried through a uniform-grid
# index; both paths produce bit-identical results.
_GRID_THRESHOLD = 1000

_ORTHO_TOL = 1e-9


class DegenerateGeometryError(ValueError):
    """Raised when a geometric solve has no well-defined answer."""


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole camera: focal lengths, principal point, image size (pixels)."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError(
                f"principal point ({self.cx}, {self.cy}) outside "
                f"{self.width}x{self.height} image"
            )


class DepthImage:
    """Depth map in meters; 0 encodes a missing measurement."""

    def __init__(self, values: np.ndarray):
        values = np.asarray(values, dtype=np.float64)
        if values.ndim != 2:
            raise ValueError(f"depth must be HxW, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("depth contains non-finite values")
        if np.any(values < 0):
            raise ValueError("negative depths are invalid (0 encodes missing)")
        self.values = values

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def valid_mask(self) -> np.ndarray:
        return self.values > 0


class BinaryMask:
    """Boolean HxW pixel mask."""

    def __init__(self, values: np.ndarray):
        values = np.asarray(values)
        if values.ndim != 2:
            raise ValueError(f"mask must be HxW, got shape {values.shape}")
        self.values = values.astype(bool)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def count(self) -> int:
        return int(np.count_nonzero(self.values))


@dataclass(frozen=True)
class RigidPose:
    """Rotation + translation; maps model-frame points to camera frame."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if r.shape != (3, 3):
            raise ValueError(f"rotation must be 3x3, got {r.shape}")
        if np.abs(r.T @ r - np.eye(3)).max() > 1e-6:
            raise ValueError("rotation is not orthonormal")
        if abs(np.linalg.det(r) - 1.0) > 1e-6:
            raise ValueError("rotation determinant is not +1 (reflection?)")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "RigidPose":
        return cls(np.eye(3), np.zeros(3))

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Map (N,3) or (3,) model-frame points into the camera frame."""
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.rotation.T + self.translation

    def compose(self, other: "RigidPose") -> "RigidPose":
        """Pose equivalent to applying ``other`` first, then ``self``."""
        return RigidPose(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def inverse(self) -> "RigidPose":
        return RigidPose(self.rotation.T, -(self.rotation.T @ self.translation))


class PointCloud:
    """N x 3 point set in meters, with optional per-point features and probabilities."""

    def __init__(
        self,
        points: np.ndarray,
        features: np.ndarray | None = None,
        probs: np.ndarray | None = None,
    ):
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        if not np.all(np.isfinite(points)):
            raise ValueError("point coordinates must be finite")
        if features is not None:
            features = np.asarray(features, dtype=np.float64)
            if features.ndim != 2 or features.shape[0] != points.shape[0]:
                raise ValueError(
                    f"features must be ({points.shape[0]}, C), got {features.shape}"
                )
        if probs is not None:
            probs = np.asarray(probs, dtype=np.float64).reshape(-1)
            if probs.shape[0] != points.shape[0]:
                raise ValueError("probs length must match point count")
            if np.any((probs < 0) | (probs > 1)):
                raise ValueError("probs must lie in [0, 1]")
        self.points = points
        self.features = features
        self.probs = probs

    def __len__(self) -> int:
        return self.points.shape[0]

    @classmethod
    def empty(cls) -> "PointCloud":
        return cls(np.zeros((0, 3)))

    def select(self, indices) -> "PointCloud":
        """Sub-cloud at the given row indices, carrying features/probs."""
        idx = np.asarray(indices, dtype=np.intp)
        return PointCloud(
            self.points[idx],
            None if self.features is None else self.features[idx],
            None if self.probs is None else self.probs[idx],
        )

    def with_probs(self, probs: np.ndarray) -> "PointCloud":
        return PointCloud(self.points, self.features, probs)


def backproject(depth: DepthImage, mask: BinaryMask, intrinsics: CameraIntrinsics) -> PointCloud:
    """Lift masked valid-depth pixels into a camera-frame point cloud.

    One point per pixel where the mask is set and depth > 0, in row-major
    pixel order: x = (u - cx) z / fx, y = (v - cy) z / fy, z = depth.
    An empty selection yields an empty cloud, not an error.
    """
    if depth.shape != mask.shape:
        raise ValueError(f"depth {depth.shape} and mask {mask.shape} dimensions differ")
    h, w = depth.shape
    if (h, w) != (intrinsics.height, intrinsics.width):
        raise ValueError(
            f"depth {depth.shape} does not match intrinsics "
            f"({intrinsics.height}, {intrinsics.width})"
        )
    keep = mask.values & (depth.values > 0)
    v, u = np.nonzero(keep)
    z = depth.values[v, u]
    x = (u - intrinsics.cx) * z / intrinsics.fx
    y = (v - intrinsics.cy) * z / intrinsics.fy
    return PointCloud(np.column_stack([x, y, z]))


def transform(pose: RigidPose, cloud: PointCloud) -> PointCloud:
    """Apply a rigid pose to every point; features/probs carry through."""
    return PointCloud(pose.apply(cloud.points), cloud.features, cloud.probs)


def solve_pose_weighted_svd(
    src: PointCloud, dst: PointCloud, weights: np.ndarray
) -> RigidPose:
    """Pose minimizing sum_i w_i || R src_i + t - dst_i ||^2 (Kabsch with weights).

    det(R) = +1 is enforced by flipping the singular vector of the smallest
    singular value, which also resolves reflective planar cases
    deterministically. Raises :class:`DegenerateGeometryError` when the
    weighted cross-covariance is rank-deficient (collinear support).
    """
    s = src.points
    d = dst.points
    if s.shape[0] != d.shape[0]:
        raise ValueError(f"src has {s.shape[0]} points, dst has {d.shape[0]}")
    n = s.shape[0]
    if n < 3:
        raise DegenerateGeometryError(f"need at least 3 correspondences, got {n}")
    w = np.asarray(weights, dtype=np.float64).reshape(-1)
    if w.shape[0] != n:
        raise ValueError("weights length must match point count")
    if np.any(w < 0):
        raise ValueError("weights must be non-negative")
    total = w.sum()
    if total <= 0:
        raise ValueError("weights must have positive sum")
    w = w / total

    mu_s = w @ s
    mu_d = w @ d
    cs = s - mu_s
    cd = d - mu_d
    h = (cs * w[:, None]).T @ cd
    u, sing, vt = np.linalg.svd(h)
    # Rank >= 2 is required to pin the rotation; planar clouds (rank 2) are
    # fine, collinear ones (rank <= 1) are not.
    scale = max(sing[0], np.finfo(np.float64).tiny)
    if sing[1] / scale < 1e-12:
        raise DegenerateGeometryError(
            "rank-deficient cross-covariance (collinear or coincident points)"
        )
    det = np.linalg.det(vt.T @ u.T)
    fix = np.ones(3)
    fix[2] = np.sign(det) if det != 0 else 1.0
    rot = (vt.T * fix) @ u.T
    trans = mu_d - rot @ mu_s
    return RigidPose(rot, trans)


def _sq_dist_block(queries: np.ndarray, pts: np.ndarray) -> np.ndarray:
    # Shared by the exhaustive and grid paths so both produce identical bits
    # for every (query, reference) pair regardless of candidate subsetting.
    dx = queries[:, 0, None] - pts[None, :, 0]
    dy = queries[:, 1, None] - pts[None, :, 1]
    dz = queries[:, 2, None] - pts[None, :, 2]
    return dx * dx + dy * dy + dz * dz


def _nn_exhaustive(query: np.ndarray, ref: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    indices = np.empty(query.shape[0], dtype=np.intp)
    dists = np.empty(query.shape[0], dtype=np.float64)
    chunk = max(1, (1 << 22) // max(ref.shape[0], 1))
    for lo in range(0, query.shape[0], chunk):
        hi = min(lo + chunk, query.shape[0])
        d2 = _sq_dist_block(query[lo:hi], ref)
        j = np.argmin(d2, axis=1)  # first minimum: smallest-index tie-break
        indices[lo:hi] = j
        dists[lo:hi] = np.sqrt(d2[np.arange(hi - lo), j])
    return indices, dists


class _UniformGrid:
    """Uniform-grid bucketing over a reference cloud for NN queries."""

    def __init__(self, ref: np.ndarray):
        self.ref = ref
        n = ref.shape[0]
        self.mins = ref.min(axis=0)
        maxs = ref.max(axis=0)
        extent = np.maximum(maxs - self.mins, 0.0)
        ncells = max(1, int(round(n ** (1.0 / 3.0))))
        self.dims = np.where(extent > 0, ncells, 1).astype(np.intp)
        self.cell = np.where(extent > 0, extent / self.dims, 1.0)
        coords = np.clip(
            np.floor((ref - self.mins) / self.cell).astype(np.intp), 0, self.dims - 1
        )
        self.buckets: dict[tuple[int, int, int], np.ndarray] = {}
        order = np.lexsort((coords[:, 2], coords[:, 1], coords[:, 0]))
        sorted_coords = coords[order]
        boundaries = np.nonzero(np.any(np.diff(sorted_coords, axis=0) != 0, axis=1))[0] + 1
        for chunk in np.split(order, boundaries):
            key = tuple(int(c) for c in coords[chunk[0]])
            self.buckets[key] = np.sort(chunk)
        self.min_cell = float(self.cell.min())

    def cell_of(self, pts: np.ndarray) -> np.ndarray:
        # Deliberately unclipped: out-of-grid queries keep consistent cell
        # coordinates so the ring lower bound stays valid.
        return np.floor((pts - self.mins) / self.cell).astype(np.intp)

    def ring_candidates(self, center: np.ndarray, r: int) -> np.ndarray:
        """Sorted reference indices bucketed in the Chebyshev ring at radius r."""
        lo = np.maximum(center - r, 0)
        hi = np.minimum(center + r, self.dims - 1)
        if np.any(lo > hi):
            return np.empty(0, dtype=np.intp)
        found = []
        for ix in range(lo[0], hi[0] + 1):
            for iy in range(lo[1], hi[1] + 1):
                for iz in range(lo[2], hi[2] + 1):
                    if max(abs(ix - center[0]), abs(iy - center[1]), abs(iz - center[2])) == r:
                        bucket = self.buckets.get((ix, iy, iz))
                        if bucket is not None:
                            found.append(bucket)
        if not found:
            return np.empty(0, dtype=np.intp)
        return np.sort(np.concatenate(found))

    def query_group(self, q: np.ndarray, center: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """NN for a batch of queries sharing one grid cell."""
        nq = q.shape[0]
        best_d2 = np.full(nq, np.inf)
        best_idx = np.full(nq, -1, dtype=np.intp)
        r_max = int(
            max(np.maximum(center, 0).max(), np.maximum(self.dims - 1 - center, 0).max())
        )
        for r in range(r_max + 1):
            if r >= 1 and best_idx.min() >= 0:
                # Any point bucketed at Chebyshev ring r lies at least
                # (r - 1) * min_cell from a query inside the center cell.
                lb = (r - 1) * self.min_cell
                if lb * lb > best_d2.max():
                    break
            cand = self.ring_candidates(center, r)
            if cand.size == 0:
                continue
            d2 = _sq_dist_block(q, self.ref[cand])
            j = np.argmin(d2, axis=1)
            cand_d2 = d2[np.arange(nq), j]
            cand_idx = cand[j]
            take = (cand_d2 < best_d2) | ((cand_d2 == best_d2) & (cand_idx < best_idx))
            best_d2 = np.where(take, cand_d2, best_d2)
            best_idx = np.where(take, cand_idx, best_idx)
        return best_idx, best_d2


def nearest_neighbors(query: PointCloud, reference: PointCloud) -> tuple[np.ndarray, np.ndarray]:
    """Index of and distance to the Euclidean-nearest reference point, per query.

    Ties break toward the smallest reference index. Above
    ``_GRID_THRESHOLD`` reference points a uniform-grid index is used; it
    agrees bit-for-bit with the exhaustive scan.
    """
    ref = reference.points
    if ref.shape[0] == 0:
        raise ValueError("reference cloud is empty")
    q = query.points
    if ref.shape[0] <= _GRID_THRESHOLD:
        return _nn_exhaustive(q, ref)
    grid = _UniformGrid(ref)
    cells = grid.cell_of(q)
    indices = np.empty(q.shape[0], dtype=np.intp)
    dists2 = np.empty(q.shape[0], dtype=np.float64)
    order = np.lexsort((cells[:, 2], cells[:, 1], cells[:, 0]))
    sorted_cells = cells[order]
    if order.size == 0:
        return indices, dists2
    boundaries = np.nonzero(np.any(np.diff(sorted_cells, axis=0) != 0, axis=1))[0] + 1
    for group in np.split(order, boundaries):
        idx, d2 = grid.query_group(q[group], cells[group[0]])
        indices[group] = idx
        dists2[group] = d2
    return indices, np.sqrt(dists2)


def project(intrinsics: CameraIntrinsics, points: PointCloud) -> np.ndarray:
    """Pinhole projection to (N,2) pixel coordinates; every z must be > 0."""
    pts = points.points
    bad = np.nonzero(pts[:, 2] <= 0)[0]
    if bad.size:
        raise ValueError(f"points behind camera (z <= 0) at indices {bad.tolist()[:20]}")
    u = intrinsics.fx * pts[:, 0] / pts[:, 2] + intrinsics.cx
    v = intrinsics.fy * pts[:, 1] / pts[:, 2] + intrinsics.cy
    return np.column_stack([u, v])


def rotation_about_axis(axis: np.ndarray, angle: float) -> np.ndarray:
    """Rotation matrix about a (not necessarily unit) axis by ``angle`` radians."""
    a = np.asarray(axis, dtype=np.float64).reshape(3)
    norm = np.linalg.norm(a)
    if norm == 0:
        raise ValueError("axis must be non-zero")
    a = a / norm
    k = np.array([[0, -a[2], a[1]], [a[2], 0, -a[0]], [-a[1], a[0], 0]])
    return np.eye(3) + np.sin(angle) * k + (1 - np.cos(angle)) * (k @ k)


def rotation_angle_between(ra: np.ndarray, rb: np.ndarray) -> float:
    """Geodesic angle (radians) between two rotation matrices.

    Uses ||Ra^T Rb - I||_F = 2 sqrt(2) sin(theta / 2), which stays accurate
    for tiny angles where arccos of the trace saturates around 1e-8.
    """
    rel = ra.T @ rb
    s = np.linalg.norm(rel - np.eye(3)) / (2.0 * np.sqrt(2.0))
    return float(2.0 * np.arcsin(min(s, 1.0)))


def random_rigid_pose(rng: np.random.Generator, max_translation: float = 1.0) -> RigidPose:
    """Uniform random rotation (QR of a Gaussian) with bounded translation."""
    m = rng.standard_normal((3, 3))
    q, r = np.linalg.qr(m)
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 2] = -q[:, 2]
    t = rng.uniform(-max_translation, max_translation, size=3)
    return RigidPose(q, t)
