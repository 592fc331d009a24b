"""Feature-space correspondence machinery.

The assignment matrix between an observation of N_o points and a model of
N_m points is (N_o+1) x (N_m+1): row 0 is the observation-side background
token, column 0 the model-side occlusion token. Interior entry (i+1, j+1)
scores the correspondence between observation point i and model point j.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import PointCloud, RigidPose, nearest_neighbors
from .rng import SamplerSeed
from .sampling import build_alias_table, sample_alias

__all__ = [
    "FeatureSet",
    "AssignmentMatrix",
    "attention_matrix",
    "dual_softmax",
    "extract_marginals",
    "sample_correspondences",
    "ground_truth_labels",
    "infonce_loss",
    "multi_block_loss",
]

# Distance threshold (meters) under which an observation/model point pair
# counts as a ground-truth match.
DEFAULT_MATCH_DISTANCE = 0.15


@dataclass(frozen=True)
class FeatureSet:
    """Per-point feature rows plus the side's special token vector.

    Observations carry the background token, models the occlusion token.
    """

    features: np.ndarray
    special_token: np.ndarray

    def __post_init__(self):
        f = np.asarray(self.features, dtype=np.float64)
        t = np.asarray(self.special_token, dtype=np.float64).reshape(-1)
        if f.ndim != 2:
            raise ValueError(f"features must be NxC, got shape {f.shape}")
        if t.shape[0] != f.shape[1]:
            raise ValueError(
                f"token dimension {t.shape[0]} != feature dimension {f.shape[1]}"
            )
        if not (np.all(np.isfinite(f)) and np.all(np.isfinite(t))):
            raise ValueError("features and token must be finite")
        object.__setattr__(self, "features", f)
        object.__setattr__(self, "special_token", t)

    @property
    def dim(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True)
class AssignmentMatrix:
    """(N_o+1) x (N_m+1) correspondence matrix, raw logits or normalized."""

    values: np.ndarray
    kind: str  # "raw" | "normalized"

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] < 2 or v.shape[1] < 2:
            raise ValueError(f"assignment matrix must be at least 2x2, got {v.shape}")
        if self.kind not in ("raw", "normalized"):
            raise ValueError(f"kind must be 'raw' or 'normalized', got {self.kind!r}")
        if not np.all(np.isfinite(v)):
            raise ValueError("assignment matrix must be finite")
        if self.kind == "normalized" and np.any((v < 0) | (v > 1)):
            raise ValueError("normalized entries must lie in [0, 1]")
        object.__setattr__(self, "values", v)

    @property
    def n_obs(self) -> int:
        return self.values.shape[0] - 1

    @property
    def n_model(self) -> int:
        return self.values.shape[1] - 1


def attention_matrix(obs: FeatureSet, model: FeatureSet) -> AssignmentMatrix:
    """Raw attention: [f_bg; F_o] @ [f_oc; F_m]^T."""
    if obs.dim != model.dim:
        raise ValueError(f"feature dimensions differ: {obs.dim} vs {model.dim}")
    left = np.vstack([obs.special_token, obs.features])
    right = np.vstack([model.special_token, model.features])
    return AssignmentMatrix(left @ right.T, kind="raw")


def _softmax(x: np.ndarray, axis: int) -> np.ndarray:
    shifted = x - x.max(axis=axis, keepdims=True)
    np.exp(shifted, out=shifted)
    shifted /= shifted.sum(axis=axis, keepdims=True)
    return shifted


def dual_softmax(matrix: AssignmentMatrix, tau: float) -> AssignmentMatrix:
    """Elementwise product of row-wise and column-wise softmax of A / tau."""
    if matrix.kind != "raw":
        raise ValueError("dual_softmax expects a raw matrix")
    if tau <= 0:
        raise ValueError(f"tau must be positive, got {tau}")
    scaled = matrix.values / tau
    out = _softmax(scaled, axis=1)
    out *= _softmax(scaled, axis=0)
    return AssignmentMatrix(out, "normalized")


def extract_marginals(matrix: AssignmentMatrix) -> tuple[np.ndarray, np.ndarray]:
    """(background probs of observation points, occlusion probs of model points).

    Background probability of observation point i is entry (i+1, 0);
    occlusion probability of model point j is entry (0, j+1).
    """
    if matrix.kind != "normalized":
        raise ValueError("marginals require a normalized (dual-softmax) matrix")
    return matrix.values[1:, 0].copy(), matrix.values[0, 1:].copy()


def token_softmax_marginals(
    matrix: AssignmentMatrix, tau: float
) -> tuple[np.ndarray, np.ndarray]:
    """Per-point token shares from single-direction softmax.

    Background share of observation point i is the token-column mass of its
    row softmax; occlusion share of model point j is the token-row mass of
    its column softmax. Unlike the dual-softmax entries, these are not
    diluted when many points compete for the same token (the token column's
    own softmax splits its mass across all background points), so they stay
    informative as sampling weights under heavy occlusion.
    """
    if matrix.kind != "raw":
        raise ValueError("token shares are computed from the raw matrix")
    if tau <= 0:
        raise ValueError(f"tau must be positive, got {tau}")
    scaled = matrix.values / tau
    bg = _softmax(scaled, axis=1)[1:, 0]
    occ = _softmax(scaled, axis=0)[0, 1:]
    return bg.copy(), occ.copy()


class CorrespondenceSampler:
    """Reusable alias-table sampler over the interior of an assignment matrix.

    Amortizes the O(N_o * N_m) table build across repeated draws.
    """

    def __init__(self, matrix: AssignmentMatrix):
        if matrix.kind != "normalized":
            raise ValueError("correspondence sampling requires a normalized matrix")
        interior = matrix.values[1:, 1:]
        if interior.sum() <= 0:
            raise ValueError("interior of the assignment matrix has no positive mass")
        self._table = build_alias_table(interior.ravel())
        self._n_model = matrix.n_model

    def draw(self, count: int, rng: SamplerSeed) -> np.ndarray:
        flat = sample_alias(self._table, count, rng)
        return np.column_stack([flat // self._n_model, flat % self._n_model])


def sample_correspondences(
    matrix: AssignmentMatrix, count: int, rng: SamplerSeed
) -> np.ndarray:
    """Draw ``count`` (obs_idx, model_idx) pairs i.i.d. from the interior mass.

    Indices are 0-based point indices (interior of the matrix, excluding
    the token row/column). Pairs may repeat across draws.
    """
    return CorrespondenceSampler(matrix).draw(count, rng)


def ground_truth_labels(
    obs: PointCloud,
    model: PointCloud,
    gt_pose: RigidPose,
    delta_dis: float = DEFAULT_MATCH_DISTANCE,
) -> tuple[np.ndarray, np.ndarray]:
    """Nearest-neighbor match labels from a known pose.

    Observation points are carried into the model frame through the inverse
    of ``gt_pose`` and matched against model points; model points are carried
    into the camera frame and matched against observation points. Labels are
    1-based matched indices with 0 reserved for background (observation side)
    and occluded (model side). A match counts only below ``delta_dis``.
    """
    if len(obs) == 0 or len(model) == 0:
        raise ValueError("clouds must be non-empty")
    if delta_dis <= 0:
        raise ValueError("delta_dis must be positive")
    inv = gt_pose.inverse()
    obs_in_model = PointCloud(inv.apply(obs.points))
    idx_o, dist_o = nearest_neighbors(obs_in_model, model)
    y_o = np.where(dist_o < delta_dis, idx_o + 1, 0)

    model_in_cam = PointCloud(gt_pose.apply(model.points))
    idx_m, dist_m = nearest_neighbors(model_in_cam, obs)
    y_m = np.where(dist_m < delta_dis, idx_m + 1, 0)
    return y_o.astype(np.intp), y_m.astype(np.intp)


def _cross_entropy(logits: np.ndarray, labels: np.ndarray) -> float:
    labels = np.asarray(labels, dtype=np.intp).reshape(-1)
    if logits.shape[0] != labels.shape[0]:
        raise ValueError("one label per logit row is required")
    if np.any((labels < 0) | (labels >= logits.shape[1])):
        raise ValueError(
            f"labels must lie in [0, {logits.shape[1] - 1}], got range "
            f"[{labels.min()}, {labels.max()}]"
        )
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    picked = shifted[np.arange(labels.shape[0]), labels]
    return float(np.mean(log_z - picked))


def infonce_loss(matrix: AssignmentMatrix, y_o: np.ndarray, y_m: np.ndarray) -> float:
    """Bidirectional cross-entropy over the raw correspondence matrix.

    Observation rows classify over [token column, model points]; model
    columns classify over [token row, observation points]. Each side is a
    mean over its points; label 0 addresses the special token.
    """
    if matrix.kind != "raw":
        raise ValueError("the contrastive loss is defined on raw logits")
    a = matrix.values
    loss_obs = _cross_entropy(a[1:, :], y_o)
    loss_model = _cross_entropy(a[:, 1:].T, y_m)
    return loss_obs + loss_model


def multi_block_loss(coarse_losses, dense_losses) -> float:
    """Total training loss across coarse and dense matching blocks."""
    coarse = list(coarse_losses)
    dense = list(dense_losses)
    if not coarse or not dense:
        raise ValueError("both block loss lists must be non-empty")
    return float(sum(coarse) + sum(dense))
