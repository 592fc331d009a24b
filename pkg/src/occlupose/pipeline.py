"""End-to-end pose estimation.

Stages: coarse farthest-point sampling -> features -> coarse assignment ->
multi-hypothesis SVD -> background/occlusion marginals interpolated to the
full clouds -> dynamic dense sampling -> iterative dense refinement ->
confidence-based final selection. Everything downstream of the provider is
deterministic given the config seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import (
    BinaryMask,
    CameraIntrinsics,
    DegenerateGeometryError,
    DepthImage,
    PointCloud,
    RigidPose,
    backproject,
    nearest_neighbors,
    transform,
)
from .matching import (
    AssignmentMatrix,
    CorrespondenceSampler,
    attention_matrix,
    dual_softmax,
    token_softmax_marginals,
)
from .providers import FeatureProvider, MatchContext
from .rng import SamplerSeed
from .sampling import dynamic_dense_sample, farthest_point_sample, interpolate_probabilities
from .geometry import solve_pose_weighted_svd

__all__ = [
    "Hypothesis",
    "PipelineConfig",
    "Observation",
    "PoseDiagnostics",
    "PoseEstimate",
    "score_hypothesis",
    "generate_hypotheses",
    "refine_once",
    "estimate_pose",
]

# Floor (meters) on the mean residual in the confidence score, so perfectly
# aligned clouds score 1 / SCORE_EPS instead of diverging.
SCORE_EPS = 1e-6


@dataclass(frozen=True)
class Hypothesis:
    pose: RigidPose
    score: float


@dataclass(frozen=True)
class PipelineConfig:
    """Tunable pipeline sizes; defaults follow the validated operating point."""

    n_coarse: int = 196
    n_dense: int = 2048
    k_hypotheses: int = 8
    n_refine: int = 8
    tau: float = 0.05
    corr_per_hyp: int = 6
    seed: SamplerSeed = field(default_factory=SamplerSeed)
    dense_sampling: str = "dynamic"  # "dynamic" | "fps" (ablation switch)

    def __post_init__(self):
        if min(self.n_coarse, self.n_dense, self.k_hypotheses) < 1:
            raise ValueError("n_coarse, n_dense and k_hypotheses must be >= 1")
        if self.n_refine < 0:
            raise ValueError("n_refine must be >= 0")
        if self.corr_per_hyp < 3:
            raise ValueError("corr_per_hyp must be >= 3 (SVD needs 3 pairs)")
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if self.dense_sampling not in ("dynamic", "fps"):
            raise ValueError("dense_sampling must be 'dynamic' or 'fps'")


@dataclass(frozen=True)
class Observation:
    """Depth-image observation; backprojected lazily by the pipeline."""

    depth: DepthImage
    mask: BinaryMask
    intrinsics: CameraIntrinsics


@dataclass
class PoseDiagnostics:
    hypothesis_scores: list[float]
    iteration_scores: list[list[float]]
    chosen_hypothesis: int
    refinement_fallbacks: int
    bg_prob_mean: float
    bg_prob_max: float
    occ_prob_mean: float
    occ_prob_max: float


@dataclass
class PoseEstimate:
    pose: RigidPose
    confidence: float
    diagnostics: PoseDiagnostics


def score_hypothesis(pose: RigidPose, obs_coarse: PointCloud, model_coarse: PointCloud) -> float:
    """Confidence: coarse size over the summed obs-to-transformed-model residuals.

    The model cloud is carried into the camera frame by the pose; each
    observation point contributes its distance to the nearest transformed
    model point. The sum is floored at SCORE_EPS per point.
    """
    if len(obs_coarse) == 0 or len(model_coarse) == 0:
        raise ValueError("coarse clouds must be non-empty")
    moved = transform(pose, model_coarse)
    _, dists = nearest_neighbors(obs_coarse, moved)
    n = len(obs_coarse)
    return n / max(float(dists.sum()), SCORE_EPS * n)


def generate_hypotheses(
    assignment: AssignmentMatrix,
    obs_coarse: PointCloud,
    model_coarse: PointCloud,
    config: PipelineConfig,
    pool_factor: int = 4,
) -> list[Hypothesis]:
    """Draw a pool of correspondence-seeded candidate poses and keep the top K.

    Each candidate solves an unweighted SVD over ``corr_per_hyp`` pairs
    sampled from the assignment interior. Degenerate draws are redrawn, up
    to 10x the pool size in total attempts. Result is sorted by confidence,
    ties resolved by draw order.
    """
    k = config.k_hypotheses
    pool = pool_factor * k
    max_attempts = 10 * pool
    base = config.seed.split("hypothesis-draws")
    sampler = CorrespondenceSampler(assignment)
    candidates: list[Hypothesis] = []
    attempt = 0
    for _ in range(pool):
        pose = None
        while pose is None:
            if attempt >= max_attempts:
                raise DegenerateGeometryError(
                    f"could not draw {pool} non-degenerate correspondence sets "
                    f"in {max_attempts} attempts"
                )
            pairs = sampler.draw(config.corr_per_hyp, base.split(attempt))
            attempt += 1
            src = model_coarse.select(pairs[:, 1])
            dst = obs_coarse.select(pairs[:, 0])
            try:
                pose = solve_pose_weighted_svd(src, dst, np.ones(len(src)))
            except DegenerateGeometryError:
                pose = None
        candidates.append(
            Hypothesis(pose, score_hypothesis(pose, obs_coarse, model_coarse))
        )
    ranked = sorted(candidates, key=lambda h: -h.score)  # stable: draw order on ties
    return ranked[:k]


def _dense_matches(
    normalized: AssignmentMatrix,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-observation argmax matches, excluding background-token argmaxes.

    Returns (obs_indices, model_indices, weights), all 0-based.
    """
    interior_argmax = np.argmax(normalized.values[1:, :], axis=1)
    keep = np.nonzero(interior_argmax >= 1)[0]
    model_idx = interior_argmax[keep] - 1
    weights = normalized.values[keep + 1, interior_argmax[keep]]
    return keep, model_idx, weights


def _refine_with_matrix(
    pose: RigidPose,
    obs_dense: PointCloud,
    model_dense: PointCloud,
    normalized: AssignmentMatrix,
) -> tuple[RigidPose, bool]:
    """One weighted-SVD refinement step from a precomputed dense assignment.

    Falls back to the input pose (flagged) when fewer than three
    observation points have a model-point argmax, or when the matched set
    is degenerate.
    """
    obs_idx, model_idx, weights = _dense_matches(normalized)
    if obs_idx.shape[0] < 3:
        return pose, True
    try:
        refined = solve_pose_weighted_svd(
            model_dense.select(model_idx), obs_dense.select(obs_idx), weights
        )
    except DegenerateGeometryError:
        return pose, True
    return refined, False


def refine_once(
    hyp: Hypothesis,
    obs_dense: PointCloud,
    model_dense: PointCloud,
    provider: FeatureProvider,
    tau: float,
) -> tuple[RigidPose, bool]:
    """Single dense-matching refinement of one hypothesis.

    The observation cloud, carried by the hypothesis pose, is exposed to the
    provider through the context; built-in providers ignore it, so their
    dense assignment is fixed across iterations. Returns the refined pose
    and a flag that is True when the input pose was returned unchanged.
    """
    fs_obs, fs_model = provider.features(
        obs_dense, model_dense, MatchContext(stage="dense", current_pose=hyp.pose)
    )
    normalized = dual_softmax(attention_matrix(fs_obs, fs_model), tau)
    return _refine_with_matrix(hyp.pose, obs_dense, model_dense, normalized)


def _as_cloud(obs) -> PointCloud:
    if isinstance(obs, PointCloud):
        return obs
    if isinstance(obs, Observation):
        return backproject(obs.depth, obs.mask, obs.intrinsics)
    raise TypeError(f"obs must be a PointCloud or Observation, got {type(obs)!r}")


def estimate_pose(
    obs,
    model: PointCloud,
    provider: FeatureProvider,
    config: PipelineConfig,
) -> PoseEstimate:
    """Full pipeline: coarse matching, hypotheses, dense refinement, selection.

    ``obs`` is either a PointCloud or an :class:`Observation` (depth + mask +
    intrinsics). Deterministic given ``config.seed``; dense features are
    computed once and recombined into the same assignment each refinement
    iteration.
    """
    obs_cloud = _as_cloud(obs)
    if len(obs_cloud) == 0:
        raise ValueError("observation cloud is empty")
    if len(model) == 0:
        raise ValueError("model cloud is empty")

    # 1) coarse uniform samples
    k_obs = min(config.n_coarse, len(obs_cloud))
    k_model = min(config.n_coarse, len(model))
    obs_c = obs_cloud.select(farthest_point_sample(obs_cloud, k_obs))
    model_c = model.select(farthest_point_sample(model, k_model))

    # 2) coarse assignment
    fs_obs_c, fs_model_c = provider.features(obs_c, model_c, MatchContext(stage="coarse"))
    raw_c = attention_matrix(fs_obs_c, fs_model_c)
    norm_c = dual_softmax(raw_c, config.tau)

    # 3) pose hypotheses
    hypotheses = generate_hypotheses(norm_c, obs_c, model_c, config)

    # 4) token marginals interpolated to the full clouds. Sampling weights
    # use the single-softmax token shares: the dual-softmax token entries
    # collapse toward 1/n_background under heavy occlusion (the token
    # column splits its own softmax mass), which would erase the signal.
    bg_c, occ_c = token_softmax_marginals(raw_c, config.tau)
    bg_full = interpolate_probabilities(obs_c.with_probs(bg_c), obs_cloud)
    occ_full = interpolate_probabilities(model_c.with_probs(occ_c), model)

    # 5) dense samples
    kd_obs = min(config.n_dense, len(obs_cloud))
    kd_model = min(config.n_dense, len(model))
    if config.dense_sampling == "dynamic":
        obs_d_idx = dynamic_dense_sample(
            obs_cloud, bg_full, kd_obs, config.seed.split("dense-obs")
        )
        model_d_idx = dynamic_dense_sample(
            model, occ_full, kd_model, config.seed.split("dense-model")
        )
    else:
        obs_d_idx = farthest_point_sample(obs_cloud, kd_obs)
        model_d_idx = farthest_point_sample(model, kd_model)
    obs_d = obs_cloud.select(obs_d_idx)
    model_d = model.select(model_d_idx)

    # 6) dense assignment (fixed features) and iterative refinement
    fs_obs_d, fs_model_d = provider.features(obs_d, model_d, MatchContext(stage="dense"))
    norm_d = dual_softmax(attention_matrix(fs_obs_d, fs_model_d), config.tau)

    refined: list[RigidPose] = []
    iteration_scores: list[list[float]] = []
    fallbacks = 0
    for hyp in hypotheses:
        current = hyp.pose
        scores = []
        for _ in range(config.n_refine):
            current, unchanged = _refine_with_matrix(current, obs_d, model_d, norm_d)
            fallbacks += int(unchanged)
            scores.append(score_hypothesis(current, obs_c, model_c))
        refined.append(current)
        iteration_scores.append(scores)

    # 7) final selection on the coarse clouds
    final_scores = [score_hypothesis(p, obs_c, model_c) for p in refined]
    chosen = int(np.argmax(final_scores))
    diag = PoseDiagnostics(
        hypothesis_scores=[h.score for h in hypotheses],
        iteration_scores=iteration_scores,
        chosen_hypothesis=chosen,
        refinement_fallbacks=fallbacks,
        bg_prob_mean=float(bg_full.mean()),
        bg_prob_max=float(bg_full.max()),
        occ_prob_mean=float(occ_full.mean()),
        occ_prob_max=float(occ_full.max()),
    )
    return PoseEstimate(pose=refined[chosen], confidence=final_scores[chosen], diagnostics=diag)
