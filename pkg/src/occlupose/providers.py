"""Pluggable feature providers.

Matching quality in this package is decoupled from any learned network: a
provider maps an (observation cloud, model cloud) pair to a FeatureSet
pair with a shared dimension. Built-ins:

* :class:`OracleFeatureProvider` derives features from a known ground-truth
  pose (optionally noised), so the matching stack can be exercised and
  validated end to end.
* :class:`RandomFeatureProvider` emits featureless noise, for robustness
  checks.

Providers must be pure: calling one twice with the same inputs returns the
same features, and concurrent read-only use is safe. Built-ins key their
internal randomness off a content hash of the inputs.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Protocol

import numpy as np

from .geometry import PointCloud, RigidPose, nearest_neighbors
from .matching import FeatureSet
from .rng import SamplerSeed

__all__ = [
    "MatchContext",
    "FeatureProvider",
    "OracleFeatureProvider",
    "RandomFeatureProvider",
    "PROVIDER_NAMES",
    "make_provider",
]


@dataclass(frozen=True)
class MatchContext:
    """Call-site information a provider may use (or ignore).

    ``current_pose`` is the hypothesis being refined, when there is one.
    The built-in providers ignore it, which keeps dense features fixed
    across refinement iterations.
    """

    stage: str = ""
    current_pose: RigidPose | None = None


class FeatureProvider(Protocol):
    def features(
        self, obs: PointCloud, model: PointCloud, context: MatchContext
    ) -> tuple[FeatureSet, FeatureSet]: ...


def _content_key(*parts) -> int:
    h = hashlib.blake2b(digest_size=8)
    for p in parts:
        if isinstance(p, np.ndarray):
            h.update(np.ascontiguousarray(p).tobytes())
        elif isinstance(p, str):
            h.update(p.encode("utf-8"))
        elif isinstance(p, (int, np.integer)):
            h.update(int(p).to_bytes(8, "little", signed=False))
        else:
            raise TypeError(f"unsupported key part {type(p)!r}")
        h.update(b"\x1f")
    return int.from_bytes(h.digest(), "little")


def _median_spacing(points: np.ndarray, probe: int = 256) -> float:
    """Sampling-density spacing estimate, robust to clustered subsets.

    Uses the median 4th-nearest-neighbor distance, rescaled to the
    nearest-neighbor spacing of an evenly spread set. The plain NN median
    collapses to the parent cloud's grid pitch on random subsets of
    gridded surfaces, which would misreport the subset's density.
    """
    n = points.shape[0]
    if n < 2:
        return 1e-6
    k = min(4, n - 1)
    step = max(1, n // probe)
    sub = points[::step]
    d2 = np.sum((sub[:, None, :] - points[None, :, :]) ** 2, axis=2)
    dk = np.sqrt(np.partition(d2, k, axis=1)[:, k])  # column 0 is self
    return float(np.median(dk) / 1.4)


class OracleFeatureProvider:
    """Features derived from the ground-truth pose.

    Observation points are carried into the model frame through the GT pose;
    points that land near the model surface get a smooth positional embedding
    (random Fourier features of their aligned position), so their attention
    peaks at the geometrically matching model points. Points with no model
    counterpart within ``match_radius`` emit the model-side occlusion token
    direction instead, and model points with no observation counterpart emit
    the background token direction, so the token marginals flag background
    and occluded regions. Gaussian feature noise of scale ``noise_sigma``
    degrades the oracle gracefully.
    """

    def __init__(
        self,
        gt_pose: RigidPose,
        noise_sigma: float = 0.0,
        feature_dim: int = 128,
        match_radius: float | None = None,
        kernel_width: float | None = None,
        kernel_scale: float = 0.7,
        seed: int = 0,
    ):
        # The positional embedding is a random Fourier approximation of a
        # Gaussian kernel; its spurious long-range correlations scale like
        # 1/sqrt(dim), so dimensions far below the default degrade matching.
        if feature_dim < 16:
            raise ValueError("feature_dim must be at least 16")
        self.gt_pose = gt_pose
        self.noise_sigma = float(noise_sigma)
        self.feature_dim = int(feature_dim)
        self.match_radius = match_radius
        self.kernel_width = kernel_width
        self.kernel_scale = float(kernel_scale)
        self.seed = int(seed)
        n_pos = self.feature_dim - 2
        gen = SamplerSeed(self.seed, _content_key("oracle-basis")).generator()
        self._omega = gen.standard_normal((n_pos, 3))
        self._phase = gen.uniform(0.0, 2.0 * np.pi, size=n_pos)

    def _embed(self, positions: np.ndarray, sigma_k: float) -> np.ndarray:
        n_pos = self.feature_dim - 2
        proj = positions @ (self._omega / sigma_k).T + self._phase
        out = np.zeros((positions.shape[0], self.feature_dim))
        out[:, :n_pos] = np.sqrt(2.0 / n_pos) * np.cos(proj)
        return out

    def features(
        self, obs: PointCloud, model: PointCloud, context: MatchContext
    ) -> tuple[FeatureSet, FeatureSet]:
        c = self.feature_dim
        bg_token = np.zeros(c)
        bg_token[c - 2] = 1.0
        oc_token = np.zeros(c)
        oc_token[c - 1] = 1.0

        aligned = self.gt_pose.inverse().apply(obs.points)
        aligned_cloud = PointCloud(aligned)
        spacing = _median_spacing(model.points)
        if self.kernel_width is not None:
            sigma_k = self.kernel_width
        else:
            sigma_k = self.kernel_scale * spacing
        sigma_k = max(sigma_k, 1e-9)

        # A point with no counterpart within a few sampling steps of the
        # other side's cloud is background (observation) / occluded (model).
        _, d_obs = nearest_neighbors(aligned_cloud, model)
        _, d_model = nearest_neighbors(model, aligned_cloud)
        if self.match_radius is not None:
            r_obs = r_model = self.match_radius
        else:
            r_obs = 3.0 * spacing
            r_model = 3.0 * _median_spacing(aligned)
        obs_visible = d_obs <= r_obs
        model_visible = d_model <= r_model

        f_obs = np.where(obs_visible[:, None], self._embed(aligned, sigma_k), oc_token)
        f_model = np.where(
            model_visible[:, None], self._embed(model.points, sigma_k), bg_token
        )

        if self.noise_sigma > 0:
            key = _content_key(
                self.seed, "noise", context.stage, obs.points, model.points
            )
            gen = SamplerSeed(self.seed, key).generator()
            f_obs = f_obs + self.noise_sigma * gen.standard_normal(f_obs.shape)
            f_model = f_model + self.noise_sigma * gen.standard_normal(f_model.shape)

        return FeatureSet(f_obs, bg_token), FeatureSet(f_model, oc_token)


class RandomFeatureProvider:
    """Structureless Gaussian features; useful only to stress robustness."""

    def __init__(self, seed: int = 0, feature_dim: int = 32):
        self.seed = int(seed)
        self.feature_dim = int(feature_dim)

    def features(
        self, obs: PointCloud, model: PointCloud, context: MatchContext
    ) -> tuple[FeatureSet, FeatureSet]:
        key = _content_key(self.seed, "random", context.stage, obs.points, model.points)
        gen = SamplerSeed(self.seed, key).generator()
        f_obs = gen.standard_normal((len(obs), self.feature_dim))
        f_model = gen.standard_normal((len(model), self.feature_dim))
        bg = gen.standard_normal(self.feature_dim)
        oc = gen.standard_normal(self.feature_dim)
        return FeatureSet(f_obs, bg), FeatureSet(f_model, oc)


PROVIDER_NAMES = ("oracle", "noisy", "random")


def make_provider(
    name: str,
    gt_pose: RigidPose | None = None,
    noise_sigma: float = 0.1,
    feature_dim: int = 32,
    seed: int = 0,
):
    """Instantiate a built-in provider by name.

    ``oracle`` and ``noisy`` need a ground-truth pose; ``noisy`` is the
    oracle with Gaussian feature noise (``noise_sigma``).
    """
    if name not in PROVIDER_NAMES:
        raise ValueError(f"unknown provider {name!r}; available: {', '.join(PROVIDER_NAMES)}")
    if name == "random":
        return RandomFeatureProvider(seed=seed, feature_dim=feature_dim)
    if gt_pose is None:
        raise ValueError(f"provider {name!r} requires a ground-truth pose")
    sigma = 0.0 if name == "oracle" else noise_sigma
    return OracleFeatureProvider(
        gt_pose, noise_sigma=sigma, feature_dim=feature_dim, seed=seed
    )
