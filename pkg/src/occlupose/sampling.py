"""Point-cloud subsampling: static uniform (farthest point) and dynamic
non-uniform (alias table + Gumbel-top-k), plus coarse-to-full probability
interpolation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import PointCloud
from .rng import SamplerSeed

__all__ = [
    "AliasTable",
    "farthest_point_sample",
    "build_alias_table",
    "sample_alias",
    "gumbel_top_k",
    "interpolate_probabilities",
    "dynamic_dense_sample",
]

# Points with probability 1 still keep this much sampling weight so none is
# permanently unselectable.
WEIGHT_FLOOR = 1e-4

_INTERP_EPS = 1e-9


@dataclass(frozen=True)
class AliasTable:
    """Walker-Vose table: O(N) build, O(1) per draw.

    ``prob[i]`` is the probability of keeping slot i when it is drawn
    uniformly; otherwise the draw resolves to ``alias[i]``.
    """

    prob: np.ndarray
    alias: np.ndarray

    def marginals(self) -> np.ndarray:
        """Analytic per-index probability implied by (prob, alias)."""
        n = self.prob.shape[0]
        m = self.prob.copy()
        np.add.at(m, self.alias, 1.0 - self.prob)
        return m / n


def farthest_point_sample(cloud: PointCloud, k: int) -> np.ndarray:
    """Greedy max-min-distance subsample of k indices, starting at index 0.

    Each new index maximizes the minimum distance to the already-selected
    set; ties break toward the smallest index. Deterministic.
    """
    n = len(cloud)
    if not 1 <= k <= n:
        raise ValueError(f"k must be in [1, {n}], got {k}")
    pts = cloud.points
    selected = np.empty(k, dtype=np.intp)
    selected[0] = 0
    min_d2 = np.sum((pts - pts[0]) ** 2, axis=1)
    for i in range(1, k):
        nxt = int(np.argmax(min_d2))  # argmax returns the first max: index tie-break
        selected[i] = nxt
        np.minimum(min_d2, np.sum((pts - pts[nxt]) ** 2, axis=1), out=min_d2)
    return selected


def build_alias_table(weights: np.ndarray) -> AliasTable:
    """Build a Walker-Vose alias table over normalized non-negative weights."""
    w = np.asarray(weights, dtype=np.float64).reshape(-1)
    n = w.shape[0]
    if n < 1:
        raise ValueError("weights must be non-empty")
    if np.any(w < 0):
        raise ValueError("weights must be non-negative")
    total = w.sum()
    if total <= 0:
        raise ValueError("weights must have positive sum")

    scaled = w * (n / total)
    prob = np.ones(n, dtype=np.float64)
    alias = np.arange(n, dtype=np.intp)
    small = [i for i in range(n) if scaled[i] < 1.0]
    large = [i for i in range(n) if scaled[i] >= 1.0]
    while small and large:
        s = small.pop()
        g = large.pop()
        prob[s] = scaled[s]
        alias[s] = g
        scaled[g] = (scaled[g] + scaled[s]) - 1.0
        if scaled[g] < 1.0:
            small.append(g)
        else:
            large.append(g)
    # Leftovers (either queue) get probability 1 exactly.
    return AliasTable(prob=prob, alias=alias)


def sample_alias(table: AliasTable, count: int, rng: SamplerSeed) -> np.ndarray:
    """Draw ``count`` i.i.d. indices from the table's distribution."""
    gen = rng.generator()
    n = table.prob.shape[0]
    slots = gen.integers(0, n, size=count)
    keep = gen.random(count) < table.prob[slots]
    return np.where(keep, slots, table.alias[slots])


def gumbel_top_k(
    weights: np.ndarray, k: int, rng: SamplerSeed, draws: int | None = None
) -> np.ndarray:
    """Sample k distinct indices without replacement, proportional to weights.

    Returns the indices of the k largest values of log(w_i) + G_i with
    standard Gumbel noise G_i, sorted by perturbed key descending.
    Zero-weight indices are never selected. ``draws`` batches independent
    repetitions from the same stream into a (draws, k) array, which keeps
    Monte Carlo validation runs vectorized.
    """
    w = np.asarray(weights, dtype=np.float64).reshape(-1)
    if np.any(w < 0):
        raise ValueError("weights must be non-negative")
    positive = np.count_nonzero(w > 0)
    if k > positive:
        raise ValueError(f"k={k} exceeds the {positive} strictly positive weights")
    gen = rng.generator()
    u = gen.random((1 if draws is None else draws, w.shape[0]))
    with np.errstate(divide="ignore", invalid="ignore"):
        keys = np.log(w) - np.log(-np.log(u))
    keys[:, w == 0] = -np.inf
    top = np.argpartition(keys, -k, axis=1)[:, -k:]
    row = np.arange(top.shape[0])[:, None]
    order = np.argsort(-keys[row, top], axis=1, kind="stable")
    result = top[row, order]
    return result[0] if draws is None else result


def interpolate_probabilities(coarse: PointCloud, full: PointCloud) -> np.ndarray:
    """Extend per-point probabilities from a coarse sample to a full cloud.

    Inverse-distance weighting: w_j(q) proportional to 1 / (||q - c_j|| + eps),
    normalized over the coarse set. A query within eps of a coarse point
    takes that point's probability exactly. Output clamped to [0, 1].
    """
    if coarse.probs is None:
        raise ValueError("coarse cloud has no probs")
    if len(coarse) == 0:
        raise ValueError("coarse cloud is empty")
    out = np.empty(len(full), dtype=np.float64)
    cpts = coarse.points
    cprobs = coarse.probs
    chunk = max(1, (1 << 21) // max(len(coarse), 1))
    for lo in range(0, len(full), chunk):
        q = full.points[lo : lo + chunk]
        d = np.sqrt(
            np.sum((q[:, None, :] - cpts[None, :, :]) ** 2, axis=2)
        )
        w = 1.0 / (d + _INTERP_EPS)
        vals = (w @ cprobs) / w.sum(axis=1)
        nearest = np.argmin(d, axis=1)
        coincident = d[np.arange(q.shape[0]), nearest] < _INTERP_EPS
        vals[coincident] = cprobs[nearest[coincident]]
        out[lo : lo + chunk] = vals
    return np.clip(out, 0.0, 1.0)


def dynamic_dense_sample(
    cloud: PointCloud,
    occl_or_bg_probs: np.ndarray,
    k: int,
    rng: SamplerSeed,
    draws: int | None = None,
) -> np.ndarray:
    """Sample k distinct indices favoring points unlikely to be occluded/background.

    Sampling weight per point is max(1 - prob, WEIGHT_FLOOR), drawn by
    Gumbel-top-k. The farthest-point fallback guards the (unreachable with
    a positive floor) case of fewer than k positively weighted points.
    """
    n = len(cloud)
    if k > n:
        raise ValueError(f"k={k} exceeds cloud size {n}")
    probs = np.asarray(occl_or_bg_probs, dtype=np.float64).reshape(-1)
    if probs.shape[0] != n:
        raise ValueError("probability vector length must match cloud size")
    if np.any((probs < 0) | (probs > 1)):
        raise ValueError("probabilities must lie in [0, 1]")
    weights = np.maximum(1.0 - probs, WEIGHT_FLOOR)
    if np.count_nonzero(weights > 0) < k:
        return farthest_point_sample(cloud, k)
    return gumbel_top_k(weights, k, rng, draws=draws)
