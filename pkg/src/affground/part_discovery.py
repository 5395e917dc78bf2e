"""Part-clue discovery on the interaction views.

For one training instance: mask the interaction regions of the E exocentric
images, cluster the masked backbone features into candidate part directions,
score each candidate against an egocentric reference saliency map, and keep
the best candidate only when it clears the reliability threshold. Instances
with no reliable candidate fall back to object-level supervision; nothing in
this module raises for ordinary unreliability.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import ops
from .errors import ConfigError, DegeneratePrototype, DimensionMismatch
from .kernels import kmeans_lloyd
from .seeding import derive_seed, derived_rng

KMEANS_MAX_ITER = 100
KMEANS_TOL = 1e-6


@dataclass
class ReferenceMap:
    """Egocentric saliency reference the part candidates are scored against."""

    map: np.ndarray
    source: str  # dino_attention | clip_affinity


def build_reference(source: str, attn: np.ndarray | None, ego_affinity,
                    binarize_thresh: float = 0.75) -> ReferenceMap:
    """dino_attention uses the backbone self-attention map rescaled to [0, 1];
    clip_affinity binarizes the egocentric object affinity instead."""
    if source == "dino_attention":
        if attn is None:
            raise ConfigError("reference_source dino_attention requires an attention map")
        return ReferenceMap(map=ops.minmax_normalize(attn), source=source)
    if source == "clip_affinity":
        return ReferenceMap(map=ops.binarize(ego_affinity.map, binarize_thresh), source=source)
    raise ConfigError(f"unknown reference source '{source}'")


@dataclass
class PartSelection:
    """Outcome of part discovery for one instance.

    reliable instances carry the selected unit prototype, its similarity map
    on the egocentric grid, and one similarity map per exocentric view; the
    pIoU score of every candidate is kept either way for auditing.
    """

    reliable: bool
    piou_scores: list[float] = field(default_factory=list)
    prototype: np.ndarray | None = None
    part_map_ego: np.ndarray | None = None
    part_map_exo: list[np.ndarray] | None = None


def interaction_mask(cam: np.ndarray, affinity, gamma1: float,
                     combine: str = "product") -> np.ndarray:
    """Binary mask of interaction pixels in one exocentric view.

    The CAM knows where the classifier looks, the affinity knows where the
    object is; the masked region is where both agree. Both inputs arrive
    normalized; the combined map is renormalized before thresholding so
    gamma1 keeps its [0, 1] meaning.
    """
    if not 0.0 < gamma1 < 1.0:
        raise ConfigError(f"gamma1 must lie in (0, 1), got {gamma1}")
    cam = np.asarray(cam, dtype=np.float64)
    if combine == "product":
        combined = cam * affinity.map
    elif combine == "sum":
        combined = cam + affinity.map
    else:
        raise ConfigError(f"unknown combine mode '{combine}'")
    return ops.binarize(ops.minmax_normalize(combined), gamma1)


def _kmeans_pp_init(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding. Zero spread left while centers remain to be chosen
    means the points cannot support k distinct clusters."""
    n = points.shape[0]
    centers = np.empty((k, points.shape[1]), dtype=points.dtype)
    centers[0] = points[int(rng.integers(n))]
    d2 = ((points - centers[0]) ** 2).sum(axis=1)
    for t in range(1, k):
        total = float(d2.sum())
        if total <= 0.0:
            raise DegeneratePrototype(
                f"masked features collapse to fewer than {k} distinct points")
        idx = int(rng.choice(n, p=d2 / total))
        centers[t] = points[idx]
        d2 = np.minimum(d2, ((points - centers[t]) ** 2).sum(axis=1))
    return centers


def cluster_part_candidates(masked_feats: list[np.ndarray], masks: list[np.ndarray],
                            k: int = 3, seed: int = 0) -> np.ndarray:
    """Cluster masked pixels pooled across all exocentric views of one
    instance into k candidate part directions.

    Raises DegeneratePrototype when the pooled pixels cannot support k
    clusters (too few, or not enough distinct values); callers demote the
    instance rather than aborting.
    """
    if len(masked_feats) != len(masks) or not masked_feats:
        raise DimensionMismatch("need one mask per feature map")
    gathered = []
    for feats, mask in zip(masked_feats, masks):
        feats = np.asarray(feats, dtype=np.float64)
        mask = np.asarray(mask, dtype=np.float64)
        if feats.shape[:2] != mask.shape:
            raise DimensionMismatch(
                f"mask shape {mask.shape} does not match features {feats.shape[:2]}")
        gathered.append(feats[mask > 0.5])
    points = np.concatenate(gathered, axis=0)
    if points.shape[0] < k:
        raise DegeneratePrototype(
            f"only {points.shape[0]} interaction pixels for {k} clusters")
    rng = derived_rng(seed, "kmeans")
    init = _kmeans_pp_init(points, k, rng)
    centroids, _, _ = kmeans_lloyd(points, init, KMEANS_MAX_ITER, KMEANS_TOL)
    return centroids


def part_similarity_map(centroid: np.ndarray, feats: np.ndarray) -> np.ndarray:
    """Cosine similarity of every pixel to a candidate part direction,
    min-max rescaled."""
    centroid = np.asarray(centroid, dtype=np.float64)
    norm = float(np.sqrt((centroid * centroid).sum()))
    if norm < ops.NORM_EPS:
        raise DegeneratePrototype("zero part candidate")
    return ops.minmax_normalize(ops.cosine_map(feats, centroid))


def piou(sim: np.ndarray, ref: ReferenceMap) -> float:
    """Soft IoU between a similarity map and the reference: sum of pixelwise
    minima over sum of maxima. Reduces to set IoU on binary maps; 0 when both
    maps are empty."""
    sim = np.asarray(sim, dtype=np.float64)
    if sim.shape != ref.map.shape:
        raise DimensionMismatch(
            f"similarity {sim.shape} vs reference {ref.map.shape}")
    denom = float(np.maximum(sim, ref.map).sum())
    if denom <= 0.0:
        return 0.0
    return float(np.minimum(sim, ref.map).sum()) / denom


def select_part(centroids: np.ndarray, feats_ego: np.ndarray,
                feats_exo: list[np.ndarray], ref: ReferenceMap,
                alpha: float) -> PartSelection:
    """Score every candidate against the reference and keep the best one if
    it clears alpha. Degenerate candidates score 0 and cannot win."""
    if not 0.0 < alpha < 1.0:
        raise ConfigError(f"alpha must lie in (0, 1), got {alpha}")
    scores: list[float] = []
    sims: list[np.ndarray | None] = []
    for c in centroids:
        try:
            sim = part_similarity_map(c, feats_ego)
        except DegeneratePrototype:
            scores.append(0.0)
            sims.append(None)
            continue
        scores.append(piou(sim, ref))
        sims.append(sim)
    best = int(np.argmax(scores))
    if sims[best] is None or scores[best] <= alpha:
        return PartSelection(reliable=False, piou_scores=scores)
    chosen = centroids[best]
    return PartSelection(
        reliable=True,
        piou_scores=scores,
        prototype=ops.channel_normalize(chosen),
        part_map_ego=sims[best],
        part_map_exo=[part_similarity_map(chosen, f) for f in feats_exo],
    )


def discover_part(cam_exo: list[np.ndarray], aff_exo: list, feats_exo: list[np.ndarray],
                  feats_ego: np.ndarray, ref: ReferenceMap, alpha: float,
                  gamma1: float, k: int, seed: int, instance_id: str,
                  combine: str = "product") -> PartSelection:
    """Per-instance driver: interaction masks, clustering, candidate
    selection. Any degeneracy along the way demotes the instance to
    unreliable instead of raising."""
    masks = [interaction_mask(c, a, gamma1, combine=combine)
             for c, a in zip(cam_exo, aff_exo)]
    try:
        centroids = cluster_part_candidates(
            feats_exo, masks, k=k, seed=derive_seed(seed, "discover", instance_id))
    except DegeneratePrototype:
        return PartSelection(reliable=False)
    return select_part(centroids, feats_ego, feats_exo, ref, alpha)
