"""Affordance-pixel discovery on the egocentric view.

The interaction views set a saliency floor rho: the weakest per-image peak of
raw object affinity across the E views. Egocentric pixels beating that floor
are affordance evidence (the egocentric view sees the object unoccluded, so
its peaks should exceed any interaction view's). Instances with no such pixel
fall back to plain object-level foreground selection.

rho lives on the raw cosine scale on purpose: after per-image min-max every
map peaks at exactly 1 and the cross-view comparison would be vacuous.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, InputError

PART_LEVEL = "part_level"
OBJECT_LEVEL = "object_level"


@dataclass
class PixelSets:
    """Positive/negative pixel partition for one egocentric image.

    positives and negatives are boolean [H, W] masks. Straight from
    build_pixel_sets they partition the grid; after subsampling they only
    cover it partially (subsampled flag set). rho is recorded only when the
    cross-view criterion fired.
    """

    positives: np.ndarray
    negatives: np.ndarray
    mode: str
    rho: float | None = None
    subsampled: bool = False

    @property
    def skip(self) -> bool:
        """True when the instance offers no usable positive pixel."""
        return not bool(self.positives.any())


def compute_rho(affinity_stack: list) -> float:
    """Weakest per-view peak of raw object affinity across the stack."""
    if not affinity_stack:
        raise InputError("empty exocentric affinity stack")
    return min(float(np.asarray(a.raw, dtype=np.float64).max()) for a in affinity_stack)


def build_pixel_sets(ego_affinity, rho: float, gamma2: float) -> PixelSets:
    """Partition the egocentric grid into affordance positives and negatives.

    Pixels with raw affinity strictly above rho are positives (part level).
    When none exists, positives fall back to normalized affinity strictly
    above gamma2 (object level); that set may be empty, which callers treat
    as a skip, not an error. Ties go to the negatives at both thresholds.
    """
    if not 0.0 < gamma2 < 1.0:
        raise ConfigError(f"gamma2 must lie in (0, 1), got {gamma2}")
    raw = np.asarray(ego_affinity.raw, dtype=np.float64)
    part_pos = raw > rho
    if part_pos.any():
        return PixelSets(positives=part_pos, negatives=~part_pos,
                         mode=PART_LEVEL, rho=float(rho))
    obj_pos = np.asarray(ego_affinity.map, dtype=np.float64) > gamma2
    return PixelSets(positives=obj_pos, negatives=~obj_pos, mode=OBJECT_LEVEL)


def subsample_sets(sets: PixelSets, cap: int, rng: np.random.Generator) -> PixelSets:
    """Thin each side to at most cap pixels, uniformly without replacement.

    Bounds the quadratic cost of the pixel loss. Dropped pixels leave both
    sets, so the result no longer partitions the grid.
    """
    if cap < 1:
        raise ConfigError(f"pixel cap must be positive, got {cap}")

    def thin(mask: np.ndarray) -> np.ndarray:
        idx = np.flatnonzero(mask)
        if idx.size <= cap:
            return mask
        keep = rng.choice(idx, size=cap, replace=False)
        out = np.zeros_like(mask)
        out.flat[np.sort(keep)] = True
        return out

    pos = thin(sets.positives)
    neg = thin(sets.negatives)
    changed = pos.sum() != sets.positives.sum() or neg.sum() != sets.negatives.sum()
    if not changed:
        return sets
    return PixelSets(positives=pos, negatives=neg, mode=sets.mode,
                     rho=sets.rho, subsampled=True)
