"""The three-term training objective and its gradients.

Gradients are hand-derived and flow only through the projected feature
tensors and the logits. Spatial masks and CAMs act as fixed pseudo-labels
inside both contrastive terms: they are recomputed every step but carry no
gradient, which keeps the part/object clues from being dragged around by the
loss they define.

Prototype bookkeeping: every prototype or anchor is a ProtoNode remembering
its source tensor key and pooling weight map, so the backward pass can route
unit-vector gradients back to per-view feature gradients without an autograd
graph.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import ops
from .errors import ConfigError, DegeneratePrototype, DimensionMismatch, InputError
from .kernels import pairwise_contrast
from .pixel_discovery import PixelSets


@dataclass
class ProtoNode:
    """One pooled-and-normalized vector plus what the backward pass needs:
    the source-tensor key (batch index, view name) and the pooling weights."""

    key: tuple[int, str]
    weight: np.ndarray
    divisor: float
    vec: np.ndarray
    norm: float
    unit: np.ndarray


@dataclass
class PrototypePack:
    """Anchor and per-view positive/negative prototypes for one instance.
    reliable records the level actually used (part clues, or the object-level
    fallback after a demotion)."""

    label: int
    reliable: bool
    anchor: ProtoNode
    pos: dict[str, ProtoNode]
    neg: dict[str, ProtoNode]


@dataclass
class LossReport:
    ce: float
    proto: float
    pix: float
    total: float
    counts: dict[str, int] = field(default_factory=dict)


def _make_node(feats: np.ndarray, weight: np.ndarray, key: tuple[int, str],
               by_mass: bool = False) -> ProtoNode:
    weight = np.asarray(weight, dtype=np.float64)
    vec = ops.masked_pool(feats, weight, by_mass=by_mass)
    h, w = feats.shape[:2]
    divisor = float(weight.sum()) if by_mass else float(h * w)
    norm = float(np.sqrt((vec * vec).sum()))
    if norm < ops.NORM_EPS:
        raise DegeneratePrototype(f"pooled vector norm {norm:.3e} for {key}")
    return ProtoNode(key=key, weight=weight, divisor=divisor, vec=vec,
                     norm=norm, unit=vec / norm)


def phi_plus(feats: np.ndarray, mask: np.ndarray,
             by_mass: bool = False) -> np.ndarray:
    """Foreground prototype: unit-normalized mask-weighted pool."""
    return ops.channel_normalize(ops.masked_pool(feats, mask, by_mass=by_mass))


def phi_minus(feats: np.ndarray, mask: np.ndarray, cam: np.ndarray,
              beta: float = 1.0, by_mass: bool = False) -> np.ndarray:
    """Background prototype: pool weighted by beta - mask*cam, so pixels the
    clue and the CAM agree on are suppressed and everything else (weighted by
    the bias beta) remains. beta keeps the weight map from vanishing when
    mask and CAM agree everywhere."""
    mask = np.asarray(mask, dtype=np.float64)
    cam = np.asarray(cam, dtype=np.float64)
    if mask.shape != cam.shape:
        raise DimensionMismatch(
            f"mask shape {mask.shape} does not match cam {cam.shape}")
    return ops.channel_normalize(
        ops.masked_pool(feats, beta - mask * cam, by_mass=by_mass))


def build_pack(f_ego: np.ndarray, f_exo_list: list[np.ndarray], aff_ego,
               aff_exo_list: list, selection, cam_ego: np.ndarray,
               cam_exo_list: list[np.ndarray], label: int, beta: float = 1.0,
               index: int = 0, by_mass: bool = False) -> PrototypePack | None:
    """Assemble the anchor and per-view prototype nodes for one instance.

    Reliable instances use the discovered part maps and an object-masked
    anchor; unreliable ones use object affinity maps and a whole-image
    anchor. A degenerate prototype demotes the instance to the object level;
    if that degenerates too, the instance contributes no prototype term and
    None is returned.
    """

    def attempt(part_level: bool) -> PrototypePack:
        if part_level:
            mask_ego = selection.part_map_ego
            masks_exo = selection.part_map_exo
            anchor_w = aff_ego.map
        else:
            mask_ego = aff_ego.map
            masks_exo = [a.map for a in aff_exo_list]
            anchor_w = np.ones(f_ego.shape[:2], dtype=np.float64)
        anchor = _make_node(f_ego, anchor_w, (index, "ego"), by_mass)
        pos = {"ego": _make_node(f_ego, mask_ego, (index, "ego"), by_mass)}
        neg = {"ego": _make_node(f_ego, beta - mask_ego * cam_ego,
                                 (index, "ego"), by_mass)}
        for e, f_exo in enumerate(f_exo_list):
            view = f"exo{e}"
            pos[view] = _make_node(f_exo, masks_exo[e], (index, view), by_mass)
            neg[view] = _make_node(
                f_exo, beta - masks_exo[e] * cam_exo_list[e], (index, view),
                by_mass)
        return PrototypePack(label=label, reliable=part_level,
                             anchor=anchor, pos=pos, neg=neg)

    for part_level in ([True, False] if selection.reliable else [False]):
        try:
            return attempt(part_level)
        except DegeneratePrototype:
            continue
    return None


def proto_sets(packs: list[PrototypePack | None], b: int):
    """Positive and negative prototype sets for instance b.

    Positives: every positive prototype in the batch sharing b's label,
    including b's own. Negatives: same-label negative prototypes plus
    other-label positives. Iteration order is fixed by batch index then view
    name, so the sets are deterministic.
    """
    me = packs[b]
    if me is None:
        raise InputError(f"instance {b} contributed no prototypes")
    pos: list[ProtoNode] = []
    neg: list[ProtoNode] = []
    for p in packs:
        if p is None:
            continue
        if p.label == me.label:
            pos.extend(p.pos.values())
            neg.extend(p.neg.values())
        else:
            neg.extend(p.pos.values())
    return pos, neg


def proto_loss_and_grads(packs: list[PrototypePack | None], tau: float):
    """Prototype contrastive loss, mean over contributing instances.

    Returns (loss, feature gradients keyed by (batch index, view name),
    number of contributing instances).
    """
    if tau <= 0.0:
        raise ConfigError(f"temperature must be positive, got {tau}")
    contributing = [b for b, p in enumerate(packs) if p is not None]
    if not contributing:
        return 0.0, {}, 0
    inv_tau = 1.0 / tau
    w = 1.0 / len(contributing)
    total = 0.0
    unit_grads: dict[int, list] = {}

    def add_unit_grad(node: ProtoNode, g: np.ndarray) -> None:
        slot = unit_grads.get(id(node))
        if slot is None:
            unit_grads[id(node)] = [node, g.copy()]
        else:
            slot[1] += g

    for b in contributing:
        me = packs[b]
        pos, neg = proto_sets(packs, b)
        cands = pos + neg
        n_pos = len(pos)
        z = me.anchor.unit
        s = np.array([float(z @ n.unit) for n in cands]) * inv_tau
        smax = s.max()
        ex = np.exp(s - smax)
        denom = ex.sum()
        lse = smax + np.log(denom)
        total += lse - s[:n_pos].mean()
        ds = ex / denom
        ds[:n_pos] -= 1.0 / n_pos
        gz = np.zeros_like(z)
        for j, cand in enumerate(cands):
            coeff = ds[j] * inv_tau * w
            gz += coeff * cand.unit
            add_unit_grad(cand, coeff * z)
        add_unit_grad(me.anchor, gz)

    feat_grads: dict[tuple[int, str], np.ndarray] = {}
    for node, g in unit_grads.values():
        dv = (g - float(g @ node.unit) * node.unit) / node.norm
        dz = node.weight[:, :, None] * (dv[None, None, :] / node.divisor)
        if node.key in feat_grads:
            feat_grads[node.key] += dz
        else:
            feat_grads[node.key] = dz
    return total * w, feat_grads, len(contributing)


def proto_loss(packs: list[PrototypePack | None], tau: float) -> float:
    loss, _, _ = proto_loss_and_grads(packs, tau)
    return loss


def pixel_loss_and_grad(feats: np.ndarray, sets: PixelSets, tau: float):
    """Pixel contrastive loss within one egocentric image.

    Every positive pixel anchors against all positives (itself included) over
    a denominator spanning both sets. Features are unit-normalized per pixel
    before the dot products; the gradient is with respect to the raw feature
    map. A skipped instance (no positives) returns (0.0, zeros).
    """
    if tau <= 0.0:
        raise ConfigError(f"temperature must be positive, got {tau}")
    feats = np.asarray(feats, dtype=np.float64)
    dfeats = np.zeros_like(feats)
    if sets.skip:
        return 0.0, dfeats
    H, W, D = feats.shape
    if sets.positives.shape != (H, W):
        raise DimensionMismatch(
            f"pixel sets shape {sets.positives.shape} vs features {(H, W)}")
    pos_idx = np.flatnonzero(sets.positives)
    neg_idx = np.flatnonzero(sets.negatives)
    rows = np.concatenate([pos_idx, neg_idx])
    flat = feats.reshape(H * W, D)
    v = flat[rows]
    norms = np.sqrt((v * v).sum(axis=1, keepdims=True))
    div = np.maximum(norms, ops.NORM_EPS)
    u = v / div
    loss, du = pairwise_contrast(u, len(pos_idx), 1.0 / tau)
    proj = (du * u).sum(axis=1, keepdims=True)
    dv = np.where(norms > ops.NORM_EPS, (du - proj * u) / div, du / div)
    dflat = dfeats.reshape(H * W, D)
    dflat[rows] = dv
    return float(loss), dfeats


def pixel_loss(feats: np.ndarray, sets: PixelSets, tau: float) -> float:
    loss, _ = pixel_loss_and_grad(feats, sets, tau)
    return loss


def classification_loss_and_grads(logits_ego: np.ndarray,
                                  logits_exo_list: list[np.ndarray], label: int):
    """Cross-entropy of the true action class, averaged over the egocentric
    view and every exocentric view. Returns (loss, [dlogits per view] with
    the egocentric view first)."""
    views = [np.asarray(logits_ego, dtype=np.float64)]
    views.extend(np.asarray(lg, dtype=np.float64) for lg in logits_exo_list)
    num_classes = views[0].shape[0]
    if not 0 <= label < num_classes:
        raise InputError(f"label {label} outside [0, {num_classes})")
    n_views = len(views)
    total = 0.0
    grads = []
    for lg in views:
        if lg.shape != (num_classes,):
            raise DimensionMismatch("logit vectors disagree on class count")
        m = lg.max()
        ex = np.exp(lg - m)
        denom = ex.sum()
        total += (m + np.log(denom)) - lg[label]
        g = ex / denom
        g[label] -= 1.0
        grads.append(g / n_views)
    return total / n_views, grads


def classification_loss(logits_ego: np.ndarray, logits_exo_list: list[np.ndarray],
                        label: int) -> float:
    loss, _ = classification_loss_and_grads(logits_ego, logits_exo_list, label)
    return loss


def total_loss(ce: float, proto: float, pix: float, lam1: float, lam2: float,
               counts: dict[str, int] | None = None) -> LossReport:
    """Weighted sum of the three terms plus bookkeeping counts."""
    total = ce + lam1 * proto + lam2 * pix
    return LossReport(ce=float(ce), proto=float(proto), pix=float(pix),
                      total=float(total), counts=dict(counts or {}))
