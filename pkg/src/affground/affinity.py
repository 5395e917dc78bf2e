"""Text-conditioned object affinity maps.

Affinity comes from cosine similarity between a language-aligned patch grid
and a prompt embedding. Each ObjectAffinity keeps two views of the same
evidence: the raw cosine map, whose scale is comparable across images and
feeds the cross-view saliency floor, and a per-image min-max normalized map
that the [0, 1] thresholds consume.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import ops
from .errors import ConfigError, DataError, InputError
from .kernels import box_mean_valid


def compose_action_prompt(action: str) -> str:
    """Prompt naming the object of an action, e.g. 'an item to catch with'.

    Labels use underscores for spaces. When the label itself ends in 'with'
    (brush_with, cut_with, drink_with) the template's trailing 'with' is
    dropped so it does not double up.
    """
    phrase = action.replace("_", " ").strip()
    if not phrase:
        raise InputError("empty action label")
    if phrase.split()[-1] == "with":
        return f"an item to {phrase}"
    return f"an item to {phrase} with"


def compose_entity_prompt(action: str) -> str:
    """Prompt naming the acting person, e.g. 'a person catch an item'.

    Applied verbatim even for labels ending in 'with'.
    """
    phrase = action.replace("_", " ").strip()
    if not phrase:
        raise InputError("empty action label")
    return f"a person {phrase} an item"


@dataclass
class PromptEmbedding:
    """Prompt texts for one action label plus their cached text embeddings,
    stored unit-norm."""

    action_label: str
    action_prompt_text: str
    entity_prompt_text: str
    action_emb: np.ndarray
    entity_emb: np.ndarray

    @classmethod
    def build(cls, action_label: str, action_emb: np.ndarray,
              entity_emb: np.ndarray) -> "PromptEmbedding":
        def unit(v, name):
            v = np.asarray(v, dtype=np.float64)
            n = float(np.sqrt((v * v).sum()))
            if n < ops.NORM_EPS:
                raise DataError(f"{name} embedding for '{action_label}' has near-zero norm")
            return v / n

        return cls(
            action_label=action_label,
            action_prompt_text=compose_action_prompt(action_label),
            entity_prompt_text=compose_entity_prompt(action_label),
            action_emb=unit(action_emb, "action"),
            entity_emb=unit(entity_emb, "entity"),
        )


@dataclass
class ObjectAffinity:
    """map: the [0, 1] map downstream masking consumes.
    raw: per-pixel action-prompt cosine on its native scale, for thresholds
    that must compare across views."""

    map: np.ndarray
    raw: np.ndarray
    view: str
    instance_id: str = field(default="")


def cosine_affinity(patches: np.ndarray, text: np.ndarray) -> np.ndarray:
    """Per-pixel cosine between patch embeddings and one text embedding,
    min-max rescaled to [0, 1]."""
    return ops.minmax_normalize(ops.cosine_map(patches, text))


def local_average_pool(m: np.ndarray, k: int) -> np.ndarray:
    """k x k box mean with zero padding, renormalized so border pixels
    average only their in-bounds neighbors."""
    m = np.asarray(m, dtype=np.float64)
    if k < 1 or k % 2 == 0:
        raise ConfigError(f"pooling window must be odd and positive, got {k}")
    if m.ndim != 2 or k > min(m.shape):
        raise InputError(f"window {k} does not fit map of shape {m.shape}")
    return box_mean_valid(m, k)


def ego_object_affinity(patches: np.ndarray, prompt: PromptEmbedding,
                        instance_id: str = "") -> ObjectAffinity:
    """Object affinity on the object-centric view: the action-prompt cosine
    map alone."""
    raw = ops.cosine_map(patches, prompt.action_emb)
    return ObjectAffinity(map=ops.minmax_normalize(raw), raw=raw,
                          view="ego", instance_id=instance_id)


def exo_object_affinity(patches: np.ndarray, prompt: PromptEmbedding, k: int = 3,
                        entity_prenorm: bool = False,
                        instance_id: str = "") -> ObjectAffinity:
    """Object affinity on an interaction view.

    The action map alone also lights up the person touching the object, so it
    is gated by a locally averaged person-prompt map before the final min-max.
    The local average lets person evidence vouch for object pixels adjacent
    to the contact region. With entity_prenorm the person map is min-max
    normalized before pooling; by default it is clamped to [0, 1] on its raw
    cosine scale, so a spatially flat person response scales the action map
    instead of erasing it (a constant map would min-max to zeros).
    """
    raw = ops.cosine_map(patches, prompt.action_emb)
    action = ops.minmax_normalize(raw)
    entity = ops.cosine_map(patches, prompt.entity_emb)
    if entity_prenorm:
        entity = ops.minmax_normalize(entity)
    else:
        entity = np.clip(entity, 0.0, 1.0)
    gate = local_average_pool(entity, k)
    return ObjectAffinity(map=ops.minmax_normalize(action * gate), raw=raw,
                          view="exo", instance_id=instance_id)
