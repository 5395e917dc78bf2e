"""Dataset records, the feature-cache wrapper, directory scanning, and the
synthetic scene generator.

The synthetic generator is the package's end-to-end oracle: it plants scenes
whose object/part/background populations are known latent directions, so
discovery and grounding quality can be checked against exact masks. Scenes
are built to satisfy the pipeline's premises with margins:

- egocentric part pixels carry the action-prompt direction exactly; the
  exocentric copies are degraded (a fixed occluder mix plus pixel dropout),
  so the raw cross-view saliency floor rho lands strictly between the
  egocentric part response and everything else;
- each object has three internal feature populations (part, body, shade), so
  k-means with K=3 stays well-posed even at sigma = 0;
- egocentric scenes carry a class-correlated distractor blob whose
  language-space feature is orthogonal to every action prompt: classification
  alone happily lights it up, while affinity calibration removes it, which is
  what the end-to-end comparison measures;
- exocentric scenes add a person blob feeding the entity gate, plus a uniform
  entity floor on object pixels so the gate stays spatially flat over the
  object.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import container
from .errors import ConfigError, DataError, InputError
from .seeding import derived_rng

log = logging.getLogger("affground.data")

AGD20K_ACTIONS = (
    "beat", "boxing", "brush_with", "carry", "catch", "cut", "cut_with",
    "drag", "drink_with", "eat", "hit", "hold", "jump", "kick", "lie_on",
    "lift", "look_out", "open", "pack", "peel", "pick_up", "pour", "push",
    "ride", "sip", "sit_on", "stick", "stir", "swing", "take_photo",
    "talk_on", "text_on", "throw", "type_on", "wash", "write",
)

SYNTH_ACTIONS = ("carry", "catch", "cut", "drink_with", "hold", "sit_on")


@dataclass
class InstanceRecord:
    """One egocentric image with its exocentric partners.

    ego_ref / exo_refs are feature-cache key prefixes (entries live under
    `{ref}/dino` etc.). gt_ref is either `cache:{entry}` or `file:{path}`.
    Training records carry exactly E exo refs; test records may carry none.
    """

    instance_id: str
    action: str
    obj: str
    split: str      # train | test
    scenario: str   # seen | unseen
    ego_ref: str
    exo_refs: list[str] = field(default_factory=list)
    gt_ref: str | None = None
    ego_image: str | None = None
    exo_images: list[str] | None = None

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, d: dict) -> "InstanceRecord":
        return cls(**d)


def save_records(records: list[InstanceRecord], path: str | Path) -> None:
    Path(path).write_text(
        json.dumps([r.to_json() for r in records], sort_keys=True, indent=1) + "\n",
        encoding="utf-8")


def load_records(path: str | Path) -> list[InstanceRecord]:
    path = Path(path)
    if not path.is_file():
        raise InputError(f"no record file at {path}")
    return [InstanceRecord.from_json(d)
            for d in json.loads(path.read_text(encoding="utf-8"))]


class FeatureCache:
    """In-memory view of one on-disk container. Entries keep their stored
    dtype; read64 upcasts for compute."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.entries, self.meta = container.read_container(self.path)
        self.hash = container.container_hash(self.path)

    def has(self, name: str) -> bool:
        return name in self.entries

    def read(self, name: str) -> np.ndarray:
        if name not in self.entries:
            raise DataError(f"cache entry '{name}' missing from {self.path}")
        return self.entries[name]

    def read64(self, name: str) -> np.ndarray:
        return np.asarray(self.read(name), dtype=np.float64)


def class_list(records: list[InstanceRecord], cache: FeatureCache | None = None) -> list[str]:
    """Action-class vocabulary: the cache's pinned list when present, else
    the sorted actions occurring in the records."""
    if cache is not None and "classes" in cache.meta:
        return list(cache.meta["classes"])
    return sorted({r.action for r in records})


# --------------------------------------------------------------------------
# directory scanning

IMAGE_SUFFIXES = {".jpg", ".jpeg", ".png"}


def _list_images(d: Path) -> list[Path]:
    return sorted(p for p in d.iterdir()
                  if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES)


def scan_dataset(root: str | Path, scenario: str, e: int = 3,
                 seed: int = 0) -> list[InstanceRecord]:
    """Walk an AGD20K-style tree into records.

    Expected layout under root:
        {Scenario}/trainset/egocentric/{action}/{object}/img
        {Scenario}/trainset/exocentric/{action}/{object}/img
        {Scenario}/testset/egocentric/{action}/{object}/img
        {Scenario}/testset/GT/{action}/{object}/img.png

    Exocentric partners are sampled per egocentric image, seeded by the
    instance id, uniformly without replacement; egocentric images with fewer
    than e partners are skipped (counted, not fatal). Output is sorted by
    instance id, so the scan is order-deterministic.
    """
    root = Path(root)
    if scenario not in ("seen", "unseen"):
        raise InputError(f"scenario must be seen or unseen, got '{scenario}'")
    if not root.is_dir():
        raise InputError(f"dataset root {root} is not a directory")
    base = root / scenario.capitalize()
    if not base.is_dir():
        return []
    records: list[InstanceRecord] = []
    skipped = 0
    for split, subdir in (("train", "trainset"), ("test", "testset")):
        ego_root = base / subdir / "egocentric"
        if not ego_root.is_dir():
            if (base / subdir).is_dir():
                raise InputError(f"malformed tree: {ego_root} missing")
            continue
        for action_dir in sorted(p for p in ego_root.iterdir() if p.is_dir()):
            action = action_dir.name
            for obj_dir in sorted(p for p in action_dir.iterdir() if p.is_dir()):
                obj = obj_dir.name
                exo_dir = base / subdir / "exocentric" / action / obj
                exo_pool = _list_images(exo_dir) if exo_dir.is_dir() else []
                for img in _list_images(obj_dir):
                    iid = f"{action}/{obj}/{img.stem}"
                    exo_imgs: list[Path] = []
                    if split == "train":
                        if len(exo_pool) < e:
                            skipped += 1
                            continue
                        rng = derived_rng(seed, "exo", iid)
                        pick = rng.choice(len(exo_pool), size=e, replace=False)
                        exo_imgs = [exo_pool[i] for i in sorted(pick)]
                    gt_ref = None
                    if split == "test":
                        gt = base / subdir / "GT" / action / obj / (img.stem + ".png")
                        if gt.is_file():
                            gt_ref = f"file:{gt}"
                    records.append(InstanceRecord(
                        instance_id=iid, action=action, obj=obj, split=split,
                        scenario=scenario,
                        ego_ref=f"ego/{iid}",
                        exo_refs=[f"exo/{iid}/{k}" for k in range(len(exo_imgs))],
                        gt_ref=gt_ref,
                        ego_image=str(img),
                        exo_images=[str(p) for p in exo_imgs] or None,
                    ))
    if skipped:
        log.warning("skipped %d egocentric images with fewer than %d exocentric partners",
                    skipped, e)
    records.sort(key=lambda r: (r.split, r.instance_id))
    return records


# --------------------------------------------------------------------------
# grayscale image helpers (ground-truth heatmaps, discovery dumps)

def load_grayscale(path: str | Path) -> np.ndarray:
    from PIL import Image

    path = Path(path)
    if not path.is_file():
        raise InputError(f"no image at {path}")
    with Image.open(path) as im:
        arr = np.asarray(im.convert("L"), dtype=np.float64)
    return arr / 255.0


def save_grayscale(path: str | Path, m: np.ndarray) -> None:
    from PIL import Image

    m = np.asarray(m, dtype=np.float64)
    lo, hi = float(m.min()), float(m.max())
    if hi > lo:
        m = (m - lo) / (hi - lo)
    else:
        m = np.zeros_like(m)
    img = Image.fromarray(np.round(m * 255.0).astype(np.uint8), mode="L")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    img.save(path)


def load_gt(ref: str, cache: FeatureCache) -> np.ndarray:
    if ref.startswith("cache:"):
        return cache.read64(ref[len("cache:"):])
    if ref.startswith("file:"):
        return load_grayscale(ref[len("file:"):])
    raise InputError(f"unrecognized ground-truth ref '{ref}'")


# --------------------------------------------------------------------------
# synthetic scenes

@dataclass
class SyntheticSpec:
    """Generator knobs. The defaults are the desk-scale verification corpus;
    dims are sized against a reserved orthonormal budget (5 rows per class
    + background + occluder in dino space, 3 per class + 3 shared in
    language space), which the planted directions draw from."""

    height: int = 16
    width: int = 16
    d: int = 32
    dc: int = 24
    num_classes: int = 6
    num_train: int = 200
    num_test: int = 48
    e: int = 3
    sigma: float = 0.05
    feature_scale: float = 2.0     # backbone-like token magnitude; cosines unaffected
    occlusion: float = 0.25
    occluder_mix: float = 0.3      # fixed degradation of surviving exo object pixels
    entity_floor: float = 0.3      # entity-gate strength on exo object pixels
    body_cos: float = 0.7          # language-space cosine of body vs action prompt, exo views
    ego_body_cos: float = 0.55     # same cosine in the interaction-free ego view
    intra_cos: float = 0.5         # dino-space cosine between part/body/shade
    attn_part: float = 1.0
    attn_body: float = 0.6
    attn_bg: float = 0.05
    attn_distract: float = 0.2
    obj_h: int = 8
    obj_w: int = 8
    part_h: int = 2
    part_w: int = 4
    seed: int = 0

    def validate(self) -> None:
        if self.part_h > self.obj_h or self.part_w > self.obj_w:
            raise ConfigError("part region larger than object region")
        if self.obj_h + 4 > self.height or self.obj_w + 8 > self.width:
            raise ConfigError("object region does not fit the grid with margins")
        if self.part_h > self.obj_h - 2 or self.part_w > self.obj_w - 2:
            raise ConfigError("part region larger than the shrunk exocentric object")
        if self.d < 5 * self.num_classes + 2:
            raise ConfigError(f"d = {self.d} too small for {self.num_classes} classes")
        if self.dc < 3 * self.num_classes + 3:
            raise ConfigError(f"dc = {self.dc} too small for {self.num_classes} classes")
        if not 0.0 <= self.occlusion < 1.0:
            raise ConfigError("occlusion must lie in [0, 1)")
        if not 0.0 <= self.intra_cos < 1.0:
            raise ConfigError("intra_cos must lie in [0, 1)")
        if self.feature_scale <= 0:
            raise ConfigError("feature_scale must be positive")
        if not 0.0 <= self.ego_body_cos < 1.0:
            raise ConfigError("ego_body_cos must lie in [0, 1)")
        if self.num_classes > len(SYNTH_ACTIONS):
            raise ConfigError(f"at most {len(SYNTH_ACTIONS)} synthetic classes")


def _orthonormal(rng: np.random.Generator, dim: int, count: int) -> np.ndarray:
    q, _ = np.linalg.qr(rng.standard_normal((dim, count)))
    return q.T[:count]


@dataclass
class _Latents:
    part: np.ndarray      # [num_classes, d]
    body: np.ndarray      # [d], shared across classes
    shade: np.ndarray     # [d], shared across classes
    distract: np.ndarray  # [num_classes, d]
    bg: np.ndarray        # [d]
    occ: np.ndarray
    c_action: np.ndarray  # [num_classes, dc]
    c_body: np.ndarray
    c_body_ego: np.ndarray
    c_entity: np.ndarray
    c_bg: np.ndarray      # [dc]
    c_occ: np.ndarray
    c_distract: np.ndarray


def _build_latents(spec: SyntheticSpec) -> _Latents:
    """Plant the class signal in the part directions alone.

    Body and shade are one shared direction each, so the classification
    term cannot localize from context pixels; only the part (and the
    distractor blob) separates the classes. Within a scene the pairwise
    geometry is uniform: part.body = part.shade = body.shade = intra_cos,
    which puts the cross-class part cosine at 2 q^2 / (1 + q).
    """
    rng = derived_rng(spec.seed, "latents")
    n = spec.num_classes
    q = spec.intra_cos
    basis = _orthonormal(rng, spec.d, 5 * n + 2)
    m1, m2 = basis[0], basis[1]
    upart = basis[2:2 + n]
    distract = basis[4 * n:5 * n]
    bg, occ = basis[5 * n], basis[5 * n + 1]
    body = m1
    shade = q * m1 + np.sqrt(1.0 - q * q) * m2
    y = q * np.sqrt((1.0 - q) / (1.0 + q))
    z = np.sqrt(1.0 - q * q - y * y)
    part = q * m1[None, :] + y * m2[None, :] + z * upart
    cbasis = _orthonormal(rng, spec.dc, 3 * n + 3)
    c_action = cbasis[0:n]
    c_bodyu = cbasis[n:2 * n]
    c_entity = cbasis[2 * n:3 * n]
    c_bg, c_occ, c_distract = cbasis[3 * n], cbasis[3 * n + 1], cbasis[3 * n + 2]
    bc = spec.body_cos
    eb = spec.ego_body_cos
    return _Latents(
        part=part, body=body, shade=shade,
        distract=distract, bg=bg, occ=occ,
        c_action=c_action,
        c_body=bc * c_action + np.sqrt(1.0 - bc * bc) * c_bodyu,
        c_body_ego=eb * c_action + np.sqrt(1.0 - eb * eb) * c_bodyu,
        c_entity=c_entity, c_bg=c_bg, c_occ=c_occ, c_distract=c_distract,
    )


def _region_masks(h: int, w: int, top: int, left: int, spec: SyntheticSpec,
                  shrink: int = 0):
    """Boolean object/part/shade masks for an object placed at (top, left).
    shrink trims the object rectangle (exocentric views are smaller)."""
    oh, ow = spec.obj_h - shrink, spec.obj_w - shrink
    obj = np.zeros((h, w), dtype=bool)
    obj[top:top + oh, left:left + ow] = True
    part = np.zeros_like(obj)
    part[top:top + spec.part_h, left:left + spec.part_w] = True
    shade = np.zeros_like(obj)
    sh0 = top + oh - 1 - spec.part_h
    shade[sh0:sh0 + spec.part_h, left + 1:left + 1 + spec.part_w] = True
    return obj, part, shade


def _fill(feats: np.ndarray, mask: np.ndarray, direction: np.ndarray) -> None:
    feats[mask] = direction


def _synth_scene(spec: SyntheticSpec, lat: _Latents, cls: int, iid: str):
    """Build one scene: ego dino/clip/attn, per-view exo dino/clip, masks."""
    rng = derived_rng(spec.seed, "scene", iid)
    h, w = spec.height, spec.width
    # egocentric layout: object with part band (top) and shade band (lower
    # interior), distractor blob bottom-left corner, background elsewhere
    obj, part, shade = _region_masks(h, w, 4, 4, spec)
    body = obj & ~part & ~shade
    distract = np.zeros((h, w), dtype=bool)
    distract[h - 3:h - 1, 1:3] = True
    bg = ~obj & ~distract

    ego_dino = np.empty((h, w, spec.d))
    _fill(ego_dino, part, lat.part[cls])
    _fill(ego_dino, body, lat.body)
    _fill(ego_dino, shade, lat.shade)
    _fill(ego_dino, distract, lat.distract[cls])
    _fill(ego_dino, bg, lat.bg)

    ego_clip = np.empty((h, w, spec.dc))
    _fill(ego_clip, part, lat.c_action[cls])
    _fill(ego_clip, body | shade, lat.c_body_ego[cls])
    _fill(ego_clip, distract, lat.c_distract)
    _fill(ego_clip, bg, lat.c_bg)

    attn = np.full((h, w), spec.attn_bg)
    attn[obj] = spec.attn_body
    attn[part] = spec.attn_part
    attn[distract] = spec.attn_distract

    if spec.sigma > 0:
        ego_dino += spec.sigma * rng.standard_normal(ego_dino.shape)
        ego_clip += spec.sigma * rng.standard_normal(ego_clip.shape)
        attn = np.clip(attn + spec.sigma * rng.standard_normal(attn.shape), 0.0, None)

    # exocentric views: shrunk object, person blob separated from the object
    # by a background gap (so the pooled entity gate stays flat on-object),
    # occluder dropout, and a fixed degradation mix on surviving pixels
    e_obj, e_part, e_shade = _region_masks(h, w, 5, 4, spec, shrink=2)
    e_body = e_obj & ~e_part & ~e_shade
    entity = np.zeros((h, w), dtype=bool)
    ent_left = 4 + spec.obj_w  # two-column gap after the shrunk object
    entity[5:11, ent_left:min(ent_left + 3, w)] = True
    e_bg = ~e_obj & ~entity

    m = spec.occluder_mix
    ef = spec.entity_floor
    scale = np.sqrt(1.0 - ef * ef)

    def degraded(direction: np.ndarray) -> np.ndarray:
        base = (1.0 - m) * direction + m * lat.c_occ
        return scale * base / np.linalg.norm(base)

    exo_dino_list, exo_clip_list = [], []
    for e in range(spec.e):
        exo_dino = np.empty((h, w, spec.d))
        _fill(exo_dino, e_part, lat.part[cls])
        _fill(exo_dino, e_body, lat.body)
        _fill(exo_dino, e_shade, lat.shade)
        _fill(exo_dino, entity, lat.occ)
        _fill(exo_dino, e_bg, lat.bg)

        exo_clip = np.empty((h, w, spec.dc))
        _fill(exo_clip, e_part, degraded(lat.c_action[cls]) + ef * lat.c_entity[cls])
        _fill(exo_clip, e_body | e_shade, degraded(lat.c_body[cls]) + ef * lat.c_entity[cls])
        _fill(exo_clip, entity, lat.c_entity[cls])
        _fill(exo_clip, e_bg, lat.c_bg)

        if spec.occlusion > 0:
            occluded = (rng.random((h, w)) < spec.occlusion) & e_obj
            survivors = e_part & ~occluded
            if not survivors.any():
                # the saliency floor needs at least one visible part pixel
                ys, xs = np.nonzero(e_part)
                pick = int(rng.integers(len(ys)))
                occluded[ys[pick], xs[pick]] = False
            exo_dino[occluded] = lat.occ
            exo_clip[occluded] = scale * lat.c_occ + ef * lat.c_entity[cls]

        if spec.sigma > 0:
            exo_dino += spec.sigma * rng.standard_normal(exo_dino.shape)
            exo_clip += spec.sigma * rng.standard_normal(exo_clip.shape)
        exo_dino_list.append(exo_dino)
        exo_clip_list.append(exo_clip)

    # magnitude applied after the noise so signal-to-noise, and with it
    # every cosine-derived threshold margin, is independent of the scale
    s = spec.feature_scale
    if s != 1.0:
        ego_dino *= s
        ego_clip *= s
        for e in range(spec.e):
            exo_dino_list[e] *= s
            exo_clip_list[e] *= s

    masks = {
        "object": obj, "part": part, "background": bg, "distractor": distract,
    }
    return ego_dino, ego_clip, attn, exo_dino_list, exo_clip_list, masks


def generate_synthetic(spec: SyntheticSpec, out_dir: str | Path):
    """Write the synthetic corpus as a feature-cache container plus a record
    file. Returns (FeatureCache, records, masks by instance id)."""
    spec.validate()
    out_dir = Path(out_dir)
    entries: dict[str, np.ndarray] = {}
    records: list[InstanceRecord] = []
    all_masks: dict[str, dict[str, np.ndarray]] = {}
    actions = SYNTH_ACTIONS[:spec.num_classes]

    lat = _build_latents(spec)
    for c, action in enumerate(actions):
        entries[f"text/{action}/action"] = lat.c_action[c]
        entries[f"text/{action}/entity"] = lat.c_entity[c]
    total = spec.num_train + spec.num_test
    for i in range(total):
        cls = i % spec.num_classes
        action = actions[cls]
        split = "train" if i < spec.num_train else "test"
        stem = f"{split}_{i:04d}"
        iid = f"{action}/thing{cls}/{stem}"
        ego_dino, ego_clip, attn, exo_dino, exo_clip, masks = _synth_scene(
            spec, lat, cls, iid)
        entries[f"ego/{iid}/dino"] = ego_dino
        entries[f"ego/{iid}/clip"] = ego_clip
        entries[f"ego/{iid}/attn"] = attn
        for e in range(spec.e):
            entries[f"exo/{iid}/{e}/dino"] = exo_dino[e]
            entries[f"exo/{iid}/{e}/clip"] = exo_clip[e]
        entries[f"gt/{iid}"] = masks["part"].astype(np.float64)
        for kind, mask in masks.items():
            entries[f"mask/{iid}/{kind}"] = mask.astype(np.float64)
        records.append(InstanceRecord(
            instance_id=iid, action=action, obj=f"thing{cls}", split=split,
            scenario="seen", ego_ref=f"ego/{iid}",
            exo_refs=[f"exo/{iid}/{e}" for e in range(spec.e)],
            gt_ref=f"cache:gt/{iid}",
        ))
        all_masks[iid] = masks

    meta = {
        "kind": "synthetic",
        "classes": list(actions),
        "grid": [spec.height, spec.width],
        "dims": {"d": spec.d, "dc": spec.dc},
        "spec": {k: (v if not isinstance(v, float) else float(v))
                 for k, v in asdict(spec).items()},
    }
    container.write_container(out_dir, entries, meta=meta, dtype="<f4")
    save_records(records, out_dir / "records.json")
    return FeatureCache(out_dir), records, all_masks


def load_instance(cache: FeatureCache, record: InstanceRecord):
    """Tensors for one record: (ego dino, ego clip, attn or None,
    [exo dino...], [exo clip...])."""
    ego_dino = cache.read64(f"{record.ego_ref}/dino")
    ego_clip = cache.read64(f"{record.ego_ref}/clip")
    attn_key = f"{record.ego_ref}/attn"
    attn = cache.read64(attn_key) if cache.has(attn_key) else None
    exo_dino = [cache.read64(f"{ref}/dino") for ref in record.exo_refs]
    exo_clip = [cache.read64(f"{ref}/clip") for ref in record.exo_refs]
    return ego_dino, ego_clip, attn, exo_dino, exo_clip
