"""Run configuration: one flat key-value document.

Every hyperparameter of the method has exactly one key here; the effective
config (defaults merged with overrides) is written next to run outputs so a
run can be reproduced from its artifacts alone.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .errors import ConfigError


@dataclass
class RunConfig:
    # clue discovery
    part_iou_thresh: float = 0.6       # reliability gate on part candidates
    exo_fg_thresh: float = 0.6         # interaction-mask threshold, exocentric
    ego_fg_thresh: float = 0.6         # object-level foreground threshold, egocentric
    num_clusters: int = 3
    reference_source: str = "dino_attention"  # or clip_affinity
    ref_binarize_thresh: float = 0.75
    cam_combine: str = "product"       # interaction-mask combination rule
    pool_window: int = 3
    entity_prenorm: bool = False

    # losses
    temperature: float = 0.5
    proto_bias: float = 1.0
    proto_weight: float = 1.0
    pixel_weight: float = 1.0
    pixel_cap: int = 256
    proto_batch_reduction: str = "mean"
    pool_by_mask_mass: bool = False

    # heads / optimization
    proj_dim: int = 128
    trunk_hidden: int = 0              # 0 keeps the backbone width
    lr: float = 1e-3
    weight_decay: float = 5e-4
    momentum: float = 0.9
    batch_size: int = 8
    epochs: int = 15
    max_steps: int = 0                 # 0 means no cap
    num_exo: int = 3
    seed: int = 0

    # evaluation
    calibrate: bool = True
    kld_eps: float = 1e-12
    nss_fixation_thresh: float = 0.1
    val_slice: int = 0                 # test instances scored per epoch; 0 disables

    # run wiring
    scenario: str = "seen"
    cache_dir: str = ""
    records_path: str = ""
    out_dir: str = ""

    def validate(self) -> "RunConfig":
        for key in ("part_iou_thresh", "exo_fg_thresh", "ego_fg_thresh"):
            v = getattr(self, key)
            if not 0.0 < v < 1.0:
                raise ConfigError(f"{key} must lie in (0, 1), got {v}")
        if self.temperature <= 0:
            raise ConfigError("temperature must be positive")
        if self.reference_source not in ("dino_attention", "clip_affinity"):
            raise ConfigError(f"unknown reference_source '{self.reference_source}'")
        if self.cam_combine not in ("product", "sum"):
            raise ConfigError(f"unknown cam_combine '{self.cam_combine}'")
        if self.proto_batch_reduction not in ("mean", "sum"):
            raise ConfigError(
                f"unknown proto_batch_reduction '{self.proto_batch_reduction}'")
        if self.scenario not in ("seen", "unseen"):
            raise ConfigError(f"scenario must be seen or unseen, got '{self.scenario}'")
        if min(self.num_clusters, self.num_exo, self.batch_size, self.proj_dim) < 1:
            raise ConfigError("counts and dims must be positive")
        if self.lr <= 0 or self.momentum < 0 or self.weight_decay < 0:
            raise ConfigError("bad optimizer settings")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name: f.type for f in fields(cls)}
        unknown = set(d) - set(known)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d).validate()

    @classmethod
    def from_file(cls, path: str | Path) -> "RunConfig":
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"no config file at {path}")
        try:
            d = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"unparseable config {path}: {exc}") from exc
        return cls.from_dict(d)

    def to_file(self, path: str | Path) -> None:
        Path(path).write_text(
            json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n",
            encoding="utf-8")

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()

    def replace(self, **kwargs) -> "RunConfig":
        d = self.to_dict()
        d.update(kwargs)
        return RunConfig.from_dict(d)
