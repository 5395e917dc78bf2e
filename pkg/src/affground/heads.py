"""Trainable heads over the frozen backbone features.

A shared trunk of two 3x3 convolutions feeds three branches: a prototype
projection and a pixel projection (each a per-pixel linear map into the
contrastive width followed by a parameter-free layer norm), and a shared 1x1
classifier whose per-class spatial response is the CAM. Logits are the
spatial mean of the CAM, so classification supervision and localization come
from one parameter set.

The backward pass is hand-derived. It consumes gradients with respect to the
two projected feature maps and the logits; the CAM-as-mask path is
deliberately excluded (masks are pseudo-labels, see losses). No gradient
reaches the backbone features.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import container, ops
from .errors import ConfigError, DataError, NumericError
from .kernels import conv3x3_backward, conv3x3_forward

LN_EPS = 1e-5

PARAM_NAMES = ("w1", "b1", "w2", "b2", "wp", "bp", "wx", "bx", "wc", "bc")


@dataclass
class HeadParams:
    w1: np.ndarray  # [3,3,D,Dh] trunk conv 1
    b1: np.ndarray
    w2: np.ndarray  # [3,3,Dh,D] trunk conv 2
    b2: np.ndarray
    wp: np.ndarray  # [D,Dp] prototype projection
    bp: np.ndarray
    wx: np.ndarray  # [D,Dp] pixel projection
    bx: np.ndarray
    wc: np.ndarray  # [D,C] shared classifier
    bc: np.ndarray

    def tensors(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    @classmethod
    def from_tensors(cls, tensors: dict[str, np.ndarray]) -> "HeadParams":
        return cls(**{name: np.asarray(tensors[name], dtype=np.float64)
                      for name in PARAM_NAMES})

    @property
    def num_classes(self) -> int:
        return self.wc.shape[1]


@dataclass
class ForwardOutputs:
    proto_feats: np.ndarray   # F-tilde, [H,W,Dp]
    pixel_feats: np.ndarray   # F-hat, [H,W,Dp]
    logits: np.ndarray        # [C]
    cam_all: np.ndarray       # [C,H,W]
    cam_target: np.ndarray    # minmax-normalized CAM of the target class
    cache: dict = field(default_factory=dict, repr=False)


def init_params(seed: int, d: int, dp: int, num_classes: int,
                trunk_hidden: int | None = None) -> HeadParams:
    """Fan-in-scaled uniform init, biases zero. Weight variance is 2/fan_in
    (uniform on +-sqrt(6/fan_in))."""
    if min(d, dp, num_classes) < 1:
        raise ConfigError("head dimensions must be positive")
    dh = trunk_hidden or d
    rng = np.random.default_rng(seed)

    def uniform(shape, fan_in):
        bound = np.sqrt(6.0 / fan_in)
        return rng.uniform(-bound, bound, size=shape)

    return HeadParams(
        w1=uniform((3, 3, d, dh), 9 * d), b1=np.zeros(dh),
        w2=uniform((3, 3, dh, d), 9 * dh), b2=np.zeros(d),
        wp=uniform((d, dp), d), bp=np.zeros(dp),
        wx=uniform((d, dp), d), bx=np.zeros(dp),
        wc=uniform((d, num_classes), d), bc=np.zeros(num_classes),
    )


def _layernorm_forward(x: np.ndarray):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    return xc * inv, (xc * inv, inv)


def _layernorm_backward(dy: np.ndarray, cache) -> np.ndarray:
    y, inv = cache
    return inv * (dy - dy.mean(axis=-1, keepdims=True)
                  - y * (dy * y).mean(axis=-1, keepdims=True))


def forward(feats: np.ndarray, label: int, params: HeadParams) -> ForwardOutputs:
    """Run all branches on one view. The cache on the output carries the
    intermediates backward() needs."""
    feats = np.asarray(feats, dtype=np.float64)
    if feats.ndim != 3 or feats.shape[2] != params.w1.shape[2]:
        raise ConfigError(
            f"feature channels {feats.shape} do not match head width {params.w1.shape[2]}")
    if not 0 <= label < params.num_classes:
        raise ConfigError(f"label {label} outside [0, {params.num_classes})")
    t1 = conv3x3_forward(feats, params.w1, params.b1)
    a1 = np.maximum(t1, 0.0)
    t2 = conv3x3_forward(a1, params.w2, params.b2)
    proto_pre = t2 @ params.wp + params.bp
    proto_feats, proto_ln = _layernorm_forward(proto_pre)
    pixel_pre = t2 @ params.wx + params.bx
    pixel_feats, pixel_ln = _layernorm_forward(pixel_pre)
    cam_hwc = t2 @ params.wc + params.bc
    logits = cam_hwc.mean(axis=(0, 1))
    cam_all = np.transpose(cam_hwc, (2, 0, 1))
    cam_target = ops.minmax_normalize(cam_all[label])
    return ForwardOutputs(
        proto_feats=proto_feats, pixel_feats=pixel_feats, logits=logits,
        cam_all=cam_all, cam_target=cam_target,
        cache={"feats": feats, "t1": t1, "a1": a1, "t2": t2,
               "proto_ln": proto_ln, "pixel_ln": pixel_ln},
    )


def backward(out: ForwardOutputs, params: HeadParams,
             d_proto: np.ndarray | None, d_pixel: np.ndarray | None,
             d_logits: np.ndarray | None) -> dict[str, np.ndarray]:
    """Map branch gradients to parameter gradients for one view. Any of the
    three branch gradients may be None (that branch contributed no loss)."""
    cache = out.cache
    feats, t1, a1, t2 = cache["feats"], cache["t1"], cache["a1"], cache["t2"]
    H, W, D = t2.shape
    grads = {name: np.zeros_like(t) for name, t in params.tensors().items()}
    dt2 = np.zeros_like(t2)
    flat_t2 = t2.reshape(H * W, D)

    if d_proto is not None:
        dpre = _layernorm_backward(np.asarray(d_proto, dtype=np.float64),
                                   cache["proto_ln"])
        grads["wp"] += flat_t2.T @ dpre.reshape(H * W, -1)
        grads["bp"] += dpre.sum(axis=(0, 1))
        dt2 += dpre @ params.wp.T
    if d_pixel is not None:
        dpre = _layernorm_backward(np.asarray(d_pixel, dtype=np.float64),
                                   cache["pixel_ln"])
        grads["wx"] += flat_t2.T @ dpre.reshape(H * W, -1)
        grads["bx"] += dpre.sum(axis=(0, 1))
        dt2 += dpre @ params.wx.T
    if d_logits is not None:
        d_logits = np.asarray(d_logits, dtype=np.float64)
        d_cam = np.broadcast_to(d_logits / (H * W), (H, W, d_logits.shape[0]))
        grads["wc"] += flat_t2.T @ d_cam.reshape(H * W, -1)
        grads["bc"] += d_logits
        dt2 += d_cam @ params.wc.T

    da1, dw2, db2 = conv3x3_backward(a1, params.w2, dt2)
    grads["w2"] += dw2
    grads["b2"] += db2
    dt1 = da1 * (t1 > 0.0)
    _, dw1, db1 = conv3x3_backward(feats, params.w1, dt1)
    grads["w1"] += dw1
    grads["b1"] += db1
    return grads


def accumulate_grads(into: dict[str, np.ndarray], new: dict[str, np.ndarray]) -> None:
    for name, g in new.items():
        into[name] += g


def zero_grads(params: HeadParams) -> dict[str, np.ndarray]:
    return {name: np.zeros_like(t) for name, t in params.tensors().items()}


@dataclass
class OptState:
    velocity: dict[str, np.ndarray]

    @classmethod
    def fresh(cls, params: HeadParams) -> "OptState":
        return cls(velocity={name: np.zeros_like(t)
                             for name, t in params.tensors().items()})


def sgd_step(params: HeadParams, grads: dict[str, np.ndarray], lr: float,
             weight_decay: float, momentum: float, state: OptState) -> HeadParams:
    """Momentum SGD with decoupled L2 (the decay shrinks parameters directly
    rather than entering the velocity). Updates params and state in place.

    Non-finite gradients reject the whole step: a poisoned velocity buffer
    would corrupt every later step, so the failure must surface here.
    """
    if lr <= 0.0:
        raise ConfigError(f"learning rate must be positive, got {lr}")
    for name in PARAM_NAMES:
        g = grads[name]
        if not np.isfinite(g).all():
            raise NumericError(f"non-finite gradient in '{name}'; step rejected")
    for name in PARAM_NAMES:
        v = state.velocity[name]
        v *= momentum
        v += grads[name]
        p = getattr(params, name)
        p -= lr * (v + weight_decay * p)
    return params


CHECKPOINT_KIND = "head-checkpoint"


def save_checkpoint(path: str, params: HeadParams, state: OptState,
                    meta: dict | None = None) -> str:
    """Write params plus optimizer velocities to a container at `path`.

    Stored at full precision so a resumed run continues bit-exactly.
    Returns the payload hash.
    """
    entries: dict[str, np.ndarray] = dict(params.tensors())
    for name, v in state.velocity.items():
        entries[f"opt/{name}"] = v
    full = dict(meta or {})
    full["kind"] = CHECKPOINT_KIND
    return container.write_container(path, entries, meta=full, dtype="<f8")


def load_checkpoint(path: str) -> tuple[HeadParams, OptState, dict]:
    """Inverse of save_checkpoint. Round-trips bit-exactly."""
    entries, meta = container.read_container(path)
    if meta.get("kind") != CHECKPOINT_KIND:
        raise DataError(f"not a head checkpoint: {path}")
    tensors = {}
    velocity = {}
    for name, arr in entries.items():
        arr = np.ascontiguousarray(arr, dtype=np.float64)
        if name.startswith("opt/"):
            velocity[name[4:]] = arr
        else:
            tensors[name] = arr
    params = HeadParams.from_tensors(tensors)
    missing = [n for n in PARAM_NAMES if n not in velocity]
    if missing:
        raise DataError(f"checkpoint missing velocity entries: {missing}")
    return params, OptState(velocity=velocity), dict(meta)
