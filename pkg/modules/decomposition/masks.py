"""
K-component soft masks.

Logits and masks are (K, H, W) arrays. They hold floats, or tape Variables
(object dtype) while a fit is recording. Normalization weights the logits of
component i by its ordering scalar d_i before a per-pixel softmax, so that
later components dominate wherever the logits agree.
"""

import logging
from typing import List, Optional, Sequence

import numpy as np

from core.diffcore import div, dot, exp, mul, sub, total, value_of, values
from core.errors import ContractError
from core.formats import read_pgm_bundle, write_pgm_bundle, write_ppm
from core.models import PixelCoord, Point3, RigidTransform
from modules.geometry import apply_transform, rotation_of

logger = logging.getLogger("STRATA.Masks")


def ordering_weights(k: int, enabled: bool = True) -> np.ndarray:
    """d_i = i for i = 1..K, or all ones when ordering is switched off."""
    if k < 1:
        raise ContractError(f"K must be >= 1, got {k}")
    if enabled:
        return np.arange(1, k + 1, dtype=float)
    return np.ones(k, dtype=float)


def uniform_logits(width: int, height: int, k: int) -> np.ndarray:
    if k < 1:
        raise ContractError(f"K must be >= 1, got {k}")
    return np.zeros((k, height, width), dtype=float)


def _softmax_pixel(logits: Sequence, d: Sequence[float]) -> List:
    weighted = [lg if di == 1.0 else mul(di, lg) for di, lg in zip(d, logits)]
    top = max(value_of(w) for w in weighted)
    es = [exp(sub(w, top)) for w in weighted]
    s = total(es)
    return [div(e, s) for e in es]


def normalize_masks(logits: np.ndarray, d: Sequence[float]) -> np.ndarray:
    """Per-pixel softmax of d_i * logit_i, max-subtracted."""
    logits = np.asarray(logits)
    if logits.ndim != 3:
        raise ContractError(f"logits must be (K, H, W), got shape {logits.shape}")
    k, h, w = logits.shape
    d = [float(x) for x in d]
    if len(d) != k:
        raise ContractError(f"{len(d)} ordering weights for {k} components")
    if k == 1:
        return np.ones((1, h, w), dtype=float)

    tracked = logits.dtype == object
    out = np.empty((k, h, w), dtype=object if tracked else float)
    for y in range(h):
        for x in range(w):
            out[:, y, x] = _softmax_pixel(logits[:, y, x], d)
    return out


def blend_point(weights: Sequence, transforms: Sequence[RigidTransform], rotations: Sequence, x: Point3) -> Point3:
    """sum_i w_i (R_i x + t_i) with rotations computed once by the caller."""
    moved = [apply_transform(t, x, r) for t, r in zip(transforms, rotations)]
    return Point3(
        dot(weights, [m.x for m in moved]),
        dot(weights, [m.y for m in moved]),
        dot(weights, [m.z for m in moved]),
    )


def blended_linear_part(weights: Sequence[float], ts: Sequence[RigidTransform]) -> np.ndarray:
    """Float 3x3 matrix sum_i w_i R_i of a blend; orthonormal only for one-hot weights or equal rotations."""
    if len(weights) != len(ts):
        raise ContractError(f"{len(weights)} weights for {len(ts)} transforms")
    rotations_only = [RigidTransform(axis_angle=tuple(float(value_of(a)) for a in t.axis_angle)) for t in ts]
    rots = [rotation_of(t) for t in rotations_only]
    w = [float(value_of(x)) for x in weights]
    cols = [blend_point(w, rotations_only, rots, Point3(*e)) for e in np.eye(3)]
    return np.array(cols, dtype=float).T


def blend_transform(masks: np.ndarray, ts: Sequence[RigidTransform], p: PixelCoord, x: Point3) -> Point3:
    """Mask-weighted combination of the K rigid motions at pixel p.

    The result is generally not a rigid motion itself.
    """
    masks = np.asarray(masks)
    k, h, w = masks.shape
    if len(ts) != k:
        raise ContractError(f"{len(ts)} transforms for {k} mask channels")
    u, v = int(p.u), int(p.v)
    if not (0 <= u < w and 0 <= v < h):
        raise ContractError(f"pixel ({p.u}, {p.v}) outside {w}x{h} mask")
    return blend_point(list(masks[:, v, u]), ts, [rotation_of(t) for t in ts], x)


def logits_from_masks(masks: np.ndarray, d: Sequence[float], confidence: float = 10.0) -> np.ndarray:
    """Logits whose normalization approximately reproduces the given (hard) masks."""
    masks = values(masks)
    d = np.asarray(d, dtype=float).reshape(-1, 1, 1)
    if d.shape[0] != masks.shape[0]:
        raise ContractError(f"{d.shape[0]} ordering weights for {masks.shape[0]} components")
    return confidence * masks / d


# ───────────────────── IO / visualization ─────────────────────

def channel_colors(k: int, seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.uniform(0.2, 1.0, size=(k, 3))


def composite_image(masks: np.ndarray, seed: int = 0) -> np.ndarray:
    """RGB view: a random color per channel, brightness by probability."""
    m = values(masks)
    colors = channel_colors(m.shape[0], seed)
    img = np.einsum("khw,kc->hwc", m, colors)
    return np.clip(img, 0.0, 1.0)


def write_mask_bundle(path, masks: np.ndarray):
    write_pgm_bundle(path, list(values(masks)))


def read_mask_bundle(path) -> np.ndarray:
    return np.stack(read_pgm_bundle(path))


def write_mask_composite(path, masks: np.ndarray, seed: int = 0):
    write_ppm(path, composite_image(masks, seed))
    logger.debug(f"Mask composite written to {path}")
