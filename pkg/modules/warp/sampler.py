"""
Inverse warping: lift each target pixel with its depth, move it with the
mask-blended motion, project into the source and sample bilinearly.

Pixel centers sit on integer coordinates and an image spans
[0, W-1] x [0, H-1]. Samples outside that box are not clamped; they are
flagged and carry no photometric gradient. Coordinates within
Config.SAMPLE_SNAP of a pixel center are snapped onto it first, so round-off
from the projection never moves a border sample out of the image.
"""

import math
from enum import IntEnum
from typing import List, Sequence, Tuple

import numpy as np

from core.config import Config
from core.diffcore import dot, mul, sub, values
from core.errors import ContractError
from core.models import CameraIntrinsics, PixelCoord, RigidTransform
from modules.decomposition import blend_point
from modules.geometry import backproject, project, rotation_of


class PixelState(IntEnum):
    VALID = 0
    OUT_OF_VIEW = 1
    BEHIND_CAMERA = 2


def as_channels(img: np.ndarray) -> np.ndarray:
    """View an (H, W) or (H, W, C) image as (H, W, C)."""
    img = np.asarray(img)
    if img.ndim == 2:
        return img[:, :, None]
    if img.ndim != 3:
        raise ContractError(f"image must be (H, W) or (H, W, C), got shape {img.shape}")
    return img


def _snap(x, xf: float) -> Tuple[object, float]:
    """Pull a coordinate within SAMPLE_SNAP of a pixel center onto it; the partial stays 1."""
    if not math.isfinite(xf):
        return x, xf
    r = round(xf)
    if xf != r and abs(xf - r) <= Config.SAMPLE_SNAP:
        return sub(x, xf - r), float(r)
    return x, xf


def _sample(img: np.ndarray, u, v) -> Tuple[List, bool]:
    h, w, c = img.shape
    u, uf = _snap(u, float(u))
    v, vf = _snap(v, float(v))
    if not (0.0 <= uf <= w - 1 and 0.0 <= vf <= h - 1):
        return [0.0] * c, False
    u0, v0 = int(math.floor(uf)), int(math.floor(vf))
    u1, v1 = min(u0 + 1, w - 1), min(v0 + 1, h - 1)
    a = sub(u, u0)
    b = sub(v, v0)
    oma = sub(1.0, a)
    omb = sub(1.0, b)
    weights = [mul(oma, omb), mul(a, omb), mul(oma, b), mul(a, b)]
    return [
        dot(weights, [img[v0, u0, ch], img[v0, u1, ch], img[v1, u0, ch], img[v1, u1, ch]])
        for ch in range(c)
    ], True


def bilinear_sample(img: np.ndarray, q: PixelCoord):
    """(color, valid); color is a scalar for (H, W) images, a per-channel list otherwise."""
    img = np.asarray(img, dtype=float)
    color, ok = _sample(as_channels(img), q.u, q.v)
    return (color[0] if img.ndim == 2 else color), ok


def _check_shapes(depth: np.ndarray, masks: np.ndarray, ts: Sequence, src: np.ndarray):
    if depth.ndim != 2:
        raise ContractError(f"depth must be (H, W), got shape {depth.shape}")
    h, w = depth.shape
    if masks.ndim != 3 or masks.shape[1:] != (h, w):
        raise ContractError(f"masks shape {masks.shape} does not match depth {depth.shape}")
    if len(ts) != masks.shape[0]:
        raise ContractError(f"{len(ts)} transforms for {masks.shape[0]} mask channels")
    if src.shape[:2] != (h, w):
        raise ContractError(f"source image shape {src.shape} does not match depth {depth.shape}")


def synthesize_view(depth: np.ndarray, masks: np.ndarray, ts: Sequence[RigidTransform],
                    src: np.ndarray, intr: CameraIntrinsics) -> Tuple[np.ndarray, np.ndarray]:
    """Reconstruct the target view from one source frame.

    Returns the warped image (same layout as src, object dtype while a tape
    is recording) and an (H, W) array of PixelState values.
    """
    depth = np.asarray(depth)
    masks = np.asarray(masks)
    src_arr = np.asarray(src, dtype=float)
    _check_shapes(depth, masks, ts, src_arr)
    img = as_channels(src_arr)
    h, w, c = img.shape
    tracked = depth.dtype == object or masks.dtype == object or any(
        hasattr(s, "tape") for t in ts for s in (*t.axis_angle, *t.translation))

    rotations = [rotation_of(t) for t in ts]
    out = np.empty((h, w, c), dtype=object)
    state = np.zeros((h, w), dtype=np.int8)
    for v in range(h):
        for u in range(w):
            x = backproject(PixelCoord(u, v), depth[v, u], intr)
            moved = blend_point(list(masks[:, v, u]), ts, rotations, x)
            q = project(moved, intr)
            if q is None:
                out[v, u, :] = 0.0
                state[v, u] = PixelState.BEHIND_CAMERA
                continue
            color, ok = _sample(img, q.u, q.v)
            out[v, u, :] = color
            if not ok:
                state[v, u] = PixelState.OUT_OF_VIEW

    if not tracked:
        out = values(out)
    if src_arr.ndim == 2:
        out = out[:, :, 0]
    return out, state


def induced_flow(depth: np.ndarray, masks: np.ndarray, ts: Sequence[RigidTransform],
                 intr: CameraIntrinsics) -> np.ndarray:
    """(H, W, 2) displacement q - p of every target pixel; NaN behind the camera."""
    depth = values(depth)
    masks = values(masks)
    ts = [RigidTransform.from_vector(t.to_vector()) for t in ts]
    h, w = depth.shape
    rotations = [rotation_of(t) for t in ts]
    flow = np.full((h, w, 2), np.nan)
    for v in range(h):
        for u in range(w):
            x = backproject(PixelCoord(u, v), float(depth[v, u]), intr)
            q = project(blend_point(list(masks[:, v, u]), ts, rotations, x), intr)
            if q is not None:
                flow[v, u] = (q.u - u, q.v - v)
    return flow
