"""
Self-supervised objective: SSIM, per-pixel minimum reprojection loss,
edge-aware smoothness on mean-normalized inverse depth, mask smoothness
and their weighted total.

Image gradients are forward differences with replicate padding, so the last
column (row) has zero x (y) gradient. Smoothness terms are averaged over all
W*H pixels.
"""

import logging
from typing import List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from core.config import Config
from core.diffcore import (
    absolute, add, div, dot, lincomb, maximum, minimum, mul, square, sub, total, value_of, values,
)
from core.errors import ContractError, DegenerateInputError
from core.models import CameraIntrinsics, LossBreakdown, LossConfig, RigidTransform
from modules.warp import PixelState, as_channels, synthesize_view

logger = logging.getLogger("STRATA.Losses")


# ───────────────────── SSIM ─────────────────────

def _reflect(i: int, n: int) -> int:
    if i < 0:
        return -i
    if i >= n:
        return 2 * (n - 1) - i
    return i


def _window(img: np.ndarray, y: int, x: int, c: int) -> list:
    h, w = img.shape[:2]
    return [img[_reflect(y + dy, h), _reflect(x + dx, w), c] for dy in (-1, 0, 1) for dx in (-1, 0, 1)]


def _ssim_at(a: np.ndarray, b: np.ndarray, y: int, x: int, c: int):
    wa = _window(a, y, x, c)
    wb = _window(b, y, x, c)
    mu_a = div(total(wa), 9.0)
    mu_b = div(total(wb), 9.0)
    mu_ab = mul(mu_a, mu_b)
    mu_a2 = square(mu_a)
    mu_b2 = square(mu_b)
    var_a = sub(div(dot(wa, wa), 9.0), mu_a2)
    var_b = sub(div(dot(wb, wb), 9.0), mu_b2)
    cov = sub(div(dot(wa, wb), 9.0), mu_ab)
    num = mul(add(mul(2.0, mu_ab), Config.SSIM_C1), add(mul(2.0, cov), Config.SSIM_C2))
    den = mul(add(add(mu_a2, mu_b2), Config.SSIM_C1), add(add(var_a, var_b), Config.SSIM_C2))
    return div(num, den)


def _check_pair(a: np.ndarray, b: np.ndarray):
    if a.shape != b.shape:
        raise ContractError(f"image shapes differ: {a.shape} vs {b.shape}")
    if a.shape[0] < 2 or a.shape[1] < 2:
        raise ContractError(f"SSIM needs at least 2x2 pixels, got {a.shape[:2]}")


def ssim_map(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """3x3 mean-pooled SSIM with reflection padding; same layout as the inputs."""
    a_arr, b_arr = np.asarray(a), np.asarray(b)
    a3, b3 = as_channels(a_arr), as_channels(b_arr)
    _check_pair(a3, b3)
    h, w, c = a3.shape
    out = np.empty((h, w, c), dtype=object)
    for y in range(h):
        for x in range(w):
            for ch in range(c):
                out[y, x, ch] = _ssim_at(a3, b3, y, x, ch)
    if a3.dtype != object and b3.dtype != object:
        out = values(out)
    return out[:, :, 0] if a_arr.ndim == 2 else out


# ───────────────────── photometric ─────────────────────

def _channel_mean(xs: list):
    if len(xs) == 1:
        return xs[0]
    return div(total(xs), float(len(xs)))


def _pixel_loss(t3: np.ndarray, s3: np.ndarray, y: int, x: int, alpha: float):
    c = t3.shape[2]
    l1 = _channel_mean([absolute(sub(t3[y, x, ch], s3[y, x, ch])) for ch in range(c)])
    ssim = _channel_mean([_ssim_at(t3, s3, y, x, ch) for ch in range(c)])
    return add(mul(1.0 - alpha, l1), mul(alpha / 2.0, sub(1.0, ssim)))


def photometric_loss(target: np.ndarray, warped: Sequence[Tuple[np.ndarray, np.ndarray]],
                     alpha: float = Config.SSIM_ALPHA,
                     identity: Optional[Sequence[np.ndarray]] = None) -> Tuple[np.ndarray, np.ndarray]:
    """Per-pixel minimum over sources of (1-a)|dI| + a/2 (1 - SSIM).

    Only sources valid at a pixel compete; ties go to the earlier source.
    With `identity` (the unwarped sources) a pixel is kept only where the best
    warped loss is strictly below the best identity loss.
    Returns the (H, W) loss map (0.0 where excluded) and the boolean validity.
    """
    if not warped:
        raise ContractError("photometric loss needs at least one source view")
    t3 = as_channels(np.asarray(target, dtype=float))
    sources = []
    for img, state in warped:
        s3 = as_channels(np.asarray(img))
        state = np.asarray(state)
        if s3.shape != t3.shape or state.shape != t3.shape[:2]:
            raise ContractError(f"warped view shape {s3.shape} does not match target {t3.shape}")
        sources.append((s3, state))
    if t3.shape[0] < 2 or t3.shape[1] < 2:
        raise ContractError(f"photometric loss needs at least 2x2 pixels, got {t3.shape[:2]}")
    plain = None
    if identity is not None:
        plain = [as_channels(np.asarray(img, dtype=float)) for img in identity]

    h, w, _ = t3.shape
    loss = np.empty((h, w), dtype=object)
    valid = np.zeros((h, w), dtype=bool)
    for y in range(h):
        for x in range(w):
            best = None
            for s3, state in sources:
                if state[y, x] != PixelState.VALID:
                    continue
                lp = _pixel_loss(t3, s3, y, x, alpha)
                best = lp if best is None else minimum(best, lp)
            if best is None:
                loss[y, x] = 0.0
                continue
            if plain is not None:
                floor = min(value_of(_pixel_loss(t3, p3, y, x, alpha)) for p3 in plain)
                if not value_of(best) < floor:
                    loss[y, x] = 0.0
                    continue
            loss[y, x] = best
            valid[y, x] = True

    if not any(hasattr(v, "tape") for v in loss.ravel()):
        loss = values(loss)
    return loss, valid


# ───────────────────── smoothness ─────────────────────

def _image_weights(img: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """exp(-mean_c |dI|) along x and y, zero-gradient at the far borders."""
    i3 = as_channels(values(img))
    gx = np.zeros(i3.shape[:2])
    gy = np.zeros(i3.shape[:2])
    gx[:, :-1] = np.mean(np.abs(i3[:, 1:] - i3[:, :-1]), axis=2)
    gy[:-1, :] = np.mean(np.abs(i3[1:] - i3[:-1]), axis=2)
    return np.exp(-gx), np.exp(-gy)


def _edge_aware(field: np.ndarray, img: np.ndarray):
    h, w = field.shape
    wx, wy = _image_weights(img)
    coeffs, terms = [], []
    for y in range(h):
        for x in range(w):
            if x + 1 < w:
                coeffs.append(float(wx[y, x]))
                terms.append(absolute(sub(field[y, x + 1], field[y, x])))
            if y + 1 < h:
                coeffs.append(float(wy[y, x]))
                terms.append(absolute(sub(field[y + 1, x], field[y, x])))
    return div(lincomb(coeffs, terms), float(h * w))


def smoothness_loss(depth: np.ndarray, img: np.ndarray):
    """Edge-aware smoothness of (1/D) / mean(1/D)."""
    depth = np.asarray(depth)
    if depth.ndim != 2 or np.asarray(img).shape[:2] != depth.shape:
        raise ContractError(f"depth {depth.shape} and image {np.asarray(img).shape} disagree")
    h, w = depth.shape
    inv = np.empty((h, w), dtype=object)
    for y in range(h):
        for x in range(w):
            inv[y, x] = div(1.0, maximum(depth[y, x], Config.LOSS_EPS))
    mean_inv = div(total(list(inv.ravel())), float(h * w))
    normed = np.empty((h, w), dtype=object)
    for y in range(h):
        for x in range(w):
            normed[y, x] = div(inv[y, x], mean_inv)
    return _edge_aware(normed, img)


def mask_smoothness_loss(masks: np.ndarray, img: np.ndarray):
    """Edge-aware smoothness of every mask channel, summed over channels."""
    masks = np.asarray(masks)
    if masks.ndim != 3 or np.asarray(img).shape[:2] != masks.shape[1:]:
        raise ContractError(f"masks {masks.shape} and image {np.asarray(img).shape} disagree")
    return total([_edge_aware(masks[k], img) for k in range(masks.shape[0])])


def downsample(arr: np.ndarray) -> np.ndarray:
    """2x box downsampling; an odd trailing row or column is dropped."""
    arr = np.asarray(arr)
    h, w = arr.shape[0] // 2, arr.shape[1] // 2
    if h < 1 or w < 1:
        raise ContractError(f"cannot downsample shape {arr.shape}")
    if arr.dtype != object:
        trimmed = arr[:2 * h, :2 * w].astype(float)
        return 0.25 * (trimmed[0::2, 0::2] + trimmed[0::2, 1::2] + trimmed[1::2, 0::2] + trimmed[1::2, 1::2])
    out = np.empty((h, w) + arr.shape[2:], dtype=object)
    for idx in np.ndindex(*out.shape):
        y, x = idx[0], idx[1]
        rest = idx[2:]
        block = [arr[(2 * y + dy, 2 * x + dx) + rest] for dy in (0, 1) for dx in (0, 1)]
        out[idx] = div(total(block), 4.0)
    return out


def pyramid_level(arr: np.ndarray, scale: float) -> np.ndarray:
    level = arr
    s = 1.0
    while s > scale:
        level = downsample(level)
        s /= 2.0
    return level


# ───────────────────── total ─────────────────────

class LossTerms(NamedTuple):
    """Scalar terms of one objective evaluation (floats or tape Variables)."""
    total: object
    photometric: object
    smoothness: object
    mask_smoothness: object
    valid_count: int

    def to_breakdown(self, step: Optional[int] = None) -> LossBreakdown:
        return LossBreakdown(
            step=step,
            total=float(value_of(self.total)),
            photometric=float(value_of(self.photometric)),
            smoothness=float(value_of(self.smoothness)),
            mask_smoothness=float(value_of(self.mask_smoothness)),
            valid_pixel_count=self.valid_count,
        )


def total_loss(target: np.ndarray, sources: Sequence[np.ndarray], depth: np.ndarray, masks: np.ndarray,
               transforms: Sequence[Sequence[RigidTransform]], intr: CameraIntrinsics,
               cfg: LossConfig) -> LossTerms:
    """photometric + lambda_base * sum_s s * smooth_s + w_mask * mask_smooth.

    `masks` is the normalized stack shared by all sources; `transforms` holds
    one transform set per source view.
    """
    if len(sources) != len(transforms):
        raise ContractError(f"{len(transforms)} transform sets for {len(sources)} source views")
    warped = [synthesize_view(depth, masks, ts, src, intr) for src, ts in zip(sources, transforms)]
    loss_map, valid = photometric_loss(target, warped, cfg.alpha, identity=sources if cfg.auto_mask else None)
    n_valid = int(valid.sum())
    if n_valid == 0:
        raise DegenerateInputError("no pixel is valid in any source view")
    photometric = div(total(list(loss_map[valid])), float(n_valid))

    smooth_terms = []
    for scale in cfg.scale_factors:
        smooth_terms.append(smoothness_loss(pyramid_level(depth, scale), pyramid_level(target, scale)))
    smoothness = lincomb(list(cfg.scale_factors), smooth_terms)

    result = add(photometric, mul(cfg.lambda_base, smoothness))
    mask_smooth = 0.0
    if cfg.mask_smooth_weight > 0:
        mask_smooth = mask_smoothness_loss(masks, target)
        result = add(result, mul(cfg.mask_smooth_weight, mask_smooth))
    return LossTerms(result, photometric, smoothness, mask_smooth, n_valid)
