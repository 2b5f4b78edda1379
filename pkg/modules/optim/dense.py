"""
Whole-image evaluation of the fitting objective with hand-derived gradients.

Computes the same value as `objective` (the scalar tape) from numpy arrays and
back-propagates each stage by its closed-form derivative: softmax, rigid
blend, pinhole projection, bilinear sampling, windowed SSIM, the per-pixel
minimum with its auto-mask, normalized inverse-depth smoothness and the box
pyramid. Pose gradients go through a six-input tape per component so the
Rodrigues branches stay shared with the geometry module.

Tie-breaking, border handling and sub-gradients follow the tape exactly:
earlier sources win ties, |x| has slope +1 at zero, samples outside the image
and points behind the camera contribute no gradient.
"""

from typing import Dict, List, NamedTuple, Tuple

import numpy as np

from core.config import Config
from core.diffcore import backward, forward, lincomb
from core.errors import DegenerateInputError
from core.models import CameraIntrinsics, FitConfig
from modules.decomposition import ordering_weights
from modules.geometry import decode_pose, rotation_matrix, rotation_of
from modules.losses import LossTerms, pyramid_level
from modules.synth import SOURCES, SyntheticScene
from modules.warp import PixelState, as_channels


_OFFSETS = [(dy, dx) for dy in (-1, 0, 1) for dx in (-1, 0, 1)]


# ───────────────────── forward pieces ─────────────────────

def softmax_masks(logits: np.ndarray, d: np.ndarray) -> np.ndarray:
    """Per-pixel softmax of d_k * logit_k; K = 1 is constant ones."""
    k = logits.shape[0]
    if k == 1:
        return np.ones_like(logits, dtype=float)
    z = logits * d[:, None, None]
    e = np.exp(z - z.max(axis=0, keepdims=True))
    return e / e.sum(axis=0, keepdims=True)


class WarpCache(NamedTuple):
    """Everything the backward pass of one warped view needs."""
    image: np.ndarray        # (H, W, C), 0.0 where not valid
    state: np.ndarray        # (H, W) PixelState
    points: np.ndarray       # (K, 3, H, W) moved points per component
    blended: np.ndarray      # (3, H, W)
    d_du: np.ndarray         # (H, W, C) derivative of the sample along u
    d_dv: np.ndarray         # (H, W, C) derivative of the sample along v


def _snap(q: np.ndarray) -> np.ndarray:
    r = np.round(q)
    return np.where(np.abs(q - r) <= Config.SAMPLE_SNAP, r, q)


def warp_view(depth: np.ndarray, masks: np.ndarray, rotations: List[np.ndarray], translations: List[np.ndarray],
              src: np.ndarray, intr: CameraIntrinsics) -> WarpCache:
    """Inverse warp of one source with the operation order of synthesize_view."""
    img = as_channels(np.asarray(src, dtype=float))
    h, w, c = img.shape
    vv, uu = np.mgrid[0:h, 0:w].astype(float)
    x = np.stack([((uu - intr.cx) / intr.fx) * depth, ((vv - intr.cy) / intr.fy) * depth, depth])

    points = np.empty((len(rotations), 3, h, w))
    for i, (r, t) in enumerate(zip(rotations, translations)):
        for row in range(3):
            points[i, row] = r[row, 0] * x[0] + r[row, 1] * x[1] + r[row, 2] * x[2] + t[row]
    blended = masks[0][None] * points[0]
    for i in range(1, len(rotations)):
        blended = blended + masks[i][None] * points[i]

    state = np.full((h, w), PixelState.VALID, dtype=np.int8)
    front = blended[2] > Config.EPS_Z
    state[~front] = PixelState.BEHIND_CAMERA
    z = np.where(front, blended[2], 1.0)
    qu = _snap(intr.fx * (blended[0] / z) + intr.cx)
    qv = _snap(intr.fy * (blended[1] / z) + intr.cy)
    inside = (qu >= 0.0) & (qu <= w - 1) & (qv >= 0.0) & (qv <= h - 1)
    state[front & ~inside] = PixelState.OUT_OF_VIEW
    valid = state == PixelState.VALID

    u0 = np.where(valid, np.floor(qu), 0.0).astype(int)
    v0 = np.where(valid, np.floor(qv), 0.0).astype(int)
    u1 = np.minimum(u0 + 1, w - 1)
    v1 = np.minimum(v0 + 1, h - 1)
    a = np.where(valid, qu - u0, 0.0)[:, :, None]
    b = np.where(valid, qv - v0, 0.0)[:, :, None]
    i00, i01, i10, i11 = img[v0, u0], img[v0, u1], img[v1, u0], img[v1, u1]
    oma, omb = 1.0 - a, 1.0 - b
    out = (oma * omb) * i00 + (a * omb) * i01 + (oma * b) * i10 + (a * b) * i11
    keep = valid[:, :, None]
    return WarpCache(
        image=np.where(keep, out, 0.0),
        state=state,
        points=points,
        blended=blended,
        d_du=np.where(keep, omb * (i01 - i00) + b * (i11 - i10), 0.0),
        d_dv=np.where(keep, oma * (i10 - i00) + a * (i11 - i01), 0.0),
    )


def _windows(img: np.ndarray) -> np.ndarray:
    """(9, H, W, C) reflected 3x3 neighbourhoods in row-major offset order."""
    h, w = img.shape[:2]
    padded = np.pad(img, ((1, 1), (1, 1), (0, 0)), mode="reflect")
    return np.stack([padded[1 + dy:1 + dy + h, 1 + dx:1 + dx + w] for dy, dx in _OFFSETS])


class SsimParts(NamedTuple):
    ssim: np.ndarray         # (H, W, C)
    coeff_const: np.ndarray  # dS/db_j = const + coeff_a * a_j + coeff_b * b_j
    coeff_a: np.ndarray
    coeff_b: np.ndarray


def ssim_parts(a: np.ndarray, b: np.ndarray) -> SsimParts:
    """SSIM of a against b with its derivative with respect to every window entry of b."""
    wa, wb = _windows(a), _windows(b)
    mu_a = wa.sum(axis=0) / 9.0
    mu_b = wb.sum(axis=0) / 9.0
    var_a = (wa * wa).sum(axis=0) / 9.0 - mu_a * mu_a
    var_b = (wb * wb).sum(axis=0) / 9.0 - mu_b * mu_b
    cov = (wa * wb).sum(axis=0) / 9.0 - mu_a * mu_b
    n1 = 2.0 * mu_a * mu_b + Config.SSIM_C1
    n2 = 2.0 * cov + Config.SSIM_C2
    d1 = mu_a * mu_a + mu_b * mu_b + Config.SSIM_C1
    d2 = var_a + var_b + Config.SSIM_C2
    den = d1 * d2
    s = n1 * n2 / den
    k = (2.0 / 9.0) / den
    return SsimParts(
        ssim=s,
        coeff_const=k * (mu_a * n2 - n1 * mu_a - s * mu_b * d2 + s * d1 * mu_b),
        coeff_a=k * n1,
        coeff_b=-k * s * d1,
    )


def _scatter_windows(upstream: np.ndarray, a: np.ndarray, b: np.ndarray, parts: SsimParts) -> np.ndarray:
    """Gradient on b of sum(upstream * SSIM(a, b)), reflected window entries accumulated."""
    h, w, c = b.shape
    wa, wb = _windows(a), _windows(b)
    grad = np.zeros_like(b)
    rows = np.arange(h)
    cols = np.arange(w)
    for j, (dy, dx) in enumerate(_OFFSETS):
        ry = np.abs(rows + dy)
        ry = np.where(ry >= h, 2 * (h - 1) - ry, ry)
        rx = np.abs(cols + dx)
        rx = np.where(rx >= w, 2 * (w - 1) - rx, rx)
        contrib = upstream * (parts.coeff_const + parts.coeff_a * wa[j] + parts.coeff_b * wb[j])
        np.add.at(grad, (ry[:, None], rx[None, :]), contrib)
    return grad


def _pixel_loss(t3: np.ndarray, s3: np.ndarray, alpha: float) -> Tuple[np.ndarray, SsimParts]:
    parts = ssim_parts(t3, s3)
    l1 = np.abs(t3 - s3).mean(axis=2)
    return (1.0 - alpha) * l1 + (alpha / 2.0) * (1.0 - parts.ssim.mean(axis=2)), parts


# ───────────────────── smoothness ─────────────────────

def _image_weights(img: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    i3 = as_channels(np.asarray(img, dtype=float))
    gx = np.mean(np.abs(i3[:, 1:] - i3[:, :-1]), axis=2)
    gy = np.mean(np.abs(i3[1:] - i3[:-1]), axis=2)
    return np.exp(-gx), np.exp(-gy)


def edge_aware(field: np.ndarray, img: np.ndarray) -> Tuple[float, np.ndarray]:
    """Value and field gradient of the edge-aware first-difference penalty."""
    h, w = field.shape
    wx, wy = _image_weights(img)
    dx = field[:, 1:] - field[:, :-1]
    dy = field[1:] - field[:-1]
    value = (np.sum(wx * np.abs(dx)) + np.sum(wy * np.abs(dy))) / (h * w)
    cx = wx * np.where(dx >= 0.0, 1.0, -1.0) / (h * w)
    cy = wy * np.where(dy >= 0.0, 1.0, -1.0) / (h * w)
    grad = np.zeros_like(field)
    grad[:, 1:] += cx
    grad[:, :-1] -= cx
    grad[1:] += cy
    grad[:-1] -= cy
    return float(value), grad


def smoothness(depth: np.ndarray, img: np.ndarray) -> Tuple[float, np.ndarray]:
    """Edge-aware smoothness of mean-normalized inverse depth and its depth gradient."""
    h, w = depth.shape
    kept = depth >= Config.LOSS_EPS
    inv = 1.0 / np.where(kept, depth, Config.LOSS_EPS)
    mean_inv = inv.sum() / (h * w)
    value, g_normed = edge_aware(inv / mean_inv, img)
    g_inv = g_normed / mean_inv - np.sum(g_normed * inv) / (mean_inv * mean_inv * h * w)
    return value, np.where(kept, -g_inv / (depth * depth), 0.0)


def _upsample_grad(grad: np.ndarray, shape: Tuple[int, int]) -> np.ndarray:
    """Adjoint of one 2x box downsample."""
    out = np.zeros(shape)
    h, w = grad.shape
    quarter = 0.25 * grad
    for dy in (0, 1):
        for dx in (0, 1):
            out[dy:2 * h:2, dx:2 * w:2] = quarter
    return out


def pyramid_smoothness(depth: np.ndarray, target: np.ndarray, scale: float) -> Tuple[float, np.ndarray]:
    shapes = [depth.shape]
    level = depth
    s = 1.0
    while s > scale:
        level = pyramid_level(level, 0.5)
        shapes.append(level.shape)
        s /= 2.0
    value, grad = smoothness(level, pyramid_level(target, scale))
    for shape in reversed(shapes[:-1]):
        grad = _upsample_grad(grad, shape)
    return value, grad


# ───────────────────── objective ─────────────────────

def _pose_gradient(raw: np.ndarray, g_rot: np.ndarray, g_trans: np.ndarray) -> np.ndarray:
    """Chain a rotation/translation gradient back to the raw pose 6-vector."""
    coeffs = list(g_rot.ravel()) + list(g_trans)

    def expr(xs):
        t = decode_pose(xs)
        r = rotation_of(t)
        return lincomb(coeffs, [e for row in r for e in row] + list(t.translation))

    _, tape = forward(expr, raw)
    return backward(tape)


def dense_objective(scene: SyntheticScene, cfg: FitConfig,
                    params: Dict[str, np.ndarray]) -> Tuple[LossTerms, Dict[str, np.ndarray]]:
    """Objective terms (floats) and the gradient of the total for every parameter block."""
    loss_cfg = cfg.loss
    intr = scene.intrinsics
    alpha = loss_cfg.alpha
    t3 = as_channels(np.asarray(scene.frame_target, dtype=float))
    h, w, c = t3.shape

    d = ordering_weights(cfg.K, loss_cfg.use_depth_ordering)
    logits = np.asarray(params["mask_logits"], dtype=float)
    depth = np.exp(np.asarray(params["log_depth"], dtype=float))
    masks = softmax_masks(logits, d)
    poses = {s: [decode_pose(list(row)) for row in np.asarray(params[f"pose_{s}"], dtype=float)] for s in SOURCES}
    rotations = {s: [rotation_matrix(t) for t in ts] for s, ts in poses.items()}
    translations = {s: [np.asarray(t.translation, dtype=float) for t in ts] for s, ts in poses.items()}

    # photometric: per-pixel minimum over the valid sources
    caches, losses, ssims = [], [], []
    for s, src in zip(SOURCES, scene.sources):
        cache = warp_view(depth, masks, rotations[s], translations[s], src, intr)
        lp, parts = _pixel_loss(t3, cache.image, alpha)
        caches.append(cache)
        losses.append(lp)
        ssims.append(parts)

    best = np.full((h, w), np.inf)
    choice = np.full((h, w), -1)
    for i, (cache, lp) in enumerate(zip(caches, losses)):
        take = (cache.state == PixelState.VALID) & (lp < best)
        best = np.where(take, lp, best)
        choice = np.where(take, i, choice)
    keep = choice >= 0
    if loss_cfg.auto_mask:
        floor = np.min([_pixel_loss(t3, as_channels(np.asarray(src, dtype=float)), alpha)[0]
                        for src in scene.sources], axis=0)
        keep &= best < floor
    n_valid = int(keep.sum())
    if n_valid == 0:
        raise DegenerateInputError("no pixel is valid in any source view")
    photometric = float(np.sum(best[keep]) / n_valid)

    # smoothness pyramid on the target frame
    smooth_values = []
    g_depth = np.zeros((h, w))
    for scale in loss_cfg.scale_factors:
        value, grad = pyramid_smoothness(depth, scene.frame_target, scale)
        smooth_values.append(value)
        g_depth += loss_cfg.lambda_base * scale * grad
    smooth_total = float(np.dot(loss_cfg.scale_factors, smooth_values))
    total = photometric + loss_cfg.lambda_base * smooth_total

    g_masks = np.zeros_like(masks)
    mask_smooth = 0.0
    if loss_cfg.mask_smooth_weight > 0:
        parts = [edge_aware(masks[i], scene.frame_target) for i in range(cfg.K)]
        mask_smooth = float(sum(v for v, _ in parts))
        for i, (_, grad) in enumerate(parts):
            g_masks[i] += loss_cfg.mask_smooth_weight * grad
        total += loss_cfg.mask_smooth_weight * mask_smooth

    # photometric backward, source by source
    vv, uu = np.mgrid[0:h, 0:w].astype(float)
    ray = np.stack([(uu - intr.cx) / intr.fx, (vv - intr.cy) / intr.fy, np.ones((h, w))])
    grads = {}
    for i, (s, cache, parts) in enumerate(zip(SOURCES, caches, ssims)):
        chosen = (keep & (choice == i)).astype(float) / n_valid
        diff = t3 - cache.image
        g_img = chosen[:, :, None] * ((1.0 - alpha) / c) * -np.where(diff >= 0.0, 1.0, -1.0)
        g_img += _scatter_windows(chosen[:, :, None] * (-(alpha / 2.0) / c), t3, cache.image, parts)
        valid = cache.state == PixelState.VALID
        g_img[~valid] = 0.0

        g_qu = np.sum(g_img * cache.d_du, axis=2)
        g_qv = np.sum(g_img * cache.d_dv, axis=2)
        z = np.where(valid, cache.blended[2], 1.0)
        g_y = np.stack([
            g_qu * intr.fx / z,
            g_qv * intr.fy / z,
            -(g_qu * intr.fx * cache.blended[0] + g_qv * intr.fy * cache.blended[1]) / (z * z),
        ])

        x = ray * depth
        g_x = np.zeros((3, h, w))
        pose_grads = []
        for k in range(cfg.K):
            g_masks[k] += np.sum(g_y * cache.points[k], axis=0)
            weighted = masks[k][None] * g_y
            r = rotations[s][k]
            g_x += np.einsum("ij,ihw->jhw", r, weighted)
            g_rot = np.einsum("ihw,jhw->ij", weighted, x)
            g_trans = weighted.sum(axis=(1, 2))
            pose_grads.append(_pose_gradient(np.asarray(params[f"pose_{s}"][k], dtype=float), g_rot, g_trans))
        grads[f"pose_{s}"] = np.stack(pose_grads)
        g_depth += np.sum(g_x * ray, axis=0)

    if cfg.K > 1:
        g_z = masks * (g_masks - np.sum(g_masks * masks, axis=0, keepdims=True))
        grads["mask_logits"] = g_z * d[:, None, None]
    else:
        grads["mask_logits"] = np.zeros_like(logits)
    grads["log_depth"] = g_depth * depth

    terms = LossTerms(total, photometric, smooth_total, mask_smooth, n_valid)
    return terms, grads
