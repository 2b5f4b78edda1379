"""
Procedural ground-truth triplets.

A scene is a stack of fronto-parallel textured planes in the target frame:
an unbounded background plane plus one rectangle per object. Each plane
carries its own target-to-source rigid motion for the previous and next
frames. The target frame is rendered directly; the source frames are ray
cast against the moved planes (nearest hit wins), so disocclusions and
surfaces leaving the frame come out of the geometry rather than a warp.
"""

import hashlib
import logging
import math
import os
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, ValidationError

from core.config import Config
from core.errors import ConfigurationError, ContractError
from core.formats import format_keyvalue, read_keyvalue, write_json, write_pfm
from core.models import CameraIntrinsics, PixelCoord, RigidTransform, SceneConfig
from modules.decomposition import write_mask_bundle, write_mask_composite
from modules.geometry import backproject, project, rotation_matrix, rotation_of
from modules.synth.textures import Texture, make_texture
from modules.warp import PixelState

logger = logging.getLogger("STRATA.Synth")

SOURCES = ("prev", "next")


class SyntheticScene(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    config: SceneConfig
    frame_prev: np.ndarray
    frame_target: np.ndarray
    frame_next: np.ndarray
    gt_depth: np.ndarray                         # (H, W)
    gt_labels: np.ndarray                        # (H, W) component index, 0 = background
    gt_masks: np.ndarray                         # (K, H, W) one-hot
    gt_transforms: Dict[str, List[RigidTransform]]
    occluded: Dict[str, np.ndarray]              # per source, (H, W) bool
    degenerate_objects: List[str] = []

    @property
    def intrinsics(self) -> CameraIntrinsics:
        return self.config.intrinsics

    @property
    def n_components(self) -> int:
        return self.gt_masks.shape[0]

    @property
    def sources(self) -> List[np.ndarray]:
        return [self.frame_prev, self.frame_next]

    @property
    def transform_sets(self) -> List[List[RigidTransform]]:
        return [self.gt_transforms[s] for s in SOURCES]


# ───────────────────── config IO ─────────────────────

def load_scene_config(path) -> SceneConfig:
    kv = read_keyvalue(path)
    try:
        return SceneConfig.from_keyvalue(kv)
    except (ValidationError, ValueError) as e:
        raise ConfigurationError(f"{path}: {e}") from e


def save_scene_config(path, cfg: SceneConfig):
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(format_keyvalue(cfg.to_keyvalue(), header=f"scene {cfg.name}"))


def verify_fixture_checksums(fixtures_dir: str) -> List[str]:
    """Check every file listed in the checksum manifest; returns the checked names."""
    manifest = os.path.join(fixtures_dir, Config.FIXTURE_CHECKSUMS)
    if not os.path.isfile(manifest):
        raise ConfigurationError(f"checksum manifest missing: {manifest}")
    checked = []
    with open(manifest, "r", encoding="utf-8") as f:
        for line in f:
            if not line.strip():
                continue
            digest, name = line.split(None, 1)
            name = name.strip().lstrip("*")
            path = os.path.join(fixtures_dir, name)
            if not os.path.isfile(path):
                raise ConfigurationError(f"fixture missing: {name}")
            with open(path, "rb") as fh:
                actual = hashlib.sha256(fh.read()).hexdigest()
            if actual != digest:
                raise ConfigurationError(f"fixture corrupted: {name} (sha256 mismatch)")
            checked.append(name)
    return checked


# ───────────────────── rendering ─────────────────────

class _Surface:
    __slots__ = ("name", "depth", "rect", "motion", "textures")

    def __init__(self, name: str, depth: float, rect: Optional[Tuple[int, int, int, int]],
                 motion: Dict[str, RigidTransform], textures: List[Texture]):
        self.name = name
        self.depth = depth
        self.rect = rect
        self.motion = motion
        self.textures = textures

    def color(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        return np.stack([t.sample(u, v) for t in self.textures], axis=-1)


def _build_surfaces(cfg: SceneConfig) -> List[_Surface]:
    rng = np.random.default_rng(cfg.texture_seed)

    def textures():
        return [make_texture(rng, cfg.width, cfg.height, cfg.texture_style, cfg.texture_cell, cfg.blur_radius)
                for _ in range(cfg.channels)]

    surfaces = [_Surface("background", cfg.background_depth, None,
                         {"prev": cfg.ego_prev, "next": cfg.ego_next}, textures())]
    for obj in cfg.objects:
        surfaces.append(_Surface(obj.name, obj.depth, obj.rect,
                                 {"prev": obj.motion_prev, "next": obj.motion_next}, textures()))
    return surfaces


def _check_in_view(cfg: SceneConfig, surf: _Surface, frame: str):
    x0, y0, x1, y1 = surf.rect
    t = surf.motion[frame]
    r = rotation_of(t)
    w, h = cfg.width, cfg.height
    for u, v in ((x0, y0), (x1 - 1, y0), (x0, y1 - 1), (x1 - 1, y1 - 1)):
        x = backproject(PixelCoord(float(u), float(v)), surf.depth, cfg.intrinsics)
        moved = [sum(r[i][j] * x[j] for j in range(3)) + t.translation[i] for i in range(3)]
        q = project(type(x)(*moved), cfg.intrinsics)
        if q is None or not (0.0 <= q.u <= w - 1 and 0.0 <= q.v <= h - 1):
            raise ConfigurationError(f"object '{surf.name}' leaves the view in frame '{frame}'")


def _render_target(cfg: SceneConfig, surfaces: List[_Surface]):
    h, w = cfg.height, cfg.width
    labels = np.zeros((h, w), dtype=int)
    # paint far to near so the nearest rectangle wins
    order = sorted(range(1, len(surfaces)), key=lambda i: -surfaces[i].depth)
    for i in order:
        x0, y0, x1, y1 = surfaces[i].rect
        labels[y0:y1, x0:x1] = i
    depth = np.array([s.depth for s in surfaces])[labels]
    vs, us = np.mgrid[0:h, 0:w].astype(float)
    img = np.zeros((h, w, cfg.channels))
    for i, surf in enumerate(surfaces):
        sel = labels == i
        if sel.any():
            img[sel] = surf.color(us[sel], vs[sel])
    return img, depth, labels


def _render_source(cfg: SceneConfig, surfaces: List[_Surface], frame: str):
    intr = cfg.intrinsics
    h, w = cfg.height, cfg.width
    vs, us = np.mgrid[0:h, 0:w].astype(float)
    rays = np.stack([(us - intr.cx) / intr.fx, (vs - intr.cy) / intr.fy, np.ones_like(us)], axis=-1)

    best = np.full((h, w), np.inf)
    labels = np.full((h, w), -1, dtype=int)
    img = np.zeros((h, w, cfg.channels))
    for i, surf in enumerate(surfaces):
        t = surf.motion[frame]
        r = rotation_matrix(t)
        rt_ray = rays @ r                      # R^T r per pixel
        rt_t = r.T @ np.asarray(t.to_vector()[3:])
        denom = rt_ray[..., 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            s = (surf.depth + rt_t[2]) / denom
        hit = (denom > 1e-9) & (s > Config.EPS_Z)
        px = s[..., None] * rt_ray - rt_t
        uu = intr.fx * px[..., 0] / surf.depth + intr.cx
        vv = intr.fy * px[..., 1] / surf.depth + intr.cy
        if surf.rect is not None:
            x0, y0, x1, y1 = surf.rect
            hit &= (uu >= x0 - 0.5) & (uu < x1 - 0.5) & (vv >= y0 - 0.5) & (vv < y1 - 0.5)
        closer = hit & (s < best)
        if closer.any():
            best[closer] = s[closer]
            labels[closer] = i
            img[closer] = surf.color(uu[closer], vv[closer])
    if (labels < 0).any():
        raise ConfigurationError(f"background does not cover frame '{frame}'")
    return img, labels


def _occlusion_mask(cfg: SceneConfig, depth: np.ndarray, target_labels: np.ndarray,
                    source_labels: np.ndarray, transforms: Sequence[RigidTransform]) -> np.ndarray:
    """Target pixels whose bilinear footprint in the source is not their own surface."""
    intr = cfg.intrinsics
    h, w = depth.shape
    vs, us = np.mgrid[0:h, 0:w].astype(float)
    pts = np.stack([(us - intr.cx) / intr.fx * depth, (vs - intr.cy) / intr.fy * depth, depth], axis=-1)
    mats = np.stack([rotation_matrix(t) for t in transforms])
    trans = np.stack([np.asarray(t.to_vector()[3:]) for t in transforms])
    moved = np.einsum("hwij,hwj->hwi", mats[target_labels], pts) + trans[target_labels]
    z = moved[..., 2]
    occluded = z <= Config.EPS_Z
    with np.errstate(divide="ignore", invalid="ignore"):
        qu = intr.fx * moved[..., 0] / z + intr.cx
        qv = intr.fy * moved[..., 1] / z + intr.cy
    occluded |= ~((qu >= 0) & (qu <= w - 1) & (qv >= 0) & (qv <= h - 1))
    u0 = np.clip(np.floor(np.nan_to_num(qu)).astype(int), 0, w - 1)
    v0 = np.clip(np.floor(np.nan_to_num(qv)).astype(int), 0, h - 1)
    u1 = np.minimum(u0 + 1, w - 1)
    v1 = np.minimum(v0 + 1, h - 1)
    for vv, uu in ((v0, u0), (v0, u1), (v1, u0), (v1, u1)):
        occluded |= source_labels[vv, uu] != target_labels
    return occluded


def generate_scene(cfg: SceneConfig) -> SyntheticScene:
    """Deterministic in the config (texture seed included)."""
    surfaces = _build_surfaces(cfg)
    for surf in surfaces[1:]:
        for frame in SOURCES:
            _check_in_view(cfg, surf, frame)

    target, depth, labels = _render_target(cfg, surfaces)
    frames = {}
    occluded = {}
    transforms = {}
    for frame in SOURCES:
        img, src_labels = _render_source(cfg, surfaces, frame)
        transforms[frame] = [s.motion[frame] for s in surfaces]
        frames[frame] = img
        occluded[frame] = _occlusion_mask(cfg, depth, labels, src_labels, transforms[frame])

    k = len(surfaces)
    masks = (labels[None, :, :] == np.arange(k)[:, None, None]).astype(float)
    degenerate = [
        s.name for s in surfaces[1:]
        if all(np.allclose(s.motion[f].to_vector(), surfaces[0].motion[f].to_vector(), atol=1e-12) for f in SOURCES)
    ]
    if degenerate:
        logger.warning(f"Scene '{cfg.name}': objects {degenerate} move exactly with the camera")

    squeeze = (lambda a: a[:, :, 0]) if cfg.channels == 1 else (lambda a: a)
    logger.debug(f"Scene '{cfg.name}' generated: {cfg.width}x{cfg.height}, K={k}")
    return SyntheticScene(
        config=cfg,
        frame_prev=squeeze(frames["prev"]),
        frame_target=squeeze(target),
        frame_next=squeeze(frames["next"]),
        gt_depth=depth,
        gt_labels=labels,
        gt_masks=masks,
        gt_transforms=transforms,
        occluded=occluded,
        degenerate_objects=degenerate,
    )


# ───────────────────── reference warp ─────────────────────

def oracle_warp(depth, masks, ts: Sequence[RigidTransform], src, intr: CameraIntrinsics):
    """Plain-loop inverse warp with the same arithmetic order as synthesize_view."""
    depth = np.asarray(depth, dtype=float)
    masks = np.asarray(masks, dtype=float)
    src = np.asarray(src, dtype=float)
    if depth.ndim != 2 or masks.shape[1:] != depth.shape or src.shape[:2] != depth.shape:
        raise ContractError("depth, masks and source image shapes disagree")
    if len(ts) != masks.shape[0]:
        raise ContractError(f"{len(ts)} transforms for {masks.shape[0]} mask channels")
    img = src if src.ndim == 3 else src[:, :, None]
    h, w, c = img.shape
    k = len(ts)
    rots = [rotation_of(t) for t in ts]
    trans = [t.translation for t in ts]
    fx, fy, cx, cy = intr.fx, intr.fy, intr.cx, intr.cy

    out = np.zeros((h, w, c))
    state = np.zeros((h, w), dtype=np.int8)
    for v in range(h):
        for u in range(w):
            d = depth[v, u]
            p = (((u - cx) / fx) * d, ((v - cy) / fy) * d, d)
            blended = [0.0, 0.0, 0.0]
            for i in range(k):
                r = rots[i]
                for row in range(3):
                    m = r[row][0] * p[0]
                    m = m + r[row][1] * p[1]
                    m = m + r[row][2] * p[2]
                    m = m + trans[i][row]
                    term = masks[i, v, u] * m
                    blended[row] = term if i == 0 else blended[row] + term
            if blended[2] <= Config.EPS_Z:
                state[v, u] = PixelState.BEHIND_CAMERA
                continue
            qu = fx * (blended[0] / blended[2]) + cx
            qv = fy * (blended[1] / blended[2]) + cy
            ru, rv = round(qu), round(qv)
            if qu != ru and abs(qu - ru) <= Config.SAMPLE_SNAP:
                qu = qu - (qu - ru)
            if qv != rv and abs(qv - rv) <= Config.SAMPLE_SNAP:
                qv = qv - (qv - rv)
            if not (0.0 <= qu <= w - 1 and 0.0 <= qv <= h - 1):
                state[v, u] = PixelState.OUT_OF_VIEW
                continue
            u0, v0 = int(math.floor(qu)), int(math.floor(qv))
            u1, v1 = min(u0 + 1, w - 1), min(v0 + 1, h - 1)
            a = qu - u0
            b = qv - v0
            w00 = (1.0 - a) * (1.0 - b)
            w10 = a * (1.0 - b)
            w01 = (1.0 - a) * b
            w11 = a * b
            for ch in range(c):
                out[v, u, ch] = (w00 * img[v0, u0, ch] + w10 * img[v0, u1, ch]
                                 + w01 * img[v1, u0, ch] + w11 * img[v1, u1, ch])
    return (out if src.ndim == 3 else out[:, :, 0]), state


# ───────────────────── export ─────────────────────

def export_scene(scene: SyntheticScene, out_dir: str) -> Dict[str, str]:
    """Write the scene bundle plus a manifest; returns file name -> sha256."""
    os.makedirs(out_dir, exist_ok=True)
    files = {
        "frame_prev.pfm": lambda p: write_pfm(p, scene.frame_prev),
        "frame_target.pfm": lambda p: write_pfm(p, scene.frame_target),
        "frame_next.pfm": lambda p: write_pfm(p, scene.frame_next),
        "depth.pfm": lambda p: write_pfm(p, scene.gt_depth),
        "masks.pgm": lambda p: write_mask_bundle(p, scene.gt_masks),
        "masks.ppm": lambda p: write_mask_composite(p, scene.gt_masks, seed=scene.config.texture_seed),
        "scene.cfg": lambda p: save_scene_config(p, scene.config),
    }
    digests = {}
    for name, writer in files.items():
        path = os.path.join(out_dir, name)
        writer(path)
        with open(path, "rb") as f:
            digests[name] = hashlib.sha256(f.read()).hexdigest()
    write_json(os.path.join(out_dir, "manifest.json"), {
        "name": scene.config.name,
        "width": scene.config.width,
        "height": scene.config.height,
        "components": ["background"] + [o.name for o in scene.config.objects],
        "transforms": {f: [t.to_vector() for t in scene.gt_transforms[f]] for f in SOURCES},
        "degenerate_objects": scene.degenerate_objects,
        "files": digests,
    })
    logger.info(f"Scene '{scene.config.name}' exported to {out_dir}")
    return digests
