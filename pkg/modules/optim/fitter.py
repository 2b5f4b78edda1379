"""
Direct-variable fitting: per-pixel log-depth, K mask logits per pixel and one
raw 6-vector pose per component and source view are optimized with Adam
against the full objective. Each step evaluates the objective with the
configured engine: whole-array numpy with closed-form gradients (dense) or
a freshly recorded scalar tape (tape), which serves as the reference.
"""

import logging
import math
import os
import time
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict

from core.config import Config
from core.diffcore import backward, exp, forward, values
from core.errors import ContractError
from core.formats import append_jsonl, write_keyvalue, write_pfm
from core.models import FitConfig, LossBreakdown, RigidTransform
from modules.decomposition import (
    logits_from_masks, normalize_masks, ordering_weights, uniform_logits, write_mask_bundle,
    write_mask_composite,
)
from modules.evaluation import write_inverse_depth
from modules.geometry import decode_pose
from modules.losses import LossTerms, total_loss
from modules.optim.adam import AdamState, adam_step
from modules.optim.dense import dense_objective
from modules.synth import SOURCES, SyntheticScene
from modules.warp import induced_flow

logger = logging.getLogger("STRATA.Fitter")

BLOCKS = ("log_depth", "mask_logits", "pose_prev", "pose_next")

StepCallback = Callable[[LossBreakdown], None]


class FitResult(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    config: FitConfig
    depth: np.ndarray                            # (H, W), strictly positive
    masks: np.ndarray                            # (K, H, W)
    poses: Dict[str, List[RigidTransform]]       # per source view
    params: Dict[str, np.ndarray]                # raw optimized blocks
    loss_history: List[LossBreakdown]
    wall_time: float

    def flow(self, source: str, intr) -> np.ndarray:
        return induced_flow(self.depth, self.masks, self.poses[source], intr)


# ───────────────────── parameter plumbing ─────────────────────

def _pose_vector(t: RigidTransform) -> np.ndarray:
    return np.asarray(t.to_vector()) / Config.POSE_SCALE


def initial_params(scene: SyntheticScene, cfg: FitConfig) -> Dict[str, np.ndarray]:
    h, w = scene.gt_depth.shape
    k = cfg.K
    if cfg.init == "ground-truth":
        if k != scene.n_components:
            raise ContractError(f"ground-truth init needs K={scene.n_components}, got K={k}")
        d = ordering_weights(k, cfg.loss.use_depth_ordering)
        return {
            "log_depth": np.log(scene.gt_depth),
            "mask_logits": logits_from_masks(scene.gt_masks, d) if k > 1 else uniform_logits(w, h, k),
            "pose_prev": np.stack([_pose_vector(t) for t in scene.gt_transforms["prev"]]),
            "pose_next": np.stack([_pose_vector(t) for t in scene.gt_transforms["next"]]),
        }

    rng = np.random.default_rng(cfg.seed)
    poses = {}
    for name in ("pose_prev", "pose_next"):
        raw = np.zeros((k, 6))
        if cfg.init == "perturbed":
            raw[:] = _pose_vector(scene.gt_transforms[name[len("pose_"):]][0])
        for i in range(k):
            raw[i, :3] += _random_direction(rng) * cfg.pose_noise_rotation / Config.POSE_SCALE
            raw[i, 3:] += _random_direction(rng) * cfg.pose_noise_translation / Config.POSE_SCALE
        poses[name] = raw
    return {
        "log_depth": np.full((h, w), math.log(cfg.init_depth)),
        "mask_logits": uniform_logits(w, h, k),
        **poses,
    }


def _random_direction(rng: np.random.Generator) -> np.ndarray:
    v = rng.normal(size=3)
    return v / np.linalg.norm(v)


def _flatten(params: Dict[str, np.ndarray]) -> Tuple[np.ndarray, List[Tuple[str, Tuple[int, ...], int, int]]]:
    layout = []
    offset = 0
    for name in BLOCKS:
        arr = np.asarray(params[name], dtype=float)
        layout.append((name, arr.shape, offset, offset + arr.size))
        offset += arr.size
    return np.concatenate([np.asarray(params[n], dtype=float).ravel() for n in BLOCKS]), layout


def _unflatten(flat, layout) -> Dict[str, np.ndarray]:
    out = {}
    for name, shape, start, stop in layout:
        block = np.empty(stop - start, dtype=object)
        block[:] = list(flat[start:stop])
        out[name] = block.reshape(shape)
    return out


def decode_params(params: Dict[str, np.ndarray], ordering: np.ndarray):
    """Map raw blocks to (depth, masks, {source: transforms}); floats or Variables."""
    log_depth = np.asarray(params["log_depth"])
    depth = np.empty(log_depth.shape, dtype=object)
    for idx in np.ndindex(*log_depth.shape):
        depth[idx] = exp(log_depth[idx])
    masks = normalize_masks(params["mask_logits"], ordering)
    poses = {s: [decode_pose(list(row)) for row in params[f"pose_{s}"]] for s in SOURCES}
    return depth, masks, poses


def objective(scene: SyntheticScene, cfg: FitConfig, params: Dict[str, np.ndarray]) -> LossTerms:
    d = ordering_weights(cfg.K, cfg.loss.use_depth_ordering)
    depth, masks, poses = decode_params(params, d)
    return total_loss(scene.frame_target, scene.sources, depth, masks,
                      [poses[s] for s in SOURCES], scene.intrinsics, cfg.loss)


def tape_objective(scene: SyntheticScene, cfg: FitConfig,
                   params: Dict[str, np.ndarray]) -> Tuple[LossTerms, Dict[str, np.ndarray]]:
    """Objective and block gradients by recording every scalar operation."""
    flat, layout = _flatten(params)
    captured = {}

    def expr(xs):
        terms = objective(scene, cfg, _unflatten(xs, layout))
        captured["terms"] = terms
        return terms.total

    _, tape = forward(expr, flat)
    grad = backward(tape)
    logger.debug(f"Tape: {tape.size} nodes {tape.kind_counts()}")
    return captured["terms"], {name: grad[start:stop].reshape(shape) for name, shape, start, stop in layout}


ENGINES = {"dense": dense_objective, "tape": tape_objective}


# ───────────────────── fitting loop ─────────────────────

def fit_scene(scene: SyntheticScene, cfg: FitConfig, on_step: Optional[StepCallback] = None,
              run_dir: Optional[str] = None) -> FitResult:
    params = initial_params(scene, cfg)
    state = AdamState(lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, epsilon=cfg.epsilon)
    history: List[LossBreakdown] = []
    evaluate = ENGINES[cfg.engine]
    started = time.perf_counter()
    report_every = max(1, cfg.steps // 10)

    for step in range(cfg.steps):
        terms, grads = evaluate(scene, cfg, params)
        breakdown = terms.to_breakdown(step)
        history.append(breakdown)
        if on_step is not None:
            on_step(breakdown)

        params, state = adam_step(params, grads, state, lr=cfg.block_rates(step))

        if run_dir and cfg.checkpoint_every and (step + 1) % cfg.checkpoint_every == 0:
            write_checkpoint(os.path.join(run_dir, f"checkpoint-{step + 1:05d}"), params, cfg)

        if (step + 1) % report_every == 0 or step + 1 == cfg.steps:
            elapsed = time.perf_counter() - started
            rate = (step + 1) / elapsed if elapsed > 0 else 0.0
            eta = (cfg.steps - step - 1) / rate if rate > 0 else 0.0
            logger.info(f"step {step + 1}/{cfg.steps} loss={breakdown.total:.6f} "
                        f"photo={breakdown.photometric:.6f} | {rate:.2f} it/s | ETA {eta:.0f}s")

    d = ordering_weights(cfg.K, cfg.loss.use_depth_ordering)
    depth, masks, poses = decode_params(params, d)
    return FitResult(
        config=cfg,
        depth=values(depth),
        masks=values(masks),
        poses={s: [RigidTransform.from_vector(t.to_vector()) for t in ts] for s, ts in poses.items()},
        params=params,
        loss_history=history,
        wall_time=time.perf_counter() - started,
    )


def jsonl_logger(path: str) -> StepCallback:
    """Step callback that appends each breakdown to a JSON-lines file."""
    def _write(b: LossBreakdown):
        append_jsonl(path, b.model_dump())
        logger.debug(b.model_dump_json())
    return _write


def moving_average(history: List[LossBreakdown], window: int = 20) -> np.ndarray:
    totals = np.array([b.total for b in history], dtype=float)
    if window < 1:
        raise ContractError(f"window must be >= 1, got {window}")
    if len(totals) < window:
        return totals.copy()
    return np.convolve(totals, np.ones(window) / window, mode="valid")


# ───────────────────── artifacts ─────────────────────

def _write_poses(path: str, poses: Dict[str, List[RigidTransform]]):
    kv = {f"{s}.{i}": t.format() for s, ts in poses.items() for i, t in enumerate(ts)}
    write_keyvalue(path, kv, header="target->source transforms: axis-angle (3) then translation (3)")


def write_checkpoint(out_dir: str, params: Dict[str, np.ndarray], cfg: FitConfig):
    os.makedirs(out_dir, exist_ok=True)
    d = ordering_weights(cfg.K, cfg.loss.use_depth_ordering)
    depth, masks, poses = decode_params(params, d)
    write_pfm(os.path.join(out_dir, "depth.pfm"), values(depth))
    write_mask_bundle(os.path.join(out_dir, "masks.pgm"), masks)
    _write_poses(os.path.join(out_dir, "poses.cfg"), poses)


def save_fit(result: FitResult, out_dir: str, color_seed: int = 0):
    os.makedirs(out_dir, exist_ok=True)
    write_pfm(os.path.join(out_dir, "depth.pfm"), result.depth)
    write_inverse_depth(os.path.join(out_dir, "inv_depth.ppm"), result.depth)
    write_mask_bundle(os.path.join(out_dir, "masks.pgm"), result.masks)
    write_mask_composite(os.path.join(out_dir, "masks.ppm"), result.masks, seed=color_seed)
    _write_poses(os.path.join(out_dir, "poses.cfg"), result.poses)
