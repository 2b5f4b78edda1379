"""
Depth and mask quality scores.

Depth metrics follow the usual monocular protocol: optional median scaling,
clamping to the evaluation range, then the seven error columns. Delta
thresholds are strict, so a ratio of exactly 1.25 misses delta<1.25.
"""

import itertools
import logging
from typing import Dict, Optional, Tuple

import numpy as np

from core.config import Config
from core.errors import ContractError
from core.models import DepthMetrics

logger = logging.getLogger("STRATA.Metrics")


def _region(gt: np.ndarray, region: Optional[np.ndarray]) -> np.ndarray:
    if region is None:
        return np.ones(gt.shape, dtype=bool)
    region = np.asarray(region, dtype=bool)
    if region.shape != gt.shape:
        raise ContractError(f"region shape {region.shape} does not match depth {gt.shape}")
    if not region.any():
        raise ContractError("evaluation region is empty")
    return region


def depth_metrics(pred: np.ndarray, gt: np.ndarray, region: Optional[np.ndarray] = None,
                  median_scale: bool = True, clamp: bool = True) -> DepthMetrics:
    pred = np.asarray(pred, dtype=float)
    gt = np.asarray(gt, dtype=float)
    if pred.shape != gt.shape:
        raise ContractError(f"prediction shape {pred.shape} does not match ground truth {gt.shape}")
    sel = _region(gt, region)
    d = pred[sel]
    g = gt[sel]
    if np.any(g <= 0):
        raise ContractError("ground-truth depth must be positive on the evaluation region")

    if median_scale:
        d = d * (np.median(g) / np.median(d))
    if clamp:
        d = np.clip(d, Config.DEPTH_MIN, Config.DEPTH_MAX)
        g = np.clip(g, Config.DEPTH_MIN, Config.DEPTH_MAX)

    ratio = np.maximum(d / g, g / d)
    diff = d - g
    return DepthMetrics(
        abs_rel=float(np.mean(np.abs(diff) / g)),
        sq_rel=float(np.mean(diff ** 2 / g)),
        rmse=float(np.sqrt(np.mean(diff ** 2))),
        rmse_log=float(np.sqrt(np.mean((np.log(d) - np.log(g)) ** 2))),
        delta1=float(np.mean(ratio < 1.25)),
        delta2=float(np.mean(ratio < 1.25 ** 2)),
        delta3=float(np.mean(ratio < 1.25 ** 3)),
    )


def mask_iou(pred: np.ndarray, gt_moving: np.ndarray,
             threshold: float = Config.MASK_THRESHOLD) -> Tuple[float, Tuple[int, ...]]:
    """Best IoU of a binarized channel, or a union of two, against the moving region."""
    pred = np.asarray(pred, dtype=float)
    gt_moving = np.asarray(gt_moving, dtype=bool)
    if pred.ndim != 3 or pred.shape[1:] != gt_moving.shape:
        raise ContractError(f"mask shape {pred.shape} does not match region {gt_moving.shape}")
    binary = pred > threshold
    k = binary.shape[0]

    def iou(sel: np.ndarray) -> float:
        union = np.logical_or(sel, gt_moving).sum()
        if union == 0:
            return 0.0
        return float(np.logical_and(sel, gt_moving).sum() / union)

    best, best_channels = -1.0, (0,)
    candidates = [(i,) for i in range(k)] + list(itertools.combinations(range(k), 2))
    for channels in candidates:
        score = iou(np.any(binary[list(channels)], axis=0))
        if score > best:
            best, best_channels = score, channels
    return best, best_channels


def moving_region(gt_labels: np.ndarray) -> np.ndarray:
    """Union of the non-background ground-truth components."""
    return np.asarray(gt_labels) > 0


def component_abs_rel(pred: np.ndarray, gt: np.ndarray, gt_labels: np.ndarray,
                      median_scale: bool = True) -> Dict[int, float]:
    """Abs Rel per ground-truth component, with one median scale for the whole image."""
    pred = np.asarray(pred, dtype=float)
    gt = np.asarray(gt, dtype=float)
    if median_scale:
        pred = pred * (np.median(gt) / np.median(pred))
    out = {}
    for label in np.unique(gt_labels):
        sel = np.asarray(gt_labels) == label
        out[int(label)] = depth_metrics(pred, gt, sel, median_scale=False).abs_rel
    return out
