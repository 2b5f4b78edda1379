"""
Inverse-depth renderings for inspecting fits.

Near surfaces come out bright and warm, far ones dark. The upper end of the
color range is the 95th percentile of inverse depth so a few very close
pixels do not wash out the rest of the image.
"""

import logging

import numpy as np

from core.errors import ContractError
from core.formats import write_ppm

logger = logging.getLogger("STRATA.DepthMaps")

# (position, r, g, b) stops of a dark-purple to pale-yellow ramp
_PALETTE = np.array([
    [0.00, 0.00, 0.00, 0.02],
    [0.25, 0.34, 0.06, 0.43],
    [0.50, 0.73, 0.21, 0.33],
    [0.75, 0.98, 0.55, 0.04],
    [1.00, 0.99, 1.00, 0.64],
])


def colorize_inverse_depth(depth: np.ndarray, vmax_percentile: float = 95.0) -> np.ndarray:
    """(H, W, 3) colors in [0, 1] for 1/depth, min at 0 and the percentile at 1."""
    depth = np.asarray(depth, dtype=float)
    if depth.ndim != 2:
        raise ContractError(f"depth must be (H, W), got shape {depth.shape}")
    if not np.all(np.isfinite(depth)) or np.any(depth <= 0):
        raise ContractError("depth must be finite and positive")
    if not 0.0 < vmax_percentile <= 100.0:
        raise ContractError(f"percentile must be in (0, 100], got {vmax_percentile}")
    inv = 1.0 / depth
    lo = float(inv.min())
    hi = float(np.percentile(inv, vmax_percentile))
    t = np.zeros_like(inv) if hi <= lo else np.clip((inv - lo) / (hi - lo), 0.0, 1.0)
    return np.stack([np.interp(t, _PALETTE[:, 0], _PALETTE[:, c]) for c in (1, 2, 3)], axis=-1)


def write_inverse_depth(path, depth: np.ndarray, vmax_percentile: float = 95.0):
    write_ppm(path, colorize_inverse_depth(depth, vmax_percentile))
    logger.debug(f"Inverse-depth map written to {path}")
