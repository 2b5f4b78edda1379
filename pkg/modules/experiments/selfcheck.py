"""
Fast invariant suite behind `main.py selfcheck`.

Each group is a function that raises on the first violated property. The
groups only use small seeded instances so the whole suite stays within the
configured time budget.
"""

import logging
import math
import os
import time
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from core.config import Config
from core.errors import ConfigurationError
from core.diffcore import absolute, cos, exp, grad_check, lincomb, log, maximum, minimum, sin, sqrt, square, total
from core.models import CameraIntrinsics, DepthMetrics, PixelCoord, Point3, RigidTransform
from core.ui import UI
from modules.decomposition import blend_point, blended_linear_part, normalize_masks, ordering_weights
from modules.evaluation import depth_metrics
from modules.geometry import apply_transform, backproject, decode_pose, project, rotation_matrix, rotation_of
from modules.losses import mask_smoothness_loss, photometric_loss, smoothness_loss, ssim_map
from modules.synth import load_scene_config, oracle_warp, verify_fixture_checksums
from modules.warp import synthesize_view

logger = logging.getLogger("STRATA.SelfCheck")

GRAD_TOL = 1e-4
LOSS_GRAD_TOL = 1e-3


class CheckFailure(AssertionError):
    pass


def _require(cond: bool, msg: str):
    if not cond:
        raise CheckFailure(msg)


def random_warp_case(rng: np.random.Generator, width: int = 12, height: int = 9, k: int = 2,
                     channels: int = 1):
    """Random depth, normalized masks, small motions and a source image."""
    intr = CameraIntrinsics(fx=0.9 * width, fy=0.9 * width, cx=(width - 1) / 2, cy=(height - 1) / 2)
    depth = rng.uniform(4.0, 12.0, size=(height, width))
    logits = rng.normal(size=(k, height, width))
    masks = normalize_masks(logits, ordering_weights(k))
    ts = [RigidTransform.from_vector(np.concatenate([rng.normal(0, 0.02, 3), rng.normal(0, 0.2, 3)]))
          for _ in range(k)]
    shape = (height, width) if channels == 1 else (height, width, channels)
    src = rng.uniform(0.0, 1.0, size=shape)
    return depth, masks, ts, src, intr


# ───────────────────── groups ─────────────────────

_UNARY_CASES: List[Tuple[str, Callable, Tuple[float, float]]] = [
    ("exp", lambda xs: exp(xs[0]), (-2.0, 2.0)),
    ("log", lambda xs: log(xs[0]), (0.5, 3.0)),
    ("sqrt", lambda xs: sqrt(xs[0]), (0.5, 3.0)),
    ("sin", lambda xs: sin(xs[0]), (-3.0, 3.0)),
    ("cos", lambda xs: cos(xs[0]), (-3.0, 3.0)),
    ("square", lambda xs: square(xs[0]), (-3.0, 3.0)),
    ("abs", lambda xs: absolute(xs[0]), (0.2, 3.0)),
    ("neg", lambda xs: -xs[0] * xs[0], (-3.0, 3.0)),
    ("div", lambda xs: xs[0] / xs[1], (0.5, 3.0)),
    ("pow", lambda xs: xs[0] ** 2.5, (0.5, 3.0)),
    ("min", lambda xs: minimum(xs[0], xs[1] + 10.0) * xs[1], (0.5, 3.0)),
    ("max", lambda xs: maximum(xs[0], xs[1] - 10.0) * xs[1], (0.5, 3.0)),
]

_GEOMETRY_INTR = CameraIntrinsics(fx=40.0, fy=35.0, cx=15.5, cy=11.5)


def _weighted(point) -> object:
    return lincomb([0.3, -0.7, 1.1], list(point))


def _geometry_cases(rng: np.random.Generator) -> List[Tuple[str, Callable, np.ndarray]]:
    """(name, expr, inputs) for the pinhole and SE(3) helpers at one random point."""
    pixel = PixelCoord(*rng.uniform(0.0, 30.0, size=2))
    fixed = Point3(*rng.normal(size=2), float(rng.uniform(3.0, 8.0)))
    return [
        ("backproject", lambda xs: _weighted(backproject(pixel, xs[0], _GEOMETRY_INTR)),
         rng.uniform(0.5, 20.0, size=1)),
        ("project", lambda xs: lincomb([1.0, -0.5], list(project(Point3(*xs), _GEOMETRY_INTR))),
         np.concatenate([rng.normal(size=2), rng.uniform(3.0, 8.0, size=1)])),
        ("apply_transform", lambda xs: _weighted(apply_transform(
            RigidTransform(axis_angle=tuple(xs[:3]), translation=tuple(xs[3:6])), Point3(*xs[6:]))),
         np.concatenate([rng.normal(0.0, 0.5, 3), rng.normal(size=6)])),
        ("decode_pose", lambda xs: _weighted(apply_transform(decode_pose(xs), fixed)),
         rng.normal(0.0, 30.0, size=6)),
        ("rotation-series", lambda xs: _weighted(apply_transform(
            RigidTransform(axis_angle=tuple(xs)), fixed)),
         rng.normal(0.0, 2e-5, size=3)),
    ]


def check_gradients(seeds: Sequence[int] = range(5), geometry_seeds: Sequence[int] = range(10)):
    for kind, expr, (lo, hi) in _UNARY_CASES:
        for seed in seeds:
            rng = np.random.default_rng(seed)
            x = rng.uniform(lo, hi, size=2)
            report = grad_check(expr, x)
            _require(report.max_relative_error < GRAD_TOL,
                     f"{kind}: relative error {report.max_relative_error:.2e} at seed {seed}")

    for seed in geometry_seeds:
        for kind, expr, x in _geometry_cases(np.random.default_rng(1000 + seed)):
            report = grad_check(expr, x, step=1e-6 if kind == "rotation-series" else 1e-5)
            _require(report.max_relative_error < GRAD_TOL,
                     f"{kind}: relative error {report.max_relative_error:.2e} at seed {seed}")

    rng = np.random.default_rng(0)
    a = rng.uniform(0.1, 0.9, size=(5, 5))
    b = a + rng.normal(0, 0.05, size=(5, 5))

    def ssim_expr(xs):
        img = np.empty((5, 5), dtype=object)
        img[:] = np.asarray(xs, dtype=object).reshape(5, 5)
        return total(list(ssim_map(a, img).ravel()))

    report = grad_check(ssim_expr, b.ravel())
    _require(report.max_relative_error < GRAD_TOL, f"ssim: relative error {report.max_relative_error:.2e}")

    depth, masks, ts, src, intr = random_warp_case(rng, 8, 6, 2)
    target = src + rng.normal(0, 0.02, size=src.shape)

    def warp_expr(xs):
        d = depth.astype(object)
        d[2, 3] = xs[0]
        img, state = synthesize_view(d, masks, ts, src, intr)
        loss, _ = photometric_loss(target, [(img, state)])
        return total(list(loss.ravel()))

    report = grad_check(warp_expr, [depth[2, 3] + 0.0137])
    _require(report.max_relative_error < LOSS_GRAD_TOL,
             f"warp+photometric: relative error {report.max_relative_error:.2e}")


def check_geometry(seeds: Sequence[int] = range(20)):
    intr = CameraIntrinsics(fx=100.0, fy=50.0, cx=320.0, cy=96.0)
    for seed in seeds:
        rng = np.random.default_rng(seed)
        p = PixelCoord(*rng.uniform(0, 600, size=2))
        d = float(rng.uniform(0.1, 50.0))
        q = project(backproject(p, d, intr), intr)
        _require(abs(q.u - p.u) < 1e-10 and abs(q.v - p.v) < 1e-10, f"project(backproject) drift at seed {seed}")

        v = rng.normal(size=3) * (10.0 ** rng.uniform(-9, 0.5))
        r = rotation_matrix(RigidTransform(axis_angle=tuple(v)))
        _require(np.allclose(r.T @ r, np.eye(3), atol=1e-9), f"rotation not orthonormal at seed {seed}")
        _require(abs(np.linalg.det(r) - 1.0) < 1e-9, f"rotation determinant != 1 at seed {seed}")

        t = RigidTransform.from_vector(rng.normal(size=6))
        a, b = rng.normal(size=3), rng.normal(size=3)
        ta = np.array(apply_transform(t, Point3(*a)))
        tb = np.array(apply_transform(t, Point3(*b)))
        _require(abs(np.linalg.norm(ta - tb) - np.linalg.norm(a - b)) < 1e-9, f"isometry broken at seed {seed}")

    quarter = decode_pose([100 * math.pi / 2, 0, 0, 0, 0, 0])
    moved = apply_transform(quarter, Point3(0.0, 1.0, 0.0))
    _require(np.allclose(moved, (0.0, 0.0, 1.0), atol=1e-12), "decode_pose quarter turn")


def check_masks(seeds: Sequence[int] = range(10)):
    for seed in seeds:
        rng = np.random.default_rng(seed)
        k = int(rng.integers(1, 6))
        logits = rng.normal(size=(k, 4, 5)) * 10.0 ** rng.uniform(0, 1)
        m = normalize_masks(logits, ordering_weights(k))
        _require(np.allclose(m.sum(axis=0), 1.0, atol=1e-9), f"masks do not sum to 1 at seed {seed}")
        _require(np.all(m >= 0) and np.all(m <= 1), f"mask values out of range at seed {seed}")

        shift = rng.normal(size=(4, 5))
        d = ordering_weights(k)
        shifted = normalize_masks(logits + shift[None] / d[:, None, None], d)
        _require(np.allclose(shifted, m, atol=1e-12), f"softmax shift invariance at seed {seed}")

        ts = [RigidTransform.from_vector(rng.normal(size=6)) for _ in range(k)]
        rots = [rotation_of(t) for t in ts]
        x = Point3(*rng.normal(size=3))
        j = int(rng.integers(0, k))
        one_hot = [1.0 if i == j else 0.0 for i in range(k)]
        blended = blend_point(one_hot, ts, rots, x)
        _require(tuple(blended) == tuple(apply_transform(ts[j], x)), f"one-hot blend differs at seed {seed}")

        moved = np.array([apply_transform(t, x) for t in ts])
        soft = np.array(blend_point(list(m[:, 0, 0]), ts, rots, x))
        _require(np.all(soft >= moved.min(axis=0) - 1e-9) and np.all(soft <= moved.max(axis=0) + 1e-9),
                 f"blended point leaves the hull of the component motions at seed {seed}")

    # an even blend of two rotations is a linear map but not a rotation
    pair = [RigidTransform(axis_angle=(0.0, 0.0, math.pi / 2)), RigidTransform()]
    r = blended_linear_part([0.5, 0.5], pair)
    _require(not np.allclose(r.T @ r, np.eye(3), atol=1e-3), "blended rotations stayed orthonormal")


def check_warp_oracle(seeds: Sequence[int] = range(100), width: int = 16, height: int = 12):
    for seed in seeds:
        rng = np.random.default_rng(seed)
        depth, masks, ts, src, intr = random_warp_case(rng, width, height, int(rng.integers(1, 4)))
        img, state = synthesize_view(depth, masks, ts, src, intr)
        ref, ref_state = oracle_warp(depth, masks, ts, src, intr)
        _require(np.array_equal(state, ref_state), f"validity differs from oracle at seed {seed}")
        _require(np.max(np.abs(img - ref)) <= 1e-12, f"warp differs from oracle at seed {seed}")


def check_losses(seeds: Sequence[int] = range(5)):
    for seed in seeds:
        rng = np.random.default_rng(seed)
        a = rng.uniform(size=(6, 7))
        b = rng.uniform(size=(6, 7))
        _require(np.array_equal(ssim_map(a, b), ssim_map(b, a)), f"ssim not symmetric at seed {seed}")

        depth = rng.uniform(1.0, 10.0, size=(6, 7))
        c = float(rng.uniform(0.1, 10.0))
        _require(abs(smoothness_loss(c * depth, a) - smoothness_loss(depth, a)) < 1e-10,
                 f"smoothness not scale invariant at seed {seed}")

        valid = np.zeros((6, 7), dtype=np.int8)
        one, _ = photometric_loss(a, [(b, valid)])
        two, _ = photometric_loss(a, [(b, valid), (rng.uniform(size=(6, 7)), valid)])
        _require(np.all(two <= one), f"extra source increased the loss at seed {seed}")

    masks = np.array([[[1.0, 1.0, 0.0, 0.0]], [[0.0, 0.0, 1.0, 1.0]]])
    _require(abs(mask_smoothness_loss(masks, np.zeros((1, 4))) - 0.5) < 1e-15, "mask smoothness example")


def check_metrics():
    gt = np.full((4, 5), 10.0)
    _require(depth_metrics(gt, gt) == DepthMetrics(abs_rel=0, sq_rel=0, rmse=0, rmse_log=0,
                                                   delta1=1, delta2=1, delta3=1), "pred = gt metrics")
    _require(depth_metrics(2 * gt, gt).abs_rel == 0.0, "median scaling")
    gt = np.full((2, 2), 4.0)
    _require(depth_metrics(1.25 * gt, gt, median_scale=False).delta1 == 0.0, "delta threshold must be strict")


def check_fixtures(fixtures_dir: Optional[str] = None):
    fixtures_dir = fixtures_dir or Config.FIXTURES_DIR
    names = verify_fixture_checksums(fixtures_dir)
    for name in names:
        if name.endswith(".cfg"):
            load_scene_config(os.path.join(fixtures_dir, name))


GROUPS: Dict[str, Callable[[], None]] = {
    "gradients": check_gradients,
    "geometry": check_geometry,
    "masks": check_masks,
    "warp-oracle": check_warp_oracle,
    "losses": check_losses,
    "metrics": check_metrics,
    "fixtures": check_fixtures,
}


def run_selfcheck(groups: Optional[Sequence[str]] = None, quiet: bool = False) -> Dict[str, Optional[str]]:
    """Run the named groups (all by default); maps group -> None on pass, message on failure.

    Unknown group names raise ConfigurationError before any group runs.
    """
    names = list(groups or GROUPS)
    unknown = [name for name in names if name not in GROUPS]
    if unknown:
        raise ConfigurationError(f"unknown selfcheck group(s) {unknown}; choose from {sorted(GROUPS)}")
    results: Dict[str, Optional[str]] = {}
    started = time.perf_counter()
    for name in names:
        t0 = time.perf_counter()
        try:
            GROUPS[name]()
            results[name] = None
        except Exception as e:
            results[name] = f"{type(e).__name__}: {e}"
        dt = time.perf_counter() - t0
        logger.debug(f"group {name} finished in {dt:.2f}s")
        if not quiet:
            if results[name] is None:
                UI.info(f"{name:<12} pass ({dt:.1f}s)")
            else:
                UI.error(f"{name:<12} FAIL {results[name]}")
    elapsed = time.perf_counter() - started
    if elapsed > Config.SELFCHECK_BUDGET_S:
        logger.warning(f"selfcheck took {elapsed:.1f}s, over the {Config.SELFCHECK_BUDGET_S:.0f}s budget")
    return results
