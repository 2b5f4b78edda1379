"""Tests for modules.optim.dense — whole-array objective checked against the scalar tape."""

import numpy as np
import pytest
from pydantic import ValidationError

from core.errors import DegenerateInputError
from core.models import CameraIntrinsics, FitConfig, LossConfig, ObjectSpec, RigidTransform, SceneConfig
from modules.decomposition import normalize_masks, ordering_weights
from modules.experiments import random_warp_case
from modules.geometry import rotation_matrix
from modules.losses import pyramid_level, smoothness_loss, ssim_map
from modules.optim import (
    BLOCKS, dense_objective, fit_scene, initial_params, softmax_masks, tape_objective, warp_view,
)
from modules.optim.dense import pyramid_smoothness, ssim_parts
from modules.synth import generate_scene
from modules.warp import PixelState, synthesize_view


def small_scene(channels: int = 1):
    return generate_scene(SceneConfig(
        name="small", width=9, height=7,
        intrinsics=CameraIntrinsics(fx=9.0, fy=9.0, cx=4.0, cy=3.0),
        background_depth=8.0, texture_cell=3, blur_radius=1, texture_seed=5, channels=channels,
        ego_prev=RigidTransform(translation=(0.3, 0.0, 0.0)),
        ego_next=RigidTransform(translation=(-0.3, 0.0, 0.0)),
        objects=[ObjectSpec(name="box", rect=(2, 2, 5, 5), depth=5.0,
                            motion_prev=RigidTransform(translation=(0.0, 0.2, 0.0)),
                            motion_next=RigidTransform(translation=(0.0, -0.2, 0.0)))],
    ))


def random_params(scene, k: int, seed: int):
    rng = np.random.default_rng(seed)
    h, w = scene.gt_depth.shape
    return {
        "log_depth": np.log(rng.uniform(4.0, 10.0, size=(h, w))),
        "mask_logits": rng.normal(size=(k, h, w)),
        "pose_prev": rng.normal(0.0, 5.0, size=(k, 6)),
        "pose_next": rng.normal(0.0, 5.0, size=(k, 6)),
    }


def assert_engines_agree(scene, cfg: FitConfig, params):
    dense_terms, dense_grads = dense_objective(scene, cfg, params)
    tape_terms, tape_grads = tape_objective(scene, cfg, params)
    assert dense_terms.valid_count == tape_terms.valid_count
    for name in ("total", "photometric", "smoothness", "mask_smoothness"):
        assert getattr(dense_terms, name) == pytest.approx(float(getattr(tape_terms.to_breakdown(), name)),
                                                           rel=1e-10, abs=1e-14)
    for name in BLOCKS:
        scale = max(1.0, float(np.max(np.abs(tape_grads[name]))))
        np.testing.assert_allclose(dense_grads[name], tape_grads[name], rtol=1e-6, atol=1e-10 * scale,
                                   err_msg=name)


# ───────────────────── forward pieces ─────────────────────

class TestForwardPieces:

    @pytest.mark.parametrize("k", [1, 2, 4])
    def test_softmax_matches_mask_normalization(self, k):
        logits = np.random.default_rng(k).normal(size=(k, 3, 4)) * 3.0
        d = ordering_weights(k)
        np.testing.assert_allclose(softmax_masks(logits, d), normalize_masks(logits, d), atol=1e-15)

    @pytest.mark.parametrize("seed", range(4))
    def test_warp_matches_synthesize_view(self, seed):
        rng = np.random.default_rng(seed)
        depth, masks, ts, src, intr = random_warp_case(rng, 11, 8, int(rng.integers(1, 4)),
                                                       channels=1 + 2 * (seed % 2))
        cache = warp_view(depth, masks, [rotation_matrix(t) for t in ts],
                          [np.asarray(t.translation) for t in ts], src, intr)
        img, state = synthesize_view(depth, masks, ts, src, intr)
        np.testing.assert_array_equal(cache.state, state)
        expected = img if img.ndim == 3 else img[:, :, None]
        np.testing.assert_allclose(cache.image, expected, atol=1e-15)

    def test_identity_warp_is_exact(self):
        rng = np.random.default_rng(7)
        intr = CameraIntrinsics(fx=60.0, fy=60.0, cx=31.5, cy=23.5)
        depth = rng.uniform(2.0, 30.0, size=(48, 64))
        masks = softmax_masks(rng.normal(size=(3, 48, 64)), np.ones(3))
        src = rng.uniform(size=(48, 64))
        cache = warp_view(depth, masks, [np.eye(3)] * 3, [np.zeros(3)] * 3, src, intr)
        assert np.all(cache.state == PixelState.VALID)
        np.testing.assert_array_equal(cache.image[:, :, 0], src)

    def test_ssim_matches_loss_module(self):
        rng = np.random.default_rng(3)
        a = rng.uniform(size=(5, 6, 1))
        b = a + rng.normal(0.0, 0.1, size=a.shape)
        np.testing.assert_allclose(ssim_parts(a, b).ssim[:, :, 0], ssim_map(a[:, :, 0], b[:, :, 0]), atol=1e-14)

    @pytest.mark.parametrize("scale", [1.0, 0.5, 0.25])
    def test_pyramid_smoothness_value(self, scale):
        rng = np.random.default_rng(11)
        depth = rng.uniform(2.0, 9.0, size=(9, 12))
        img = rng.uniform(size=(9, 12))
        value, grad = pyramid_smoothness(depth, img, scale)
        assert value == pytest.approx(smoothness_loss(pyramid_level(depth, scale), pyramid_level(img, scale)),
                                      rel=1e-12)
        assert grad.shape == depth.shape


# ───────────────────── objective agreement ─────────────────────

class TestAgainstTape:

    @pytest.mark.parametrize("k", [1, 2, 3])
    def test_default_loss(self, k):
        scene = small_scene()
        assert_engines_agree(scene, FitConfig(K=k), random_params(scene, k, seed=k))

    @pytest.mark.parametrize("k", [2, 3])
    def test_without_ordering_with_mask_smoothing(self, k):
        scene = small_scene()
        cfg = FitConfig(K=k, loss=LossConfig(use_depth_ordering=False, mask_smooth_weight=0.01))
        assert_engines_agree(scene, cfg, random_params(scene, k, seed=10 + k))

    def test_auto_mask(self):
        scene = small_scene()
        assert_engines_agree(scene, FitConfig(K=2, loss=LossConfig(auto_mask=True)), random_params(scene, 2, 21))

    def test_multi_scale_smoothness(self):
        scene = small_scene()
        cfg = FitConfig(K=2, loss=LossConfig(scale_factors=(1.0, 0.5, 0.25), lambda_base=0.05))
        assert_engines_agree(scene, cfg, random_params(scene, 2, 31))

    def test_color_frames(self):
        scene = small_scene(channels=3)
        assert_engines_agree(scene, FitConfig(K=2), random_params(scene, 2, 41))

    def test_flat_initial_depth(self):
        scene = small_scene()
        cfg = FitConfig(K=2, pose_noise_translation=0.05, seed=3)
        assert_engines_agree(scene, cfg, initial_params(scene, cfg))

    def test_nothing_valid_is_degenerate(self):
        scene = small_scene()
        params = random_params(scene, 1, 0)
        params["pose_prev"][0, 5] = params["pose_next"][0, 5] = -5000.0   # 50 units behind the camera
        with pytest.raises(DegenerateInputError):
            dense_objective(scene, FitConfig(K=1), params)


# ───────────────────── fitting ─────────────────────

class TestEngines:

    def test_engines_follow_the_same_trajectory(self):
        scene = small_scene()
        dense = fit_scene(scene, FitConfig(K=2, steps=3, pose_noise_translation=0.05, seed=1))
        tape = fit_scene(scene, FitConfig(K=2, steps=3, pose_noise_translation=0.05, seed=1, engine="tape"))
        np.testing.assert_allclose([b.total for b in dense.loss_history],
                                   [b.total for b in tape.loss_history], rtol=1e-8)
        np.testing.assert_allclose(dense.depth, tape.depth, rtol=1e-8)

    def test_unknown_engine_rejected(self):
        with pytest.raises(ValidationError):
            FitConfig(engine="gpu")
