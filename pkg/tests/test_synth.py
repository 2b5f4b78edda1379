"""Tests for modules.synth — procedural scenes, the reference warp and fixture integrity."""

import json
import shutil
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
import pytest

from core.errors import ConfigurationError, ContractError
from core.models import CameraIntrinsics, ObjectSpec, RigidTransform, SceneConfig
from modules.synth import (
    SOURCES, export_scene, generate_scene, load_scene_config, oracle_warp, save_scene_config,
    verify_fixture_checksums,
)
from modules.warp import PixelState, synthesize_view

ROOT = Path(__file__).resolve().parent.parent
FIXTURES = ROOT / "fixtures"
GOLDENS = ROOT / "tests" / "goldens" / "scenes.sha256"
FIXTURE_NAMES = sorted(p.stem for p in FIXTURES.glob("*.cfg"))


def dyadic_config(**overrides) -> SceneConfig:
    # fx == background depth: a unit lateral translation shifts the background by one pixel exactly
    fields = dict(
        name="dyadic", width=16, height=12,
        intrinsics=CameraIntrinsics(fx=16.0, fy=16.0, cx=7.5, cy=5.5),
        background_depth=16.0, texture_seed=5,
    )
    fields.update(overrides)
    return SceneConfig(**fields)


def resynthesis_error(scene, frame: str):
    """Absolute error of re-warping one source onto the target at interior, non-occluded pixels."""
    src = scene.frame_prev if frame == "prev" else scene.frame_next
    img, state = synthesize_view(scene.gt_depth, scene.gt_masks, scene.gt_transforms[frame], src,
                                 scene.intrinsics)
    keep = (state == PixelState.VALID) & ~scene.occluded[frame]
    keep[0, :] = keep[-1, :] = keep[:, 0] = keep[:, -1] = False
    return np.abs(img - scene.frame_target)[keep]


def render_digests(path: str, out_dir: str) -> dict:
    return export_scene(generate_scene(load_scene_config(path)), out_dir)


# ───────────────────── generation ─────────────────────

class TestGenerateScene:

    def test_deterministic(self):
        cfg = load_scene_config(FIXTURES / "two-movers-v1.cfg")
        a, b = generate_scene(cfg), generate_scene(cfg)
        for field in ("frame_prev", "frame_target", "frame_next", "gt_depth", "gt_masks"):
            assert np.array_equal(getattr(a, field), getattr(b, field))

    @pytest.mark.parametrize("name", ["static-pan-v1", "two-movers-v1"])
    def test_export_is_identical_across_processes(self, name, tmp_path):
        path = str(FIXTURES / f"{name}.cfg")
        with ProcessPoolExecutor(max_workers=1) as pool:
            remote = pool.submit(render_digests, path, str(tmp_path / "child")).result()
        assert remote == render_digests(path, str(tmp_path / "parent"))

    def test_texture_seed_changes_frames(self):
        a = generate_scene(dyadic_config(texture_seed=1))
        b = generate_scene(dyadic_config(texture_seed=2))
        assert not np.array_equal(a.frame_target, b.frame_target)

    def test_static_scene_has_identical_frames(self):
        scene = generate_scene(load_scene_config(FIXTURES / "static-v1.cfg"))
        assert np.array_equal(scene.frame_prev, scene.frame_target)
        assert np.array_equal(scene.frame_next, scene.frame_target)
        assert scene.n_components == 1
        assert np.all(scene.gt_masks == 1.0)

    def test_masks_are_one_hot_and_match_labels(self):
        scene = generate_scene(load_scene_config(FIXTURES / "two-movers-v1.cfg"))
        assert scene.gt_masks.shape == (3, 24, 32)
        np.testing.assert_array_equal(scene.gt_masks.sum(axis=0), 1.0)
        np.testing.assert_array_equal(scene.gt_masks.argmax(axis=0), scene.gt_labels)

    def test_depth_follows_objects(self):
        scene = generate_scene(load_scene_config(FIXTURES / "one-mover-v1.cfg"))
        assert scene.gt_depth[12, 15] == 8.0
        assert scene.gt_depth[0, 0] == 20.0
        assert scene.gt_labels[12, 15] == 1

    def test_nearest_object_wins_overlap(self):
        cfg = dyadic_config(objects=[
            ObjectSpec(name="far", rect=(2, 2, 10, 8), depth=12.0),
            ObjectSpec(name="near", rect=(6, 4, 12, 10), depth=6.0),
        ])
        scene = generate_scene(cfg)
        assert scene.gt_labels[5, 7] == 2
        assert scene.gt_depth[5, 7] == 6.0
        assert scene.gt_labels[3, 3] == 1

    def test_transforms_listed_background_first(self):
        cfg = load_scene_config(FIXTURES / "one-mover-v1.cfg")
        scene = generate_scene(cfg)
        assert scene.gt_transforms["prev"] == [cfg.ego_prev, cfg.objects[0].motion_prev]
        assert len(scene.transform_sets) == len(SOURCES)

    def test_color_scene_keeps_channels(self):
        scene = generate_scene(dyadic_config(channels=3))
        assert scene.frame_target.shape == (12, 16, 3)

    def test_object_leaving_view_is_rejected(self):
        cfg = dyadic_config(objects=[ObjectSpec(
            name="box", rect=(10, 4, 14, 8), depth=4.0,
            motion_prev=RigidTransform(translation=(2.0, 0.0, 0.0)),
        )])
        with pytest.raises(ConfigurationError) as exc_info:
            generate_scene(cfg)
        assert "'box'" in str(exc_info.value)
        assert "'prev'" in str(exc_info.value)

    def test_object_moving_with_camera_is_flagged(self):
        ego = RigidTransform(translation=(0.5, 0.0, 0.0))
        cfg = dyadic_config(ego_prev=ego, ego_next=ego, objects=[
            ObjectSpec(name="rider", rect=(4, 4, 8, 8), depth=8.0, motion_prev=ego, motion_next=ego),
        ])
        scene = generate_scene(cfg)
        assert scene.degenerate_objects == ["rider"]
        assert scene.gt_masks[1, 5, 5] == 1.0

    def test_independent_mover_not_flagged(self):
        scene = generate_scene(load_scene_config(FIXTURES / "one-mover-v1.cfg"))
        assert scene.degenerate_objects == []


# ───────────────────── self-consistency ─────────────────────

class TestSelfConsistency:

    def test_whole_pixel_shift_is_exact(self):
        scene = generate_scene(dyadic_config(ego_prev=RigidTransform(translation=(1.0, 0.0, 0.0))))
        img, state = synthesize_view(scene.gt_depth, scene.gt_masks, scene.gt_transforms["prev"],
                                     scene.frame_prev, scene.intrinsics)
        np.testing.assert_allclose(img[:, :-1], scene.frame_target[:, :-1], atol=1e-12)
        assert np.all(state[:, -1] == PixelState.OUT_OF_VIEW)
        assert np.all(scene.occluded["prev"][:, -1])
        assert not scene.occluded["prev"][:, :-1].any()

    @pytest.mark.parametrize("name", FIXTURE_NAMES)
    def test_fixture_resynthesis(self, name):
        scene = generate_scene(load_scene_config(FIXTURES / f"{name}.cfg"))
        for frame in SOURCES:
            err = resynthesis_error(scene, frame)
            assert err.size > 0
            assert err.mean() < 1e-3

    def test_disocclusion_is_marked(self):
        scene = generate_scene(load_scene_config(FIXTURES / "one-mover-v1.cfg"))
        # the box slides by more than the background, uncovering a strip beside it
        assert scene.occluded["prev"].any()
        assert scene.occluded["next"].any()
        assert not scene.occluded["prev"][0:4, 0:4].any()


# ───────────────────── oracle ─────────────────────

class TestOracleWarp:

    def test_identity_returns_source(self):
        src = np.random.default_rng(0).uniform(size=(5, 6))
        img, state = oracle_warp(np.full((5, 6), 3.0), np.ones((1, 5, 6)), [RigidTransform()], src,
                                 CameraIntrinsics(fx=4.0, fy=4.0, cx=2.5, cy=2.0))
        np.testing.assert_array_equal(img, src)
        assert np.all(state == PixelState.VALID)

    def test_constant_depth_translation_is_closed_form(self):
        # fx * tx / d = 2 px to the right
        src = np.random.default_rng(1).uniform(size=(4, 8))
        intr = CameraIntrinsics(fx=4.0, fy=4.0, cx=3.5, cy=1.5)
        t = RigidTransform(translation=(1.0, 0.0, 0.0))
        img, state = oracle_warp(np.full((4, 8), 2.0), np.ones((1, 4, 8)), [t], src, intr)
        np.testing.assert_array_equal(img[:, :-2], src[:, 2:])
        assert np.all(state[:, -2:] == PixelState.OUT_OF_VIEW)

    def test_shape_contracts(self):
        intr = CameraIntrinsics(fx=4.0, fy=4.0, cx=1.5, cy=1.5)
        with pytest.raises(ContractError):
            oracle_warp(np.ones((4, 4)), np.ones((1, 4, 5)), [RigidTransform()], np.zeros((4, 4)), intr)
        with pytest.raises(ContractError):
            oracle_warp(np.ones((4, 4)), np.ones((2, 4, 4)), [RigidTransform()], np.zeros((4, 4)), intr)


# ───────────────────── config files ─────────────────────

class TestSceneConfigFiles:

    def test_save_then_load(self, tmp_path):
        cfg = load_scene_config(FIXTURES / "two-movers-v1.cfg")
        save_scene_config(tmp_path / "copy.cfg", cfg)
        assert load_scene_config(tmp_path / "copy.cfg") == cfg

    def test_invalid_config_names_file(self, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text("width = 16\nheight = 12\nobject.a.rect = 0 0 4 4\nobject.a.depth = 30\n")
        with pytest.raises(ConfigurationError) as exc_info:
            load_scene_config(path)
        assert "bad.cfg" in str(exc_info.value)

    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "typo.cfg"
        path.write_text("widht = 16\n")
        with pytest.raises(ConfigurationError):
            load_scene_config(path)


# ───────────────────── fixtures ─────────────────────

class TestFixtureChecksums:

    def test_shipped_fixtures_verify(self):
        names = verify_fixture_checksums(str(FIXTURES))
        assert sorted(n[:-4] for n in names) == FIXTURE_NAMES

    def test_corrupted_fixture_detected(self, tmp_path):
        copy = tmp_path / "fixtures"
        shutil.copytree(FIXTURES, copy)
        with open(copy / "one-mover-v1.cfg", "a", encoding="utf-8") as f:
            f.write("# tampered\n")
        with pytest.raises(ConfigurationError) as exc_info:
            verify_fixture_checksums(str(copy))
        assert "one-mover-v1.cfg" in str(exc_info.value)

    def test_missing_fixture_detected(self, tmp_path):
        copy = tmp_path / "fixtures"
        shutil.copytree(FIXTURES, copy)
        (copy / "static-v1.cfg").unlink()
        with pytest.raises(ConfigurationError, match="missing"):
            verify_fixture_checksums(str(copy))

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(ConfigurationError, match="manifest"):
            verify_fixture_checksums(str(tmp_path))


# ───────────────────── export ─────────────────────

class TestExportScene:

    def test_writes_bundle_and_manifest(self, tmp_path):
        scene = generate_scene(load_scene_config(FIXTURES / "one-mover-v1.cfg"))
        digests = export_scene(scene, str(tmp_path / "out"))
        for name in ("frame_prev.pfm", "frame_target.pfm", "frame_next.pfm", "depth.pfm",
                     "masks.pgm", "masks.ppm", "scene.cfg"):
            assert (tmp_path / "out" / name).is_file()
            assert len(digests[name]) == 64
        manifest = json.loads((tmp_path / "out" / "manifest.json").read_text())
        assert manifest["components"] == ["background", "box"]
        assert manifest["files"] == digests
        assert manifest["transforms"]["prev"][1] == [0.0, 0.0, 0.0, 0.5, 0.0, 0.0]

    def test_export_is_byte_stable(self, tmp_path):
        cfg = load_scene_config(FIXTURES / "static-v1.cfg")
        a = export_scene(generate_scene(cfg), str(tmp_path / "a"))
        b = export_scene(generate_scene(cfg), str(tmp_path / "b"))
        assert a == b

    def test_exported_config_reloads(self, tmp_path):
        cfg = load_scene_config(FIXTURES / "crossing-v1.cfg")
        export_scene(generate_scene(cfg), str(tmp_path))
        assert load_scene_config(tmp_path / "scene.cfg") == cfg


@pytest.mark.skipif(not GOLDENS.is_file(), reason="golden digests not frozen (scripts/freeze_goldens.py)")
def test_renders_match_frozen_goldens(tmp_path):
    expected = defaultdict(dict)
    for line in GOLDENS.read_text().splitlines():
        if line.strip():
            digest, path = line.split()
            scene_name, fname = path.split("/")
            expected[scene_name][fname] = digest
    for scene_name, files in expected.items():
        scene = generate_scene(load_scene_config(FIXTURES / f"{scene_name}.cfg"))
        digests = export_scene(scene, str(tmp_path / scene_name))
        for fname, digest in files.items():
            assert digests[fname] == digest, f"{scene_name}/{fname} changed"
