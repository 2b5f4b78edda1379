"""Tests for core.models — Pydantic configuration and result models."""

import math
import os

import pytest
from pydantic import ValidationError

from core.diffcore import Tape
from core.models import (
    DepthMetrics, ExperimentSpec, FitConfig, LossBreakdown, LossConfig, ObjectSpec, RigidTransform, SceneConfig,
)

FIXTURES = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "fixtures")


# ───────────────────── RigidTransform ─────────────────────

class TestRigidTransform:

    def test_parse_six_numbers(self):
        t = RigidTransform.parse("0 0.1 0 1.5 -2 0")
        assert t.axis_angle == (0.0, 0.1, 0.0)
        assert t.translation == (1.5, -2.0, 0.0)

    def test_format_parses_back(self):
        t = RigidTransform.from_vector([0.1, 0.2, 0.3, 1.0 / 3.0, 2.0, -7.5])
        assert RigidTransform.parse(t.format()) == t

    @pytest.mark.parametrize("text", ["0 0 0 0 0", "0 0 0 0 0 x"])
    def test_parse_rejects_bad_text(self, text):
        with pytest.raises(ValueError):
            RigidTransform.parse(text, "ego.prev")

    def test_non_finite_rejected(self):
        with pytest.raises(ValidationError):
            RigidTransform(translation=(math.inf, 0.0, 0.0))

    def test_frozen(self):
        t = RigidTransform()
        with pytest.raises(ValidationError):
            t.translation = (1.0, 0.0, 0.0)

    def test_keeps_tape_variables(self):
        tape = Tape()
        x = tape.input(0.25)
        t = RigidTransform(translation=(x, 0.0, 0.0))
        assert t.translation[0] is x
        assert t.to_vector()[3] == 0.25


# ───────────────────── losses ─────────────────────

class TestLossConfig:

    def test_defaults(self):
        cfg = LossConfig()
        assert cfg.alpha == 0.85
        assert cfg.scale_factors == (1.0,)
        assert cfg.use_depth_ordering and not cfg.auto_mask

    def test_scales_sorted_descending(self):
        assert LossConfig(scale_factors=(0.25, 1.0, 0.5)).scale_factors == (1.0, 0.5, 0.25)

    @pytest.mark.parametrize("scales", [(), (0.3,), (1.0, 1.0)])
    def test_bad_scales(self, scales):
        with pytest.raises(ValidationError):
            LossConfig(scale_factors=scales)

    def test_lambda_grows_with_scale(self):
        cfg = LossConfig()
        assert cfg.lambda_for(0.5) == pytest.approx(0.0005)


class TestLossBreakdown:

    def test_non_finite_component_rejected(self):
        with pytest.raises(ValidationError):
            LossBreakdown(total=math.nan, photometric=0.0, smoothness=0.0, valid_pixel_count=1)


class TestDepthMetricsModel:

    def test_deltas_must_be_ordered(self):
        with pytest.raises(ValidationError):
            DepthMetrics(abs_rel=0, sq_rel=0, rmse=0, rmse_log=0, delta1=0.9, delta2=0.5, delta3=1.0)

    def test_alias_dump(self):
        m = DepthMetrics(abs_rel=0.1, sq_rel=0, rmse=0, rmse_log=0, delta1=1, delta2=1, delta3=1)
        assert m.model_dump(by_alias=True)["Abs Rel"] == 0.1


# ───────────────────── scenes ─────────────────────

class TestSceneConfig:

    def test_object_behind_background_rejected(self):
        with pytest.raises(ValidationError, match="in front of the background"):
            SceneConfig(objects=[ObjectSpec(name="a", rect=(0, 0, 4, 4), depth=25.0)])

    def test_rect_outside_image_rejected(self):
        with pytest.raises(ValidationError, match="outside"):
            SceneConfig(width=8, height=8, objects=[ObjectSpec(name="a", rect=(4, 4, 9, 8), depth=5.0)])

    def test_duplicate_names_rejected(self):
        obj = ObjectSpec(name="a", rect=(0, 0, 4, 4), depth=5.0)
        with pytest.raises(ValidationError, match="duplicate"):
            SceneConfig(objects=[obj, obj])

    def test_empty_rect_rejected(self):
        with pytest.raises(ValidationError):
            ObjectSpec(name="a", rect=(4, 0, 4, 4), depth=5.0)

    def test_from_keyvalue(self):
        cfg = SceneConfig.from_keyvalue({
            "width": "16", "height": "12", "fx": "10", "fy": "10", "cx": "7.5", "cy": "5.5",
            "object.box.rect": "2 2 6 6", "object.box.depth": "5", "object.box.prev": "0 0 0 0.1 0 0",
        })
        assert cfg.n_components == 2
        assert cfg.objects[0].motion_prev.translation == (0.1, 0.0, 0.0)
        assert cfg.intrinsics.cx == 7.5

    @pytest.mark.parametrize("key", ["colour", "object.box", "object.box.speed"])
    def test_unknown_keys(self, key):
        with pytest.raises(ValueError):
            SceneConfig.from_keyvalue({key: "1"})

    def test_keyvalue_round_trip(self):
        cfg = SceneConfig(name="rt", objects=[ObjectSpec(name="b", rect=(1, 2, 5, 6), depth=3.25)],
                          ego_next=RigidTransform(translation=(0.1, 0.0, 0.0)))
        assert SceneConfig.from_keyvalue(cfg.to_keyvalue()) == cfg


# ───────────────────── experiments ─────────────────────

class TestExperimentSpec:

    def test_relative_paths_resolved_against_spec_dir(self):
        spec = ExperimentSpec.from_keyvalue(
            {"scenes": "static-v1.cfg one-mover-v1.cfg", "k": "1 2", "out": "../runs/x"}, base_dir=FIXTURES)
        assert spec.scenes == [os.path.join(FIXTURES, "static-v1.cfg"), os.path.join(FIXTURES, "one-mover-v1.cfg")]
        assert spec.k_values == [1, 2]
        assert spec.out == os.path.normpath(os.path.join(FIXTURES, "..", "runs", "x"))

    def test_flags_and_lists(self):
        spec = ExperimentSpec.from_keyvalue(
            {"scenes": "static-v1.cfg", "k": "3", "ordering": "on off", "auto_mask": "yes", "seeds": "1 2",
             "steps": "10"}, base_dir=FIXTURES)
        assert spec.ordering == [True, False]
        assert spec.auto_mask is True
        assert spec.seeds == [1, 2]
        assert spec.steps == 10

    def test_schedule_and_engine_keys(self):
        spec = ExperimentSpec.from_keyvalue(
            {"scenes": "static-v1.cfg", "k": "1", "schedule": "reference", "engine": "tape"}, base_dir=FIXTURES)
        assert spec.schedule == "reference" and spec.engine == "tape"
        with pytest.raises(ValidationError):
            ExperimentSpec.from_keyvalue({"scenes": "static-v1.cfg", "k": "1", "engine": "gpu"}, base_dir=FIXTURES)

    def test_missing_scene(self, tmp_path):
        with pytest.raises(ValidationError, match="not found"):
            ExperimentSpec.from_keyvalue({"scenes": "ghost.cfg", "k": "1"}, base_dir=str(tmp_path))

    def test_k_must_be_positive(self):
        with pytest.raises(ValidationError):
            ExperimentSpec.from_keyvalue({"scenes": "static-v1.cfg", "k": "0"}, base_dir=FIXTURES)

    def test_unknown_key(self):
        with pytest.raises(ValueError):
            ExperimentSpec.from_keyvalue({"scenes": "static-v1.cfg", "k": "1", "epochs": "3"}, base_dir=FIXTURES)

    def test_bad_flag(self):
        with pytest.raises(ValueError):
            ExperimentSpec.from_keyvalue({"scenes": "static-v1.cfg", "k": "1", "ordering": "maybe"},
                                         base_dir=FIXTURES)


class TestFitConfig:

    def test_defaults(self):
        cfg = FitConfig()
        assert cfg.K == 1 and cfg.lr == 0.01 and cfg.init == "default"
        assert cfg.loss == LossConfig()

    def test_rejects_zero_k(self):
        with pytest.raises(ValidationError):
            FitConfig(K=0)

    def test_reference_schedule(self):
        cfg = FitConfig.with_schedule("reference", K=2, steps=100)
        assert cfg.K == 2 and cfg.engine == "dense"
        assert cfg.lr_at(0) == pytest.approx(1e-4)
        assert cfg.lr_at(74) == pytest.approx(1e-4)
        assert cfg.lr_at(75) == pytest.approx(1e-5)
        assert all(rate == pytest.approx(1e-4) for rate in cfg.block_rates(0).values())

    def test_explicit_fields_override_schedule(self):
        cfg = FitConfig.with_schedule("reference", lr=3e-4)
        assert cfg.lr == 3e-4
        assert cfg.lr_scale["mask_logits"] == 1.0

    def test_direct_schedule_is_the_default_config(self):
        assert FitConfig.with_schedule("direct", K=3).model_dump() == FitConfig(K=3).model_dump()

    def test_unknown_schedule(self):
        with pytest.raises(ValueError, match="unknown schedule"):
            FitConfig.with_schedule("cosine")
