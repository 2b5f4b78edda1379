import math
import os
from typing import Any, Dict, List, Literal, NamedTuple, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from core.config import Config


def _as_scalar(x: Any) -> Any:
    """Keep tape Variables as-is, coerce everything else to float."""
    if hasattr(x, "tape"):
        if not math.isfinite(x.value):
            raise ValueError("non-finite entry")
        return x
    x = float(x)
    if not math.isfinite(x):
        raise ValueError("non-finite entry")
    return x


def _parse_floats(text: str, n: int, key: str) -> List[float]:
    try:
        out = [float(t) for t in text.split()]
    except ValueError:
        raise ValueError(f"{key}: expected {n} numbers, got {text!r}")
    if len(out) != n:
        raise ValueError(f"{key}: expected {n} numbers, got {len(out)}")
    return out


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("on", "true", "yes", "1"):
        return True
    if t in ("off", "false", "no", "0"):
        return False
    raise ValueError(f"expected on/off, got {text!r}")


# ───────────────────── per-pixel value types ─────────────────────

class Point3(NamedTuple):
    """Camera-frame 3D point; entries may be floats or tape Variables."""
    x: Any
    y: Any
    z: Any


class PixelCoord(NamedTuple):
    """Continuous pixel position; integer coordinates are pixel centers."""
    u: Any
    v: Any


# ───────────────────── geometry ─────────────────────

class CameraIntrinsics(BaseModel):
    model_config = ConfigDict(frozen=True)

    fx: float = Field(..., gt=0)
    fy: float = Field(..., gt=0)
    cx: float
    cy: float


class RigidTransform(BaseModel):
    """[R, t] in SE(3): axis-angle rotation (radians * unit axis) plus translation."""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    axis_angle: Tuple[Any, Any, Any] = (0.0, 0.0, 0.0)
    translation: Tuple[Any, Any, Any] = (0.0, 0.0, 0.0)

    @field_validator("axis_angle", "translation")
    @classmethod
    def _finite(cls, v):
        return tuple(_as_scalar(x) for x in v)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls()

    @classmethod
    def from_vector(cls, vec) -> "RigidTransform":
        vec = list(vec)
        if len(vec) != 6:
            raise ValueError(f"expected 6 entries (axis-angle, translation), got {len(vec)}")
        return cls(axis_angle=tuple(vec[:3]), translation=tuple(vec[3:]))

    @classmethod
    def parse(cls, text: str, key: str = "transform") -> "RigidTransform":
        return cls.from_vector(_parse_floats(text, 6, key))

    def to_vector(self) -> List[float]:
        return [float(getattr(x, "value", x)) for x in (*self.axis_angle, *self.translation)]

    def format(self) -> str:
        return " ".join(repr(v) for v in self.to_vector())


# ───────────────────── diffcore ─────────────────────

class GradReport(BaseModel):
    max_relative_error: float = Field(..., ge=0)
    worst_coordinate: int
    analytic: float
    numeric: float


# ───────────────────── losses ─────────────────────

_ALLOWED_SCALES = set(Config.SCALES)


class LossConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    alpha: float = Field(Config.SSIM_ALPHA, ge=0, le=1)
    lambda_base: float = Field(Config.LAMBDA_BASE, gt=0)
    scale_factors: Tuple[float, ...] = (1.0,)
    use_depth_ordering: bool = True
    mask_smooth_weight: float = Field(0.0, ge=0)
    auto_mask: bool = False

    @field_validator("scale_factors")
    @classmethod
    def _known_scales(cls, v):
        if not v:
            raise ValueError("at least one scale factor is required")
        for s in v:
            if s not in _ALLOWED_SCALES:
                raise ValueError(f"scale {s} not in {sorted(_ALLOWED_SCALES, reverse=True)}")
        if len(set(v)) != len(v):
            raise ValueError("duplicate scale factors")
        return tuple(sorted(v, reverse=True))

    def lambda_for(self, scale: float) -> float:
        return self.lambda_base * scale


class LossBreakdown(BaseModel):
    step: Optional[int] = None
    total: float
    photometric: float
    smoothness: float
    mask_smoothness: float = 0.0
    valid_pixel_count: int = Field(..., ge=0)

    @field_validator("total", "photometric", "smoothness", "mask_smoothness")
    @classmethod
    def _finite(cls, v):
        if not math.isfinite(v):
            raise ValueError("loss component is not finite")
        return v


# ───────────────────── evaluation ─────────────────────

class DepthMetrics(BaseModel):
    model_config = ConfigDict(populate_by_name=True)

    abs_rel: float = Field(..., ge=0, alias="Abs Rel")
    sq_rel: float = Field(..., ge=0, alias="Sq Rel")
    rmse: float = Field(..., ge=0, alias="RMSE")
    rmse_log: float = Field(..., ge=0, alias="RMSE_log")
    delta1: float = Field(..., ge=0, le=1, alias="delta<1.25")
    delta2: float = Field(..., ge=0, le=1, alias="delta<1.25^2")
    delta3: float = Field(..., ge=0, le=1, alias="delta<1.25^3")

    @model_validator(mode="after")
    def _ordered_deltas(self):
        if not (self.delta1 <= self.delta2 <= self.delta3):
            raise ValueError("delta thresholds must be non-decreasing")
        return self

    @staticmethod
    def csv_header() -> List[str]:
        return ["Abs Rel", "Sq Rel", "RMSE", "RMSE_log", "delta<1.25", "delta<1.25^2", "delta<1.25^3"]

    def to_csv_row(self, precision: int = 6) -> List[str]:
        vals = [self.abs_rel, self.sq_rel, self.rmse, self.rmse_log, self.delta1, self.delta2, self.delta3]
        return [f"{v:.{precision}f}" for v in vals]


# ───────────────────── synthetic scenes ─────────────────────

class ObjectSpec(BaseModel):
    """A fronto-parallel textured rectangle in the target frame."""
    name: str = Field(..., pattern=r"^[A-Za-z0-9_-]+$")
    rect: Tuple[int, int, int, int]  # x0, y0, x1, y1 (half-open pixel box)
    depth: float = Field(..., gt=0)
    motion_prev: RigidTransform = RigidTransform()
    motion_next: RigidTransform = RigidTransform()

    @field_validator("rect")
    @classmethod
    def _non_empty(cls, v):
        x0, y0, x1, y1 = v
        if x1 <= x0 or y1 <= y0:
            raise ValueError(f"empty rect {v}")
        return v


class SceneConfig(BaseModel):
    name: str = "scene"
    width: int = Field(64, ge=4)
    height: int = Field(48, ge=4)
    intrinsics: CameraIntrinsics = CameraIntrinsics(fx=60.0, fy=60.0, cx=31.5, cy=23.5)
    background_depth: float = Field(20.0, gt=0)
    objects: List[ObjectSpec] = []
    ego_prev: RigidTransform = RigidTransform()
    ego_next: RigidTransform = RigidTransform()
    texture_seed: int = 0
    texture_style: Literal["smooth-noise", "checker"] = "smooth-noise"
    texture_cell: int = Field(8, ge=2)
    blur_radius: int = Field(3, ge=0)
    channels: Literal[1, 3] = 1

    @model_validator(mode="after")
    def _objects_fit(self):
        names = set()
        for obj in self.objects:
            if obj.name in names:
                raise ValueError(f"duplicate object name '{obj.name}'")
            names.add(obj.name)
            if obj.depth >= self.background_depth:
                raise ValueError(f"object '{obj.name}' must be in front of the background "
                                 f"({obj.depth} >= {self.background_depth})")
            x0, y0, x1, y1 = obj.rect
            if x0 < 0 or y0 < 0 or x1 > self.width or y1 > self.height:
                raise ValueError(f"object '{obj.name}' rect {obj.rect} outside "
                                 f"{self.width}x{self.height} image")
        return self

    @property
    def n_components(self) -> int:
        return 1 + len(self.objects)

    # --- flat key-value schema ---

    @classmethod
    def from_keyvalue(cls, kv: dict) -> "SceneConfig":
        data = dict(kv)
        fields: dict = {}
        objects: dict = {}
        intr = {}
        for key, raw in data.items():
            if key.startswith("object."):
                parts = key.split(".")
                if len(parts) != 3:
                    raise ValueError(f"bad object key {key!r}; expected object.<name>.<field>")
                _, name, attr = parts
                obj = objects.setdefault(name, {"name": name})
                if attr == "rect":
                    obj["rect"] = tuple(int(v) for v in _parse_floats(raw, 4, key))
                elif attr == "depth":
                    obj["depth"] = float(raw)
                elif attr in ("prev", "next"):
                    obj[f"motion_{attr}"] = RigidTransform.parse(raw, key)
                else:
                    raise ValueError(f"unknown object field {key!r}")
            elif key in ("fx", "fy", "cx", "cy"):
                intr[key] = float(raw)
            elif key in ("ego.prev", "ego.next"):
                fields[key.replace(".", "_")] = RigidTransform.parse(raw, key)
            elif key in ("width", "height", "texture_seed", "texture_cell", "blur_radius", "channels"):
                fields[key] = int(raw)
            elif key == "background_depth":
                fields[key] = float(raw)
            elif key in ("name", "texture_style"):
                fields[key] = raw.strip()
            else:
                raise ValueError(f"unknown scene key {key!r}")
        if intr:
            fields["intrinsics"] = CameraIntrinsics(**intr)
        fields["objects"] = [ObjectSpec(**o) for o in objects.values()]
        return cls(**fields)

    def to_keyvalue(self) -> dict:
        kv = {
            "name": self.name,
            "width": str(self.width),
            "height": str(self.height),
            "fx": repr(self.intrinsics.fx),
            "fy": repr(self.intrinsics.fy),
            "cx": repr(self.intrinsics.cx),
            "cy": repr(self.intrinsics.cy),
            "background_depth": repr(self.background_depth),
            "ego.prev": self.ego_prev.format(),
            "ego.next": self.ego_next.format(),
            "texture_seed": str(self.texture_seed),
            "texture_style": self.texture_style,
            "texture_cell": str(self.texture_cell),
            "blur_radius": str(self.blur_radius),
            "channels": str(self.channels),
        }
        for obj in self.objects:
            kv[f"object.{obj.name}.rect"] = " ".join(str(v) for v in obj.rect)
            kv[f"object.{obj.name}.depth"] = repr(obj.depth)
            kv[f"object.{obj.name}.prev"] = obj.motion_prev.format()
            kv[f"object.{obj.name}.next"] = obj.motion_next.format()
        return kv


# ───────────────────── optimization ─────────────────────

class FitConfig(BaseModel):
    K: int = Field(1, ge=1)
    steps: int = Field(500, ge=1)
    lr: float = Field(Config.FIT_LR, gt=0)
    lr_drop_to: Optional[float] = Field(None, gt=0)
    lr_drop_at: float = Field(Config.FIT_LR_DROP_AT, gt=0, le=1)
    beta1: float = Field(Config.ADAM_BETA1, ge=0, lt=1)
    beta2: float = Field(Config.ADAM_BETA2, ge=0, lt=1)
    epsilon: float = Field(Config.ADAM_EPS, gt=0)
    loss: LossConfig = LossConfig()
    # perturbed: every component starts at the ego motion plus pose noise, depth flat
    init: Literal["default", "ground-truth", "perturbed"] = "default"
    init_depth: float = Field(Config.FIT_INIT_DEPTH, gt=0)
    pose_noise_rotation: float = Field(0.0, ge=0)      # radians
    pose_noise_translation: float = Field(0.0, ge=0)   # scene units
    seed: int = 0
    checkpoint_every: int = Field(0, ge=0)
    # "dense" evaluates the objective on whole arrays; "tape" records every scalar
    engine: Literal["dense", "tape"] = "dense"
    # per-block multipliers on the scheduled rate; pose blocks live in raw
    # (pre-scale) units, so they need larger steps than log-depth
    lr_scale: Dict[str, float] = {
        "log_depth": 1.0, "mask_logits": 10.0, "pose_prev": 20.0, "pose_next": 20.0,
    }

    @field_validator("lr_scale")
    @classmethod
    def _positive_scales(cls, v):
        for name, s in v.items():
            if not s > 0:
                raise ValueError(f"lr scale for '{name}' must be positive, got {s}")
        return v

    def lr_at(self, step: int) -> float:
        """Learning rate for a zero-based step index."""
        drop_to = self.lr_drop_to if self.lr_drop_to is not None else self.lr * Config.FIT_LR_DROP_FACTOR
        if step >= int(math.floor(self.lr_drop_at * self.steps)):
            return drop_to
        return self.lr

    def block_rates(self, step: int) -> Dict[str, float]:
        base = self.lr_at(step)
        return {name: base * s for name, s in self.lr_scale.items()}

    @classmethod
    def with_schedule(cls, name: str, **fields) -> "FitConfig":
        """A config on a named rate schedule; explicit fields override the schedule."""
        if name not in SCHEDULES:
            raise ValueError(f"unknown schedule {name!r}; choose from {sorted(SCHEDULES)}")
        return cls(**{**SCHEDULES[name], **fields})


# "direct" suits free per-pixel variables; "reference" is the plain Adam schedule
# (1e-4 dropping tenfold) with one rate for every block
SCHEDULES: Dict[str, Dict[str, Any]] = {
    "direct": {},
    "reference": {
        "lr": Config.ADAM_LR,
        "lr_drop_to": Config.ADAM_LR * Config.FIT_LR_DROP_FACTOR,
        "lr_scale": {"log_depth": 1.0, "mask_logits": 1.0, "pose_prev": 1.0, "pose_next": 1.0},
    },
}


# ───────────────────── experiments ─────────────────────

class ExperimentSpec(BaseModel):
    scenes: List[str] = Field(..., min_length=1)
    k_values: List[int] = Field(..., min_length=1)
    steps: int = Field(300, ge=1)
    ordering: List[bool] = [True]
    auto_mask: bool = False
    seeds: List[int] = [0]
    workers: int = Field(1, ge=1)
    out: Optional[str] = None
    pose_noise_rotation: float = Field(0.0, ge=0)
    pose_noise_translation: float = Field(0.0, ge=0)
    schedule: Literal["direct", "reference"] = "direct"
    engine: Literal["dense", "tape"] = "dense"

    @field_validator("k_values")
    @classmethod
    def _positive_k(cls, v):
        for k in v:
            if k < 1:
                raise ValueError(f"K must be >= 1, got {k}")
        return v

    @field_validator("ordering", "seeds")
    @classmethod
    def _non_empty(cls, v):
        if not v:
            raise ValueError("list must not be empty")
        return v

    @model_validator(mode="after")
    def _scenes_exist(self):
        missing = [s for s in self.scenes if not os.path.isfile(s)]
        if missing:
            raise ValueError(f"scene config(s) not found: {', '.join(missing)}")
        return self

    @classmethod
    def from_keyvalue(cls, kv: dict, base_dir: str = ".") -> "ExperimentSpec":
        fields: dict = {}
        for key, raw in kv.items():
            if key == "scenes":
                paths = []
                for p in raw.split():
                    if not os.path.isabs(p) and not os.path.isfile(p):
                        candidate = os.path.join(base_dir, p)
                        p = candidate if os.path.isfile(candidate) else p
                    paths.append(p)
                fields["scenes"] = paths
            elif key == "k":
                fields["k_values"] = [int(t) for t in raw.split()]
            elif key == "seeds":
                fields["seeds"] = [int(t) for t in raw.split()]
            elif key == "ordering":
                fields["ordering"] = [_parse_bool(t) for t in raw.split()]
            elif key == "auto_mask":
                fields["auto_mask"] = _parse_bool(raw)
            elif key in ("steps", "workers"):
                fields[key] = int(raw)
            elif key in ("pose_noise_rotation", "pose_noise_translation"):
                fields[key] = float(raw)
            elif key in ("schedule", "engine"):
                fields[key] = raw.strip()
            elif key == "out":
                out = raw.strip()
                fields["out"] = out if os.path.isabs(out) else os.path.normpath(os.path.join(base_dir, out))
            else:
                raise ValueError(f"unknown experiment key {key!r}")
        fields.setdefault("k_values", [])
        fields.setdefault("scenes", [])
        return cls(**fields)
