"""
Pinhole camera and SE(3) helpers.

All functions take plain floats or tape Variables. Transforms map
target-frame points into a source frame, which is the direction inverse
warping needs: a target pixel is lifted, moved, and looked up in the source.
"""

import math
from typing import Optional, Sequence, Tuple

import numpy as np

from core.config import Config
from core.diffcore import add, div, dot, mul, sin, cos, sqrt, sub, value_of
from core.errors import DomainError
from core.models import CameraIntrinsics, PixelCoord, Point3, RigidTransform

Rotation = Tuple[tuple, tuple, tuple]


def backproject(p: PixelCoord, depth, intr: CameraIntrinsics) -> Point3:
    """depth * K^-1 [u, v, 1]."""
    d = value_of(depth)
    if not d > 0:
        raise DomainError(f"depth must be positive, got {d}")
    return Point3(
        mul((p.u - intr.cx) / intr.fx, depth),
        mul((p.v - intr.cy) / intr.fy, depth),
        depth,
    )


def project(x: Point3, intr: CameraIntrinsics) -> Optional[PixelCoord]:
    """Perspective projection; None when the point is at or behind the camera plane."""
    if value_of(x.z) <= Config.EPS_Z:
        return None
    return PixelCoord(
        add(mul(intr.fx, div(x.x, x.z)), intr.cx),
        add(mul(intr.fy, div(x.y, x.z)), intr.cy),
    )


def rotation_of(t: RigidTransform) -> Rotation:
    """Rodrigues: R = I + A [v]x + B [v]x^2 with A = sin(th)/th, B = (1 - cos(th))/th^2."""
    v0, v1, v2 = t.axis_angle
    theta2 = dot(t.axis_angle, t.axis_angle)
    if value_of(theta2) < Config.RODRIGUES_TAYLOR_BELOW ** 2:
        # second-order series, finite gradients at the identity
        a = sub(1.0, div(theta2, 6.0))
        b = sub(0.5, div(theta2, 24.0))
    else:
        theta = sqrt(theta2)
        a = div(sin(theta), theta)
        b = div(sub(1.0, cos(theta)), theta2)
    c = sub(1.0, mul(b, theta2))
    av0, av1, av2 = mul(a, v0), mul(a, v1), mul(a, v2)
    bv0, bv1, bv2 = mul(b, v0), mul(b, v1), mul(b, v2)
    return (
        (add(c, mul(bv0, v0)), sub(mul(bv0, v1), av2), add(mul(bv0, v2), av1)),
        (add(mul(bv1, v0), av2), add(c, mul(bv1, v1)), sub(mul(bv1, v2), av0)),
        (sub(mul(bv2, v0), av1), add(mul(bv2, v1), av0), add(c, mul(bv2, v2))),
    )


def apply_transform(t: RigidTransform, x: Point3, rotation: Optional[Rotation] = None) -> Point3:
    """R x + t; pass a precomputed rotation when applying one transform to many points."""
    r = rotation if rotation is not None else rotation_of(t)
    tx, ty, tz = t.translation
    return Point3(add(dot(r[0], x), tx), add(dot(r[1], x), ty), add(dot(r[2], x), tz))


def decode_pose(raw: Sequence) -> RigidTransform:
    """Scale a raw 6-vector (axis-angle, translation) by the pose scale."""
    if len(raw) != 6:
        raise DomainError(f"pose vector needs 6 entries, got {len(raw)}")
    scaled = [mul(Config.POSE_SCALE, r) for r in raw]
    return RigidTransform(axis_angle=tuple(scaled[:3]), translation=tuple(scaled[3:]))


def identity_transform() -> RigidTransform:
    return RigidTransform()


def rotation_matrix(t: RigidTransform) -> np.ndarray:
    """Float 3x3 rotation, same formula as rotation_of."""
    return np.array(
        [[float(value_of(r)) for r in row] for row in rotation_of(_float_copy(t))],
        dtype=float,
    )


def _float_copy(t: RigidTransform) -> RigidTransform:
    return RigidTransform.from_vector(t.to_vector())


def angle_between(a: Sequence[float], b: Sequence[float]) -> float:
    """Angle in degrees between two 3-vectors; 0 when either is zero."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return 0.0
    c = float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))
    return math.degrees(math.acos(c))
