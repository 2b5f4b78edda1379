from .camera import (
    angle_between, apply_transform, backproject, decode_pose, identity_transform, project,
    rotation_matrix, rotation_of,
)
