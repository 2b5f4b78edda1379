from .scene import (
    SOURCES, SyntheticScene, export_scene, generate_scene, load_scene_config, oracle_warp, save_scene_config,
    verify_fixture_checksums,
)
from .textures import Texture, box_blur, make_texture
