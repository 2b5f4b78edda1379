"""
Freeze golden digests for the shipped fixtures.

Renders every scene listed in fixtures/checksums.sha256, exports it and
records the sha256 of each exported file in tests/goldens/scenes.sha256.
tests/test_synth.py compares fresh renders against that file and skips when
it does not exist.

Run again only when a rendering change is intended.

Usage:
    python scripts/freeze_goldens.py [--fixtures DIR] [--out FILE]
"""
import argparse
import os
import sys
import tempfile
from pathlib import Path

# Add the repository root to the path
sys.path.insert(0, str(Path(__file__).parent.parent))

from core.config import Config
from core.ui import UI
from modules.synth import export_scene, generate_scene, load_scene_config, verify_fixture_checksums

GOLDEN_FILE = Path(__file__).parent.parent / "tests" / "goldens" / "scenes.sha256"
# manifest.json and scene.cfg echo the inputs; the rendered payload is what we pin
PINNED = ("frame_prev.pfm", "frame_target.pfm", "frame_next.pfm", "depth.pfm", "masks.pgm")


def scene_digests(fixtures_dir: str):
    lines = []
    for name in verify_fixture_checksums(fixtures_dir):
        if not name.endswith(".cfg"):
            continue
        scene = generate_scene(load_scene_config(os.path.join(fixtures_dir, name)))
        with tempfile.TemporaryDirectory() as tmp:
            digests = export_scene(scene, tmp)
        lines += [f"{digests[fname]}  {scene.config.name}/{fname}" for fname in PINNED]
    return lines


def main():
    parser = argparse.ArgumentParser(description="Freeze golden digests of the rendered fixtures")
    parser.add_argument("--fixtures", default=Config.FIXTURES_DIR)
    parser.add_argument("--out", default=str(GOLDEN_FILE))
    args = parser.parse_args()

    lines = scene_digests(args.fixtures)
    os.makedirs(os.path.dirname(args.out), exist_ok=True)
    with open(args.out, "w", encoding="utf-8", newline="\n") as f:
        f.write("\n".join(lines) + "\n")
    UI.info(f"{len(lines)} digests written to {args.out}")


if __name__ == "__main__":
    main()
