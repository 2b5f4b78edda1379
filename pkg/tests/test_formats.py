"""Tests for core.formats — key-value configs, JSON lines and image files."""

import json

import numpy as np
import pytest

from core.errors import ConfigurationError
from core.formats import (
    append_jsonl, dumps_stable, format_keyvalue, parse_keyvalue, read_jsonl, read_keyvalue, read_pfm,
    read_pgm_bundle, read_ppm, write_json, write_keyvalue, write_pfm, write_pgm_bundle, write_ppm,
)


# ───────────────────── key-value ─────────────────────

class TestKeyValue:

    def test_parses_comments_and_blank_lines(self):
        text = "# header\n\nwidth = 32   # inline\nname=scene-a\n"
        assert parse_keyvalue(text) == {"width": "32", "name": "scene-a"}

    def test_value_may_contain_equals(self):
        assert parse_keyvalue("expr = a=b")["expr"] == "a=b"

    def test_duplicate_key_rejected(self):
        with pytest.raises(ConfigurationError) as exc_info:
            parse_keyvalue("k = 1\nk = 2\n", "x.cfg")
        assert "x.cfg:2" in str(exc_info.value)

    def test_missing_equals_rejected(self):
        with pytest.raises(ConfigurationError):
            parse_keyvalue("just words\n")

    def test_write_then_read(self, tmp_path):
        kv = {"a": "1", "ego.prev": "0 0 0 0.2 0 0"}
        path = tmp_path / "c.cfg"
        write_keyvalue(path, kv, header="two lines\nof header")
        assert read_keyvalue(path) == kv
        assert path.read_text().startswith("# two lines\n# of header\n")

    def test_format_preserves_order(self):
        assert format_keyvalue({"z": "1", "a": "2"}) == "z = 1\na = 2\n"


# ───────────────────── JSON ─────────────────────

class TestJson:

    def test_stable_dump_sorts_keys(self):
        assert dumps_stable({"b": 1, "a": 2}) == dumps_stable({"a": 2, "b": 1})
        assert dumps_stable({}).endswith("\n")

    def test_jsonl_append_and_read(self, tmp_path):
        path = tmp_path / "log.jsonl"
        append_jsonl(path, {"step": 0, "total": 1.5})
        append_jsonl(path, {"step": 1, "total": 1.25})
        assert [r["step"] for r in read_jsonl(path)] == [0, 1]
        assert len(path.read_text().splitlines()) == 2

    def test_write_json(self, tmp_path):
        write_json(tmp_path / "o.json", {"x": [1, 2]})
        assert json.loads((tmp_path / "o.json").read_text()) == {"x": [1, 2]}


# ───────────────────── netpbm ─────────────────────

class TestNetpbm:

    def test_ppm_header_and_size(self, tmp_path):
        path = tmp_path / "img.ppm"
        write_ppm(path, np.zeros((2, 3, 3)))
        data = path.read_bytes()
        assert data.startswith(b"P6\n3 2\n255\n")
        assert len(data) == len(b"P6\n3 2\n255\n") + 2 * 3 * 3

    def test_ppm_read_back(self, tmp_path):
        img = np.random.default_rng(0).uniform(size=(4, 5, 3))
        write_ppm(tmp_path / "a.ppm", img)
        np.testing.assert_allclose(read_ppm(tmp_path / "a.ppm"), img, atol=0.5 / 255 + 1e-12)

    def test_grayscale_ppm_is_replicated(self, tmp_path):
        write_ppm(tmp_path / "g.ppm", np.full((2, 2), 1.0))
        assert np.all(read_ppm(tmp_path / "g.ppm") == 1.0)

    def test_values_are_clipped(self, tmp_path):
        write_ppm(tmp_path / "c.ppm", np.array([[[-1.0, 0.5, 2.0]]]))
        back = read_ppm(tmp_path / "c.ppm")
        assert back[0, 0, 0] == 0.0 and back[0, 0, 2] == 1.0

    def test_pgm_bundle_keeps_page_count(self, tmp_path):
        pages = [np.full((3, 2), v) for v in (0.0, 0.5, 1.0)]
        write_pgm_bundle(tmp_path / "b.pgm", pages)
        back = read_pgm_bundle(tmp_path / "b.pgm")
        assert len(back) == 3
        assert back[2].shape == (3, 2)
        assert back[1][0, 0] == pytest.approx(128 / 255)

    def test_ppm_is_not_a_bundle(self, tmp_path):
        write_ppm(tmp_path / "x.ppm", np.zeros((1, 1, 3)))
        with pytest.raises(ConfigurationError):
            read_pgm_bundle(tmp_path / "x.ppm")

    def test_truncated_file(self, tmp_path):
        path = tmp_path / "t.pgm"
        path.write_bytes(b"P5\n4 4\n255\n" + b"\x00" * 3)
        with pytest.raises(ConfigurationError):
            read_pgm_bundle(path)


# ───────────────────── PFM ─────────────────────

class TestPfm:

    def test_grayscale_is_float32_exact(self, tmp_path):
        arr = np.arange(12, dtype=float).reshape(3, 4) / 7.0
        write_pfm(tmp_path / "d.pfm", arr)
        np.testing.assert_array_equal(read_pfm(tmp_path / "d.pfm"), arr.astype(np.float32).astype(float))

    def test_rows_stored_bottom_up(self, tmp_path):
        arr = np.array([[1.0], [2.0]])
        write_pfm(tmp_path / "r.pfm", arr)
        data = (tmp_path / "r.pfm").read_bytes()
        assert data.startswith(b"Pf\n1 2\n-1.0\n")
        payload = np.frombuffer(data[len(b"Pf\n1 2\n-1.0\n"):], dtype="<f4")
        np.testing.assert_array_equal(payload, [2.0, 1.0])

    def test_color(self, tmp_path):
        arr = np.random.default_rng(1).uniform(size=(2, 3, 3))
        write_pfm(tmp_path / "c.pfm", arr)
        np.testing.assert_allclose(read_pfm(tmp_path / "c.pfm"), arr, rtol=1e-7)

    def test_unsupported_shape(self, tmp_path):
        with pytest.raises(ValueError):
            write_pfm(tmp_path / "bad.pfm", np.zeros((2, 2, 2)))
