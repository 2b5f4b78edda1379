"""
On-disk formats: netpbm images (PPM/PGM), PFM float maps, flat key-value
config files and JSON lines.
"""

import json
import os
import re
from typing import Dict, Iterable, List, Union

import numpy as np

from core.errors import ConfigurationError

PathLike = Union[str, os.PathLike]


# ───────────────────── key-value config ─────────────────────

def parse_keyvalue(text: str, source: str = "<string>") -> Dict[str, str]:
    out: Dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"{source}:{lineno}: expected 'key = value', got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigurationError(f"{source}:{lineno}: empty key")
        if key in out:
            raise ConfigurationError(f"{source}:{lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def read_keyvalue(path: PathLike) -> Dict[str, str]:
    with open(path, "r", encoding="utf-8") as f:
        return parse_keyvalue(f.read(), str(path))


def format_keyvalue(kv: Dict[str, str], header: str = "") -> str:
    lines = [f"# {h}" for h in header.splitlines()] if header else []
    lines += [f"{k} = {v}" for k, v in kv.items()]
    return "\n".join(lines) + "\n"


def write_keyvalue(path: PathLike, kv: Dict[str, str], header: str = ""):
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(format_keyvalue(kv, header))


# ───────────────────── JSON ─────────────────────

def dumps_stable(obj) -> str:
    """Byte-stable JSON for reports that must diff cleanly between runs."""
    return json.dumps(obj, sort_keys=True, indent=2, ensure_ascii=True) + "\n"


def write_json(path: PathLike, obj):
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(dumps_stable(obj))


def append_jsonl(path: PathLike, record: dict):
    with open(path, "a", encoding="utf-8", newline="\n") as f:
        f.write(json.dumps(record, sort_keys=True) + "\n")


def read_jsonl(path: PathLike) -> List[dict]:
    with open(path, "r", encoding="utf-8") as f:
        return [json.loads(line) for line in f if line.strip()]


# ───────────────────── netpbm ─────────────────────

_HEADER_TOKEN = re.compile(rb"\s*(#[^\n]*\n\s*)*(\S+)")


def _to_bytes(img: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(img, dtype=float) * 255.0), 0, 255).astype(np.uint8)


def _write_netpbm(f, magic: bytes, img: np.ndarray):
    h, w = img.shape[:2]
    f.write(magic + b"\n%d %d\n255\n" % (w, h))
    f.write(_to_bytes(img).tobytes())


def write_ppm(path: PathLike, img: np.ndarray):
    """8-bit binary PPM (P6) from an (H, W, 3) or (H, W) array in [0, 1]."""
    img = np.asarray(img, dtype=float)
    if img.ndim == 2:
        img = np.repeat(img[..., None], 3, axis=2)
    elif img.shape[2] == 1:
        img = np.repeat(img, 3, axis=2)
    with open(path, "wb") as f:
        _write_netpbm(f, b"P6", img)


def write_pgm_bundle(path: PathLike, pages: Iterable[np.ndarray]):
    """Concatenated P5 images, one per page (netpbm multi-image file)."""
    with open(path, "wb") as f:
        for page in pages:
            _write_netpbm(f, b"P5", np.asarray(page, dtype=float))


def _read_netpbm_all(data: bytes) -> List[np.ndarray]:
    images = []
    pos = 0
    while pos < len(data) and data[pos:].strip():
        tokens = []
        for _ in range(4):
            m = _HEADER_TOKEN.match(data, pos)
            if not m:
                raise ConfigurationError("truncated netpbm header")
            tokens.append(m.group(2))
            pos = m.end()
        magic, w, h, maxval = tokens[0], int(tokens[1]), int(tokens[2]), int(tokens[3])
        if magic not in (b"P5", b"P6") or maxval != 255:
            raise ConfigurationError(f"unsupported netpbm image {magic!r} maxval={maxval}")
        pos += 1  # single whitespace after maxval
        depth = 3 if magic == b"P6" else 1
        n = w * h * depth
        raw = data[pos:pos + n]
        if len(raw) != n:
            raise ConfigurationError("truncated netpbm pixel data")
        pos += n
        arr = np.frombuffer(raw, dtype=np.uint8).astype(float) / 255.0
        images.append(arr.reshape(h, w, depth) if depth == 3 else arr.reshape(h, w))
    return images


def read_ppm(path: PathLike) -> np.ndarray:
    with open(path, "rb") as f:
        images = _read_netpbm_all(f.read())
    if len(images) != 1 or images[0].ndim != 3:
        raise ConfigurationError(f"{path}: expected a single P6 image")
    return images[0]


def read_pgm_bundle(path: PathLike) -> List[np.ndarray]:
    with open(path, "rb") as f:
        images = _read_netpbm_all(f.read())
    if not images or any(img.ndim != 2 for img in images):
        raise ConfigurationError(f"{path}: expected one or more P5 pages")
    return images


# ───────────────────── PFM ─────────────────────

def write_pfm(path: PathLike, arr: np.ndarray):
    """32-bit float map; rows stored bottom-to-top, little-endian."""
    arr = np.asarray(arr, dtype=float)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[..., 0]
    if arr.ndim == 2:
        magic = b"Pf"
    elif arr.ndim == 3 and arr.shape[2] == 3:
        magic = b"PF"
    else:
        raise ValueError(f"PFM supports (H, W) or (H, W, 3) arrays, got {arr.shape}")
    h, w = arr.shape[:2]
    with open(path, "wb") as f:
        f.write(magic + b"\n%d %d\n-1.0\n" % (w, h))
        f.write(np.flipud(arr).astype("<f4").tobytes())


def read_pfm(path: PathLike) -> np.ndarray:
    with open(path, "rb") as f:
        data = f.read()
    tokens = []
    pos = 0
    for _ in range(4):
        m = _HEADER_TOKEN.match(data, pos)
        if not m:
            raise ConfigurationError(f"{path}: truncated PFM header")
        tokens.append(m.group(2))
        pos = m.end()
    pos += 1
    magic, w, h, scale = tokens[0], int(tokens[1]), int(tokens[2]), float(tokens[3])
    if magic not in (b"Pf", b"PF"):
        raise ConfigurationError(f"{path}: not a PFM file")
    channels = 3 if magic == b"PF" else 1
    dtype = "<f4" if scale < 0 else ">f4"
    n = w * h * channels
    arr = np.frombuffer(data[pos:pos + 4 * n], dtype=dtype)
    if arr.size != n:
        raise ConfigurationError(f"{path}: truncated PFM data")
    arr = arr.astype(float).reshape((h, w, 3) if channels == 3 else (h, w))
    return np.flipud(arr).copy()
