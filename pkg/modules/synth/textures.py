"""Continuous surface textures for the synthetic scenes."""

import numpy as np


def box_blur(grid: np.ndarray, radius: int) -> np.ndarray:
    """Separable (2r+1)^2 mean filter with edge replication."""
    if radius <= 0:
        return grid.copy()
    k = 2 * radius + 1
    out = grid
    for axis in (0, 1):
        pad = [(0, 0), (0, 0)]
        pad[axis] = (radius + 1, radius)
        c = np.cumsum(np.pad(out, pad, mode="edge"), axis=axis)
        if axis == 0:
            out = (c[k:] - c[:-k]) / k
        else:
            out = (c[:, k:] - c[:, :-k]) / k
    return out


class Texture:
    """Bilinear lookup into a smooth texel grid anchored at target pixel (0, 0).

    The grid extends `margin` texels past every image border, so surfaces that
    move partly out of the original frame stay textured; lookups beyond the
    margin are clamped.
    """

    def __init__(self, texels: np.ndarray, margin: int):
        self.texels = texels
        self.margin = margin

    def sample(self, u, v) -> np.ndarray:
        u = np.asarray(u, dtype=float) + self.margin
        v = np.asarray(v, dtype=float) + self.margin
        h, w = self.texels.shape
        u = np.clip(u, 0.0, w - 1.0)
        v = np.clip(v, 0.0, h - 1.0)
        u0 = np.minimum(np.floor(u).astype(int), w - 2)
        v0 = np.minimum(np.floor(v).astype(int), h - 2)
        a = u - u0
        b = v - v0
        t = self.texels
        return ((1 - a) * (1 - b) * t[v0, u0] + a * (1 - b) * t[v0, u0 + 1]
                + (1 - a) * b * t[v0 + 1, u0] + a * b * t[v0 + 1, u0 + 1])


def _value_noise(rng: np.random.Generator, height: int, width: int, cell: int) -> np.ndarray:
    gh = height // cell + 2
    gw = width // cell + 2
    coarse = rng.uniform(0.2, 0.8, size=(gh, gw))
    ys = np.arange(height) / cell
    xs = np.arange(width) / cell
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    c00 = coarse[np.ix_(y0, x0)]
    c01 = coarse[np.ix_(y0, x0 + 1)]
    c10 = coarse[np.ix_(y0 + 1, x0)]
    c11 = coarse[np.ix_(y0 + 1, x0 + 1)]
    return (1 - fy) * ((1 - fx) * c00 + fx * c01) + fy * ((1 - fx) * c10 + fx * c11)


def _checker(height: int, width: int, cell: int) -> np.ndarray:
    ys, xs = np.mgrid[0:height, 0:width]
    return np.where(((ys // cell) + (xs // cell)) % 2 == 0, 0.3, 0.7)


def make_texture(rng: np.random.Generator, width: int, height: int, style: str = "smooth-noise",
                 cell: int = 8, blur_radius: int = 3, margin: int = 16) -> Texture:
    gh, gw = height + 2 * margin, width + 2 * margin
    if style == "smooth-noise":
        base = _value_noise(rng, gh, gw, cell)
    elif style == "checker":
        base = _checker(gh, gw, cell)
    else:
        raise ValueError(f"unknown texture style {style!r}")
    texels = box_blur(box_blur(base, blur_radius), blur_radius)
    return Texture(texels, margin)
