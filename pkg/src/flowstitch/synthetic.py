"""Synthetic textures and scenes with known ground truth, for tests and demos."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .imagecore import ImageBuf


def _gauss_kernel(sigma: float) -> np.ndarray:
    r = max(1, int(round(3 * sigma)))
    x = np.arange(-r, r + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def gaussian_blur(a: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur of a 2-D array with edge clamping."""
    k = _gauss_kernel(sigma)
    r = len(k) // 2
    p = np.pad(a, ((0, 0), (r, r)), mode="edge")
    tmp = sum(k[t] * p[:, t:t + a.shape[1]] for t in range(len(k)))
    p = np.pad(tmp, ((r, r), (0, 0)), mode="edge")
    return sum(k[t] * p[t:t + a.shape[0]] for t in range(len(k)))


def smooth_texture(height: int, width: int, sigma: float = 3.0, seed: int = 0,
                   channels: int = 1) -> np.ndarray:
    """Blurred white noise stretched to [0.05, 0.95]; shape HxW or HxWxC."""
    rng = np.random.default_rng(seed)
    planes = []
    for _ in range(channels):
        a = gaussian_blur(rng.random((height, width)), sigma)
        a = (a - a.min()) / (a.max() - a.min())
        planes.append(0.05 + 0.9 * a)
    out = np.stack(planes, axis=2)
    return out[:, :, 0] if channels == 1 else out


def shift_image(a: np.ndarray, dx: int, dy: int) -> np.ndarray:
    """Translate content by (+dx, +dy) with edge-clamped padding: out(p + t) = a(p)."""
    h, w = a.shape[:2]
    ys = np.clip(np.arange(h) - dy, 0, h - 1)
    xs = np.clip(np.arange(w) - dx, 0, w - 1)
    return a[ys][:, xs]


@dataclass
class ParallaxScene:
    """Two coarsely registered views; a foreground layer moves by ``parallax`` px."""

    left: ImageBuf
    right: ImageBuf
    left_offset: tuple[int, int]
    right_offset: tuple[int, int]
    canvas: tuple[int, int]  # (width, height)
    parallax: tuple[int, int]


def parallax_scene(parallax: tuple[int, int] = (8, 0), seed: int = 0, width: int = 448,
                   height: int = 256, view_width: int = 320, fg_size: int = 128,
                   channels: int = 3) -> ParallaxScene:
    """Background texture shared by both views plus a textured square that sits
    ``parallax`` pixels further along in the right view.

    The left view covers canvas columns [0, view_width), the right view
    [width - view_width, width); the square is centred in the overlap.
    """
    bg = smooth_texture(height, width, sigma=2.5, seed=seed, channels=channels)
    fg = smooth_texture(fg_size, fg_size, sigma=2.0, seed=seed + 1000, channels=channels)
    if channels == 1:
        bg, fg = bg[:, :, None], fg[:, :, None]
    fg = 1.0 - fg  # distinct contrast from the background
    rx0 = width - view_width
    cx = (rx0 + view_width) // 2 - fg_size // 2
    cy = height // 2 - fg_size // 2
    px, py = parallax

    def render(x0, y0):
        v = bg.copy()
        v[y0:y0 + fg_size, x0:x0 + fg_size] = fg
        return v

    view_l = render(cx - px // 2, cy - py // 2)
    view_r = render(cx - px // 2 + px, cy - py // 2 + py)
    left = ImageBuf.full(view_l[:, :view_width])
    right = ImageBuf.full(view_r[:, rx0:])
    return ParallaxScene(left, right, (0, 0), (rx0, 0), (width, height), parallax)


def window_strip(texture: np.ndarray, n: int = 3, overlap: int = 250) -> list[tuple[np.ndarray, int]]:
    """Cut ``texture`` into ``n`` full-height windows overlapping by ``overlap``
    columns; returns (window, offset_x) pairs."""
    w = texture.shape[1]
    win = -(-(w + (n - 1) * overlap) // n)
    out = []
    for k in range(n):
        x0 = min(k * (win - overlap), w - win)
        out.append((texture[:, x0:x0 + win].copy(), x0))
    return out
