"""Synthetic HR images for desk-scale smoke training and demos.

Each image mixes smooth gradients, hard-edged rectangles, sinusoidal
texture, and a little band-limited noise, so there is genuine high-frequency
structure for a super-resolver to learn and the wavelet noise estimator sees
a non-degenerate level.
"""

from __future__ import annotations

import numpy as np

from .imaging import Image
from .tensor import Tensor


def synthetic_hr_image(rng: np.random.Generator, size: int = 48) -> Image:
    yy, xx = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    img = np.zeros((3, size, size))

    for c in range(3):
        gx, gy = rng.uniform(-1, 1, size=2)
        img[c] = 96.0 + 48.0 * (gx * xx + gy * yy) / size

    for _ in range(rng.integers(3, 6)):
        top, left = rng.integers(0, size - 8, size=2)
        hgt, wdt = rng.integers(6, max(7, size // 2), size=2)
        color = rng.uniform(16, 240, size=3)
        img[:, top:top + hgt, left:left + wdt] = color[:, None, None]

    fx, fy = rng.uniform(0.15, 0.55, size=2)
    phase = rng.uniform(0, 2 * np.pi)
    wave = 28.0 * np.sin(2 * np.pi * (fx * xx + fy * yy) / 4.0 + phase)
    img += wave[None]

    img += rng.normal(0.0, 2.5, size=img.shape)
    return Image(Tensor(np.clip(img, 0.0, 255.0)[None]), "byte", "rgb")


def make_toy_dataset(count: int, size: int = 48, seed: int = 0) -> list[Image]:
    rng = np.random.default_rng(seed)
    return [synthetic_hr_image(rng, size) for _ in range(count)]
