"""Procedural test images with smooth shading, hard edges and fine texture.

Used where no image corpus is at hand: tests, benchmarks and smoke training.
"""
import numpy as np


def synthetic_image(height: int, width: int, rng: np.random.Generator, n_shapes: int = 12) -> np.ndarray:
    """Luminance image in [0, 1] mixing gradients, discs, rectangles and gratings."""
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    img = rng.uniform(0.2, 0.8) + rng.uniform(-0.3, 0.3) * (xx / width) + rng.uniform(-0.3, 0.3) * (yy / height)
    for _ in range(n_shapes):
        kind = rng.integers(3)
        level = rng.uniform(-0.5, 0.5)
        cy, cx = rng.uniform(0, height), rng.uniform(0, width)
        if kind == 0:
            r = rng.uniform(3, max(4.0, min(height, width) / 3))
            mask = (yy - cy) ** 2 + (xx - cx) ** 2 < r * r
        elif kind == 1:
            hh, ww = rng.uniform(3, height / 2), rng.uniform(3, width / 2)
            mask = (np.abs(yy - cy) < hh / 2) & (np.abs(xx - cx) < ww / 2)
        else:
            theta = rng.uniform(0, np.pi)
            period = rng.uniform(2.5, 9.0)
            r = rng.uniform(5, max(6.0, min(height, width) / 2.5))
            phase = (np.cos(theta) * xx + np.sin(theta) * yy) * 2 * np.pi / period
            mask = (yy - cy) ** 2 + (xx - cx) ** 2 < r * r
            img = img + mask * 0.25 * level * np.sin(phase)
            continue
        img = img + level * mask
    return np.clip(img, 0.0, 1.0)


def synthetic_rgb(height: int, width: int, rng: np.random.Generator) -> np.ndarray:
    base = synthetic_image(height, width, rng)
    tint = rng.uniform(0.7, 1.0, size=3)
    return np.clip(base[..., None] * tint + rng.uniform(0, 0.1, size=3), 0.0, 1.0)


def synthetic_corpus(count: int, size: tuple[int, int] = (96, 96), seed: int = 0) -> list[np.ndarray]:
    rng = np.random.default_rng(seed)
    return [synthetic_image(size[0], size[1], rng) for _ in range(count)]
