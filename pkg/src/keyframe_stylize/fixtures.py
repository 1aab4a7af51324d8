"""Procedural test sequences and a deterministic stand-in for an artist's stylization.

The sequence is a few soft-edged coloured blobs drifting over a gradient
background. ``paint`` maps a frame to a toned, outlined, hatched rendering of
it; the hatching is locked to canvas coordinates, so a per-pixel regression
can only match it on frames it has seen.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from scipy import ndimage

from .core import Dataset, ImageBuffer, KeyframePair, save_image

__all__ = ["synthetic_sequence", "paint", "make_dataset", "write_dataset"]


def synthetic_sequence(n_frames: int = 24, height: int = 64, width: int = 64,
                       seed: int = 0, n_blobs: int = 4) -> list[ImageBuffer]:
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    yy /= height
    xx /= width
    c0, c1 = rng.uniform(0.2, 0.8, 3), rng.uniform(0.2, 0.8, 3)
    background = c0[:, None, None] * (1 - yy) + c1[:, None, None] * yy
    start = rng.uniform(0.15, 0.85, (n_blobs, 2))
    velocity = rng.uniform(-0.6, 0.6, (n_blobs, 2)) / max(n_frames, 1)
    radius = rng.uniform(0.1, 0.22, n_blobs)
    colours = rng.uniform(0.0, 1.0, (n_blobs, 3))
    frames = []
    for t in range(n_frames):
        img = background.copy()
        for b in range(n_blobs):
            cy, cx = start[b] + velocity[b] * t
            # fold the trajectory back into the canvas
            cy, cx = 1 - abs(1 - cy % 2), 1 - abs(1 - cx % 2)
            d = np.sqrt((yy - cy) ** 2 + (xx - cx) ** 2) / radius[b]
            alpha = np.clip(1.5 - d * 1.5, 0.0, 1.0)[None]
            img = img * (1 - alpha) + colours[b][:, None, None] * alpha
        frames.append(ImageBuffer(np.clip(img, 0, 1)))
    return frames


def paint(img: ImageBuffer) -> ImageBuffer:
    x = img.data.astype(np.float64)
    lum = 0.299 * x[0] + 0.587 * x[1] + 0.114 * x[2]
    dark = np.array([0.12, 0.10, 0.35])[:, None, None]
    light = np.array([0.98, 0.90, 0.70])[:, None, None]
    toned = dark * (1 - lum) + light * lum
    toned = 0.6 * toned + 0.4 * x
    h, w = lum.shape
    yy, xx = np.mgrid[0:h, 0:w]
    hatch = 0.5 + 0.5 * np.cos(2 * np.pi * (xx + yy) / 4.0)
    shade = np.clip((0.65 - lum) / 0.65, 0, 1)
    toned = toned * (1 - 0.45 * shade * hatch)
    edges = np.hypot(ndimage.sobel(lum, 0), ndimage.sobel(lum, 1))
    outline = np.clip(edges * 2.0, 0, 1)
    toned = toned * (1 - 0.8 * outline)
    return ImageBuffer(np.clip(toned, 0, 1))


def make_dataset(n_frames: int = 24, size: int = 64, keyframe_indices=(0,), seed: int = 0) -> Dataset:
    frames = synthetic_sequence(n_frames, size, size, seed=seed)
    keyframes = tuple(KeyframePair(frames[i], paint(frames[i]), f"{i:05d}") for i in keyframe_indices)
    names = tuple(f"{i:05d}.png" for i in range(n_frames))
    return Dataset(keyframes, tuple(frames), names)


def write_dataset(root, dataset: Dataset) -> Path:
    """Write in the on-disk layout read by ``core.load_dataset``."""
    root = Path(root)
    for kf in dataset.keyframes:
        save_image(kf.source, root / "keyframes" / f"{kf.identifier}_source.png")
        save_image(kf.style, root / "keyframes" / f"{kf.identifier}_style.png")
    for name, frame in zip(dataset.frame_names, dataset.frames):
        save_image(frame, root / "frames" / name)
    return root
