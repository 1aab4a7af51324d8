"""Choosing the unpaired training subset from a frame sequence."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import ImageBuffer

__all__ = [
    "STRATEGIES",
    "SamplingSpec",
    "subset_size",
    "uniform_sample",
    "dense_sample",
    "frame_difference",
    "adaptive_sample",
    "sample_indices",
]

STRATEGIES = ("dense", "uniform", "adaptive")


@dataclass(frozen=True)
class SamplingSpec:
    strategy: str = "uniform"
    fraction: float = 0.1

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}; expected one of {STRATEGIES}")
        if not 0.0 < self.fraction <= 1.0:
            raise ValueError("fraction must lie in (0, 1]")


def subset_size(frame_count: int, fraction: float) -> int:
    # round half up, so 0.5 * 7 = 3.5 -> 4
    return max(1, min(frame_count, int(math.floor(fraction * frame_count + 0.5))))


def uniform_sample(frame_count: int, fraction: float) -> list[int]:
    if frame_count < 1:
        raise ValueError("frame_count must be >= 1")
    if not 0.0 < fraction <= 1.0:
        raise ValueError("fraction must lie in (0, 1]")
    k = subset_size(frame_count, fraction)
    # integer floor of i * n / k, exact for any n
    return [i * frame_count // k for i in range(k)]


def dense_sample(frame_count: int, fraction: float = 1.0) -> list[int]:
    return list(range(frame_count))


def frame_difference(a: ImageBuffer, b: ImageBuffer) -> float:
    if a.shape != b.shape:
        raise ValueError(f"frame shapes differ: {a.shape} vs {b.shape}")
    return float(np.mean(np.abs(a.data.astype(np.float64) - b.data.astype(np.float64))))


def adaptive_sample(frames: Sequence[ImageBuffer], fraction: float) -> list[int]:
    """Greedy farthest-point selection under ``frame_difference``.

    Starts from frame 0; each round adds the frame whose smallest difference
    to the chosen set is largest, lowest index on ties.
    """
    n = len(frames)
    if n == 0:
        raise ValueError("frames must be non-empty")
    if not 0.0 < fraction <= 1.0:
        raise ValueError("fraction must lie in (0, 1]")
    k = subset_size(n, fraction)
    chosen = [0]
    min_dist = np.array([frame_difference(frames[0], f) for f in frames])
    min_dist[0] = -np.inf
    while len(chosen) < k:
        nxt = int(np.argmax(min_dist))  # argmax returns the first maximum
        chosen.append(nxt)
        d = np.array([frame_difference(frames[nxt], f) for f in frames])
        min_dist = np.minimum(min_dist, d)
        min_dist[chosen] = -np.inf
    return sorted(chosen)


def sample_indices(spec: SamplingSpec, frames: Sequence[ImageBuffer]) -> list[int]:
    n = len(frames)
    if spec.fraction * n < 1 and spec.strategy != "dense":
        raise ValueError(f"fraction {spec.fraction} of {n} frames selects no frame")
    if spec.strategy == "dense":
        return dense_sample(n)
    if spec.strategy == "uniform":
        return uniform_sample(n, spec.fraction)
    return adaptive_sample(frames, spec.fraction)
