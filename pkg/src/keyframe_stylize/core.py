"""Domain types, configuration, image I/O and the style-weight rule."""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

__all__ = [
    "ImageBuffer",
    "KeyframePair",
    "UnpairedSet",
    "TrainingConfig",
    "Dataset",
    "ImageFormatError",
    "NUM_STYLE_LAYERS",
    "load_image",
    "save_image",
    "resize_long_side",
    "round_to_multiple",
    "compute_lambda",
    "load_dataset",
]

# Number of conv-ReLU activations of the 16-layer extractor used for Grams.
NUM_STYLE_LAYERS = 13


class ImageFormatError(ValueError):
    """Raised when a file does not decode as an 8-bit RGB raster."""


@dataclass(frozen=True, eq=False)
class ImageBuffer:
    """A C x H x W float32 raster with values in [0, 1].

    The array is copied and marked read-only on construction.
    """

    data: np.ndarray

    def __post_init__(self):
        arr = np.array(self.data, dtype=np.float32, copy=True)
        if arr.ndim != 3:
            raise ValueError(f"expected a C x H x W array, got shape {arr.shape}")
        if min(arr.shape) == 0:
            raise ValueError(f"degenerate image shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("image contains non-finite values")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise ValueError("image values must lie in [0, 1]")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    def to_tensor(self, dtype=torch.float32) -> torch.Tensor:
        """Return a fresh 1 x C x H x W tensor."""
        return torch.from_numpy(self.data.copy()).to(dtype).unsqueeze(0)

    @classmethod
    def from_tensor(cls, t: torch.Tensor) -> "ImageBuffer":
        t = t.detach()
        if t.ndim == 4:
            if t.shape[0] != 1:
                raise ValueError("from_tensor expects a single image")
            t = t[0]
        return cls(t.to(torch.float32).clamp(0.0, 1.0).cpu().numpy())

    def __eq__(self, other):
        if not isinstance(other, ImageBuffer):
            return NotImplemented
        return self.shape == other.shape and np.array_equal(self.data, other.data)

    __hash__ = None


@dataclass(frozen=True)
class KeyframePair:
    source: ImageBuffer
    style: ImageBuffer
    identifier: str = ""

    def __post_init__(self):
        if self.source.shape != self.style.shape:
            raise ValueError(
                f"keyframe {self.identifier!r}: source {self.source.shape} and "
                f"style {self.style.shape} differ"
            )


@dataclass(frozen=True)
class UnpairedSet:
    frames: tuple[ImageBuffer, ...]
    source_indices: tuple[int, ...] = ()

    def __post_init__(self):
        frames = tuple(self.frames)
        if not frames:
            raise ValueError("unpaired set must be non-empty")
        shapes = {f.shape for f in frames}
        if len(shapes) != 1:
            raise ValueError(f"unpaired frames have mixed shapes: {sorted(shapes)}")
        indices = tuple(self.source_indices) or tuple(range(len(frames)))
        if len(indices) != len(frames):
            raise ValueError("source_indices length does not match frames")
        object.__setattr__(self, "frames", frames)
        object.__setattr__(self, "source_indices", indices)

    def __len__(self):
        return len(self.frames)

    def check_compatible(self, keyframes: Sequence[KeyframePair]):
        for kf in keyframes:
            if kf.source.shape != self.frames[0].shape:
                raise ValueError(
                    f"keyframe {kf.identifier!r} has shape {kf.source.shape}, "
                    f"unpaired frames have {self.frames[0].shape}"
                )


@dataclass(frozen=True)
class TrainingConfig:
    """Optimization settings.

    Defaults follow the full-resolution setup (Adam at 1e-4, 100k iterations,
    512px long side). ``desk`` gives a preset sized for CPU runs in minutes.
    ``l1_weight`` exists only for the style-only ablation arm; ``pair_schedule``
    selects how (unpaired frame, style) pairs are drawn: ``"random"`` draws
    uniformly from the seeded generator, ``"sweep"`` enumerates all pairs in
    order.
    """

    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    iterations: int = 100_000
    lambda_override: float | None = None
    seed: int = 0
    long_side: int = 512
    content_loss_weight: float = 0.0
    checkpoint_every: int = 10_000
    l1_weight: float = 1.0
    grad_clip: float = 10.0
    log_every: int = 100
    pair_schedule: str = "random"

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.iterations <= 0:
            raise ValueError("iterations must be > 0")
        if self.content_loss_weight < 0:
            raise ValueError("content_loss_weight must be >= 0")
        if self.l1_weight < 0:
            raise ValueError("l1_weight must be >= 0")
        if self.lambda_override is not None and self.lambda_override < 0:
            raise ValueError("lambda_override must be >= 0")
        if not 0.0 <= self.beta1 < 1.0 or not 0.0 <= self.beta2 < 1.0:
            raise ValueError("Adam betas must lie in [0, 1)")
        if self.long_side < 8:
            raise ValueError("long_side must be >= 8")
        if self.checkpoint_every < 0 or self.log_every < 1:
            raise ValueError("checkpoint_every must be >= 0 and log_every >= 1")
        if self.grad_clip < 0:
            raise ValueError("grad_clip must be >= 0 (0 disables clipping)")
        if self.pair_schedule not in ("random", "sweep"):
            raise ValueError(f"unknown pair_schedule {self.pair_schedule!r}")

    @classmethod
    def desk(cls, **overrides) -> "TrainingConfig":
        base = dict(iterations=300, long_side=64, checkpoint_every=0, log_every=10)
        base.update(overrides)
        return cls(**base)

    def resolve_lambda(self, num_unpaired: int, num_layers: int = NUM_STYLE_LAYERS) -> float:
        if self.lambda_override is not None:
            return float(self.lambda_override)
        return compute_lambda(num_unpaired, num_layers)


def compute_lambda(num_unpaired: int, num_layers: int) -> float:
    """Style weight ``100 / (|Z| * |L|)``."""
    if num_unpaired < 1 or num_layers < 1:
        raise ValueError("num_unpaired and num_layers must both be >= 1")
    return 100.0 / (num_unpaired * num_layers)


def load_image(path) -> ImageBuffer:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such image: {path}")
    try:
        with Image.open(path) as im:
            im.load()
            mode = im.mode
            arr = np.asarray(im)
    except (OSError, SyntaxError) as exc:
        raise ImageFormatError(f"{path}: cannot decode image ({exc})") from exc
    if mode != "RGB" or arr.dtype != np.uint8 or arr.ndim != 3 or arr.shape[2] != 3:
        raise ImageFormatError(f"{path}: expected 8-bit RGB, got mode {mode!r}")
    return ImageBuffer(arr.transpose(2, 0, 1).astype(np.float32) / 255.0)


def save_image(img: ImageBuffer, path) -> None:
    if img.channels != 3:
        raise ValueError("only 3-channel images can be written")
    q = np.floor(img.data * 255.0 + 0.5).astype(np.uint8).transpose(1, 2, 0)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(q, mode="RGB").save(path)


def round_to_multiple(x: float, m: int = 4) -> int:
    """Nearest positive multiple of ``m`` (halves round up)."""
    return max(m, int(math.floor(x / m + 0.5)) * m)


def resize_long_side(img: ImageBuffer, target_long: int) -> ImageBuffer:
    """Bilinear resize so the longer side equals ``target_long``.

    The shorter side is scaled proportionally, then snapped to a multiple of 4.
    """
    if target_long < 8:
        raise ValueError("target_long must be >= 8")
    if target_long % 4:
        raise ValueError("target_long must be a multiple of 4")
    h, w = img.height, img.width
    if h == 0 or w == 0:
        raise ValueError("degenerate input dimensions")
    long_, short = max(h, w), min(h, w)
    new_short = round_to_multiple(math.floor(short * target_long / long_ + 0.5))
    new_h, new_w = (target_long, new_short) if h >= w else (new_short, target_long)
    if (new_h, new_w) == (h, w):
        return img
    t = img.to_tensor()
    out = F.interpolate(t, size=(new_h, new_w), mode="bilinear", align_corners=False, antialias=True)
    return ImageBuffer.from_tensor(out)


@dataclass(frozen=True)
class Dataset:
    keyframes: tuple[KeyframePair, ...]
    frames: tuple[ImageBuffer, ...]
    frame_names: tuple[str, ...] = field(default=())


_KEY_RE = re.compile(r"^(?P<id>.+)_source\.png$")


def load_dataset(root, long_side: int | None = None) -> Dataset:
    """Read ``keyframes/<id>_{source,style}.png`` and ``frames/*.png`` under root."""
    root = Path(root)
    kdir, fdir = root / "keyframes", root / "frames"
    if not kdir.is_dir():
        raise FileNotFoundError(f"missing keyframe directory {kdir}")
    pairs = []
    for src in sorted(kdir.glob("*_source.png")):
        ident = _KEY_RE.match(src.name).group("id")
        sty = kdir / f"{ident}_style.png"
        if not sty.is_file():
            raise FileNotFoundError(f"keyframe {ident!r} has no style image {sty}")
        pairs.append((ident, load_image(src), load_image(sty)))
    if not pairs:
        raise FileNotFoundError(f"no *_source.png keyframes in {kdir}")
    frame_paths = sorted(fdir.glob("*.png")) if fdir.is_dir() else []
    frames = [load_image(p) for p in frame_paths]

    def prep(img):
        return resize_long_side(img, long_side) if long_side else img

    keyframes = tuple(KeyframePair(prep(s), prep(y), ident) for ident, s, y in pairs)
    return Dataset(keyframes, tuple(prep(f) for f in frames), tuple(p.name for p in frame_paths))
