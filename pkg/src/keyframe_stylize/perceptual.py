"""Frozen feature extractors, Gram matrices and the training loss terms."""

from __future__ import annotations

import hashlib
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .core import ImageBuffer

__all__ = [
    "WEIGHTS_ENV",
    "VGG16_CONFIG",
    "VGG16_LAYER_NAMES",
    "CONTENT_LAYER",
    "FeatureExtractor",
    "VGGExtractor",
    "StandInExtractor",
    "FeatureStack",
    "LossBreakdown",
    "default_extractor",
    "extract_features",
    "gram",
    "style_loss",
    "style_loss_to_grams",
    "content_loss",
    "l1_loss",
    "total_objective",
]

log = logging.getLogger(__name__)

WEIGHTS_ENV = "KEYFRAME_STYLIZE_VGG_WEIGHTS"

# Conv widths of the 16-layer configuration; "M" is a 2x2 max-pool.
VGG16_CONFIG = [64, 64, "M", 128, 128, "M", 256, 256, 256, "M", 512, 512, 512, "M", 512, 512, 512]
VGG16_LAYER_NAMES = [
    "relu1_1", "relu1_2",
    "relu2_1", "relu2_2",
    "relu3_1", "relu3_2", "relu3_3",
    "relu4_1", "relu4_2", "relu4_3",
    "relu5_1", "relu5_2", "relu5_3",
]
CONTENT_LAYER = "relu3_3"

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


class FeatureExtractor(nn.Module):
    """Frozen network returning a list of post-ReLU maps, one per style layer."""

    layer_names: list[str]
    min_size: int = 1

    def freeze(self):
        for p in self.parameters():
            p.requires_grad_(False)
        return self.eval()

    def digest(self) -> str:
        h = hashlib.sha256()
        for name, t in sorted(self.state_dict().items()):
            h.update(name.encode())
            h.update(t.detach().cpu().contiguous().numpy().tobytes())
        return h.hexdigest()

    def train(self, mode: bool = True):
        # always stays in eval mode
        return super().train(False)


class VGGExtractor(FeatureExtractor):
    """The 16-layer VGG feature stack up to ``relu5_3``.

    ``weights`` is a state dict with torchvision ``features.N.*`` keys (or the
    bare ``N.*`` keys written by ``scripts/import_vgg_weights.py``). Without it,
    layers get a seeded He-normal init; ``source`` records which was used.
    """

    min_size = 16

    def __init__(self, weights: dict | None = None, seed: int = 0):
        super().__init__()
        layers: list[nn.Module] = []
        cin = 3
        for v in VGG16_CONFIG:
            if v == "M":
                layers.append(nn.MaxPool2d(2, 2))
            else:
                layers += [nn.Conv2d(cin, v, 3, padding=1), nn.ReLU()]
                cin = v
        self.features = nn.Sequential(*layers)
        self.layer_names = list(VGG16_LAYER_NAMES)
        self.register_buffer("mean", torch.tensor(IMAGENET_MEAN).view(1, 3, 1, 1))
        self.register_buffer("std", torch.tensor(IMAGENET_STD).view(1, 3, 1, 1))
        if weights is not None:
            weights = {k.removeprefix("features."): v for k, v in weights.items()
                       if not k.startswith("classifier.")}
            self.features.load_state_dict(weights)
            self.source = "pretrained"
        else:
            g = torch.Generator().manual_seed(seed)
            with torch.no_grad():
                for m in self.features:
                    if isinstance(m, nn.Conv2d):
                        fan_in = m.weight[0].numel()
                        m.weight.copy_(torch.randn(m.weight.shape, generator=g) * (2.0 / fan_in) ** 0.5)
                        m.bias.zero_()
            self.source = f"seeded:{seed}"
        self.freeze()

    @classmethod
    def from_file(cls, path) -> "VGGExtractor":
        state = torch.load(Path(path), map_location="cpu", weights_only=True)
        if isinstance(state, dict) and "state_dict" in state:
            state = state["state_dict"]
        ext = cls(weights=state)
        ext.source = f"file:{Path(path).name}"
        return ext

    def forward(self, x):
        if min(x.shape[-2:]) < self.min_size:
            raise ValueError(f"image {tuple(x.shape[-2:])} is smaller than {self.min_size}px")
        x = (x - self.mean.to(x.dtype)) / self.std.to(x.dtype)
        out = []
        for m in self.features:
            x = m(x)
            if isinstance(m, nn.ReLU):
                out.append(x)
        return out


class StandInExtractor(FeatureExtractor):
    """Two 3x3 conv + ReLU layers with seeded weights; a cheap test double."""

    def __init__(self, channels=(4, 6), seed: int = 0, dtype=torch.float64):
        super().__init__()
        g = torch.Generator().manual_seed(seed)
        self.convs = nn.ModuleList()
        cin = 3
        for c in channels:
            conv = nn.Conv2d(cin, c, 3, padding=1)
            with torch.no_grad():
                conv.weight.copy_(torch.randn(conv.weight.shape, generator=g) * 0.5)
                conv.bias.copy_(torch.randn(conv.bias.shape, generator=g) * 0.1)
            self.convs.append(conv)
            cin = c
        self.layer_names = [f"relu{i + 1}" for i in range(len(channels))]
        self.to(dtype)
        self.freeze()

    def forward(self, x):
        out = []
        for conv in self.convs:
            x = F.relu(conv(x))
            out.append(x)
        return out


_DEFAULT: FeatureExtractor | None = None


def default_extractor() -> FeatureExtractor:
    """Process-wide VGG extractor; weights from ``$KEYFRAME_STYLIZE_VGG_WEIGHTS`` if set."""
    global _DEFAULT
    if _DEFAULT is None:
        path = os.environ.get(WEIGHTS_ENV)
        if path:
            _DEFAULT = VGGExtractor.from_file(path)
        else:
            log.warning("%s not set; using seeded VGG16 weights", WEIGHTS_ENV)
            _DEFAULT = VGGExtractor()
    return _DEFAULT


@dataclass(frozen=True)
class FeatureStack:
    names: tuple[str, ...]
    maps: tuple[torch.Tensor, ...]

    def __len__(self):
        return len(self.maps)

    def __iter__(self):
        return iter(zip(self.names, self.maps))


def extract_features(img, extractor: FeatureExtractor | None = None) -> FeatureStack:
    """Run ``extractor`` on an ImageBuffer or a 1xCxHxW / CxHxW tensor.

    Gradients flow through when ``img`` is a tensor that requires them.
    """
    extractor = extractor or default_extractor()
    dtype = next(extractor.parameters()).dtype
    if isinstance(img, ImageBuffer):
        x = img.to_tensor(dtype)
    else:
        x = img if img.ndim == 4 else img.unsqueeze(0)
        x = x.to(dtype)
    maps = extractor(x)
    return FeatureStack(tuple(extractor.layer_names), tuple(m[0] for m in maps))


def gram(fmap) -> torch.Tensor:
    """C x C channel correlations of a C x H x W map, divided by C*H*W."""
    f = torch.as_tensor(fmap)
    if f.ndim != 3:
        raise ValueError(f"expected C x H x W, got {tuple(f.shape)}")
    c, h, w = f.shape
    flat = f.reshape(c, h * w)
    return flat @ flat.T / (c * h * w)


def _stack_maps(s):
    return list(s.maps) if isinstance(s, FeatureStack) else list(s)


def style_loss_to_grams(a, target_grams: Sequence[torch.Tensor]) -> torch.Tensor:
    maps = _stack_maps(a)
    if len(maps) != len(target_grams):
        raise ValueError(f"layer count mismatch: {len(maps)} vs {len(target_grams)}")
    total = maps[0].new_zeros(())
    for m, g in zip(maps, target_grams):
        total = total + ((gram(m) - g) ** 2).sum()
    return total


def style_loss(a, b) -> torch.Tensor:
    """Sum over layers of the squared Frobenius distance between Grams."""
    if isinstance(a, FeatureStack) and isinstance(b, FeatureStack) and a.names != b.names:
        raise ValueError(f"layer lists differ: {a.names} vs {b.names}")
    return style_loss_to_grams(a, [gram(m) for m in _stack_maps(b)])


def content_loss(a, b, layer: str = CONTENT_LAYER) -> torch.Tensor:
    """Mean squared feature difference at one mid-level layer.

    Plain map lists carry no names, so the middle entry is used (``relu3_3``
    for the 13-layer VGG stack).
    """
    if isinstance(a, torch.Tensor):
        return F.mse_loss(a, b)
    maps_a, maps_b = _stack_maps(a), _stack_maps(b)
    if isinstance(a, FeatureStack) and layer in a.names:
        i = a.names.index(layer)
    else:
        i = len(maps_a) // 2
    return F.mse_loss(maps_a[i], maps_b[i])


def l1_loss(a, b) -> torch.Tensor:
    ta = a.to_tensor() if isinstance(a, ImageBuffer) else torch.as_tensor(a)
    tb = b.to_tensor() if isinstance(b, ImageBuffer) else torch.as_tensor(b)
    if ta.shape != tb.shape:
        raise ValueError(f"shape mismatch {tuple(ta.shape)} vs {tuple(tb.shape)}")
    return (ta - tb.to(ta.dtype)).abs().mean()


@dataclass
class LossBreakdown:
    l1_term: float
    style_term: float
    content_term: float
    lam: float
    total: float
    content_weight: float = 0.0
    l1_weight: float = 1.0
    extras: dict = field(default_factory=dict)

    def check(self, tol: float = 1e-6) -> bool:
        expect = self.l1_weight * self.l1_term + self.lam * self.style_term \
            + self.content_weight * self.content_term
        return abs(expect - self.total) <= tol * max(1.0, abs(self.total))


def _sum_terms(terms, fn, like):
    total = like.new_zeros(()) if like is not None else torch.zeros(())
    for a, b in terms:
        total = total + fn(a, b)
    return total


def total_objective(keyframe_terms, regularizer_terms, lam: float,
                    content_weight: float = 0.0, content_terms=None,
                    l1_weight: float = 1.0):
    """Combine the objective terms.

    ``keyframe_terms`` are (output, style) image pairs for the L1 term,
    ``regularizer_terms`` are (output features, style features) pairs (a
    precomputed list of target Grams is accepted in place of style features),
    ``content_terms`` are (output features, source features) pairs.
    Returns the total as a tensor (differentiable) and a ``LossBreakdown``.
    """
    if not keyframe_terms:
        raise ValueError("at least one keyframe term is required")
    if lam < 0 or content_weight < 0:
        raise ValueError("lam and content_weight must be >= 0")
    l1 = None
    for out, sty in keyframe_terms:
        term = l1_loss(out, sty)
        l1 = term if l1 is None else l1 + term

    def _style(a, b):
        if isinstance(b, (list, tuple)) and b and isinstance(b[0], torch.Tensor) \
                and b[0].ndim == 2:
            return style_loss_to_grams(a, b)
        return style_loss(a, b)

    style = _sum_terms(regularizer_terms, _style, l1)
    if content_terms and content_weight > 0:
        content = _sum_terms(content_terms, content_loss, l1)
    else:
        content = l1.new_zeros(())
    total = l1_weight * l1 + lam * style + content_weight * content
    breakdown = LossBreakdown(
        l1_term=l1.item(), style_term=style.item(), content_term=content.item(),
        lam=float(lam), total=total.item(), content_weight=float(content_weight),
        l1_weight=float(l1_weight),
    )
    return total, breakdown
