"""U-Net style translation network with residual bottleneck."""

from __future__ import annotations

import math
from contextlib import contextmanager
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .core import ImageBuffer

__all__ = [
    "GeneratorConfig",
    "Generator",
    "build_generator",
    "forward",
    "layer_specs",
    "pinned_statistics",
    "receptive_field",
    "receptive_field_of",
]


@dataclass(frozen=True)
class GeneratorConfig:
    residual_blocks: int = 9
    base_channels: int = 32
    downsample_stages: int = 2
    norm: str = "instance"
    skip_connections: bool = True

    def __post_init__(self):
        if self.residual_blocks < 1:
            raise ValueError("residual_blocks must be >= 1")
        if self.base_channels < 1:
            raise ValueError("base_channels must be >= 1")
        if self.downsample_stages != 2:
            raise ValueError("downsample_stages is fixed at 2")
        if self.norm != "instance":
            raise ValueError("only instance normalization is supported")
        if not self.skip_connections:
            raise ValueError("skip connections are always on")


class InstanceNorm(nn.InstanceNorm2d):
    """Affine instance norm whose statistics can be pinned for analysis.

    Inside ``pinned_statistics`` the first pass records per-channel mean and
    variance and later passes reuse them, which removes the global coupling
    that normalization introduces between distant pixels.
    """

    def __init__(self, ch):
        super().__init__(ch, affine=True, track_running_stats=False)
        self._mode = None
        self._stats = None

    def forward(self, x):
        if self._mode is None:
            return super().forward(x)
        if self._mode == "record":
            var, mean = torch.var_mean(x, dim=(2, 3), keepdim=True, unbiased=False)
            self._stats = (mean.detach(), var.detach())
            self._mode = "replay"
        mean, var = self._stats
        y = (x - mean) / torch.sqrt(var + self.eps)
        return y * self.weight.view(1, -1, 1, 1) + self.bias.view(1, -1, 1, 1)


def _norm(ch):
    return InstanceNorm(ch)


class ConvBlock(nn.Sequential):
    """conv -> instance norm -> ReLU."""

    def __init__(self, cin, cout, kernel, stride=1, reflect=False):
        pad = kernel // 2
        if reflect:
            layers = [nn.ReflectionPad2d(pad), nn.Conv2d(cin, cout, kernel, stride)]
        else:
            layers = [nn.Conv2d(cin, cout, kernel, stride, padding=pad)]
        super().__init__(*layers, _norm(cout), nn.ReLU())


class ResidualBlock(nn.Module):
    def __init__(self, ch):
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv2d(ch, ch, 3, padding=1),
            _norm(ch),
            nn.ReLU(),
            nn.Conv2d(ch, ch, 3, padding=1),
            _norm(ch),
        )

    def forward(self, x):
        return F.relu(x + self.body(x))


class UpBlock(nn.Module):
    """2x nearest-neighbour resize, then a 3x3 conv block."""

    def __init__(self, cin, cout):
        super().__init__()
        self.conv = ConvBlock(cin, cout, 3)

    def forward(self, x):
        return self.conv(F.interpolate(x, scale_factor=2, mode="nearest"))


class Generator(nn.Module):
    def __init__(self, config: GeneratorConfig):
        super().__init__()
        self.config = config
        c = config.base_channels
        self.inc = ConvBlock(3, c, 7, reflect=True)
        self.down1 = ConvBlock(c, 2 * c, 3, stride=2)
        self.down2 = ConvBlock(2 * c, 4 * c, 3, stride=2)
        self.res = nn.Sequential(*[ResidualBlock(4 * c) for _ in range(config.residual_blocks)])
        # skips: down2 -> up1, down1 -> up2 (channel concatenation)
        self.up1 = UpBlock(8 * c, 2 * c)
        self.up2 = UpBlock(4 * c, c)
        self.out = nn.Sequential(nn.ReflectionPad2d(3), nn.Conv2d(c, 3, 7))

    def forward(self, x):
        if x.shape[-1] % 4 or x.shape[-2] % 4:
            raise ValueError(f"spatial dims {tuple(x.shape[-2:])} must be multiples of 4")
        d0 = self.inc(x)
        d1 = self.down1(d0)
        d2 = self.down2(d1)
        r = self.res(d2)
        u1 = self.up1(torch.cat([r, d2], dim=1))
        u2 = self.up2(torch.cat([u1, d1], dim=1))
        return (torch.tanh(self.out(u2)) + 1.0) / 2.0

    def parameter_shapes(self) -> dict[str, tuple[int, ...]]:
        return {k: tuple(v.shape) for k, v in self.state_dict().items()}


@contextmanager
def pinned_statistics(gen: nn.Module):
    norms = [m for m in gen.modules() if isinstance(m, InstanceNorm)]
    for m in norms:
        m._mode, m._stats = "record", None
    try:
        yield gen
    finally:
        for m in norms:
            m._mode, m._stats = None, None


def _init_weights(gen: Generator, seed: int):
    g = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for name, p in gen.named_parameters():
            if name.endswith("weight") and p.ndim == 4:
                fan_in = p.shape[1] * p.shape[2] * p.shape[3]
                p.copy_(torch.randn(p.shape, generator=g) * math.sqrt(2.0 / fan_in))
            elif name.endswith("weight"):
                p.fill_(1.0)  # instance-norm scale
            else:
                p.zero_()


def build_generator(config: GeneratorConfig | None = None, seed: int = 0) -> Generator:
    """Construct the network with fan-in scaled normal init drawn from ``seed``."""
    gen = Generator(config or GeneratorConfig())
    _init_weights(gen, seed)
    return gen.eval()


@torch.no_grad()
def forward(gen: Generator, img: ImageBuffer) -> ImageBuffer:
    if img.height % 4 or img.width % 4:
        raise ValueError(f"image {img.height}x{img.width} is not divisible by 4")
    dtype = next(gen.parameters()).dtype
    return ImageBuffer.from_tensor(gen(img.to_tensor(dtype)))


def layer_specs(config: GeneratorConfig) -> list[tuple[int, float]]:
    """(kernel, stride) along the deepest path; nearest 2x resize is (2, 0.5)."""
    specs = [(7, 1), (3, 2), (3, 2)]
    specs += [(3, 1), (3, 1)] * config.residual_blocks
    specs += [(2, 0.5), (3, 1)] * 2
    specs.append((7, 1))
    return specs


def receptive_field_of(specs) -> float:
    r, j = 1.0, 1.0
    for k, s in specs:
        r += (k - 1) * j
        j *= s
    return r


def receptive_field(config: GeneratorConfig) -> int:
    """Analytic receptive field in input pixels.

    Skip branches are strictly shallower than the residual path, so the
    maximum over branches is the residual path itself.
    """
    main = receptive_field_of(layer_specs(config))
    # d2 skip into up1 and d1 skip into up2 bypass the residual/up1 stages
    skip2 = receptive_field_of([(7, 1), (3, 2), (3, 2)] + [(2, 0.5), (3, 1)] * 2 + [(7, 1)])
    skip1 = receptive_field_of([(7, 1), (3, 2)] + [(2, 0.5), (3, 1)] + [(7, 1)])
    return int(max(main, skip2, skip1))
