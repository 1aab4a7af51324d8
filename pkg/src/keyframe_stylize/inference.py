"""Feed-forward stylization of single frames and whole sequences."""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .core import ImageBuffer, ImageFormatError, load_image, resize_long_side, save_image
from .generator import Generator, forward
from .trainer import Checkpoint

__all__ = ["StylizeJob", "SequenceSummary", "stylize_image", "stylize_sequence"]

log = logging.getLogger(__name__)


def _generator(ckpt: Checkpoint) -> Generator:
    gen = getattr(ckpt, "_generator", None)
    if gen is None:
        gen = ckpt.generator()
        for p in gen.parameters():
            p.requires_grad_(False)
        object.__setattr__(ckpt, "_generator", gen)
    return gen


def stylize_image(ckpt: Checkpoint, img: ImageBuffer) -> ImageBuffer:
    if img.height % 4 or img.width % 4:
        raise ValueError(f"image {img.height}x{img.width} must have sides divisible by 4; "
                         "resize it with resize_long_side first")
    return forward(_generator(ckpt), img)


@dataclass
class StylizeJob:
    checkpoint: Checkpoint
    input_paths: Sequence[Path]
    output_dir: Path
    long_side: int | None = None
    skip_unreadable: bool = False
    workers: int = 1


@dataclass
class SequenceSummary:
    outputs: list[Path]
    frame_seconds: list[float]
    wall_seconds: float
    skipped: list[tuple[str, str]] = field(default_factory=list)

    @property
    def frames_per_second(self) -> float:
        return len(self.outputs) / self.wall_seconds if self.wall_seconds > 0 else float("inf")

    def describe(self) -> str:
        s = f"{len(self.outputs)} frames in {self.wall_seconds:.3f}s ({self.frames_per_second:.2f} fps)"
        if self.skipped:
            s += f", {len(self.skipped)} skipped"
        return s


def _prepare(img: ImageBuffer, long_side):
    if long_side:
        return resize_long_side(img, long_side)
    if img.height % 4 or img.width % 4:
        return resize_long_side(img, max(img.height, img.width) // 4 * 4)
    return img


def stylize_sequence(job: StylizeJob) -> SequenceSummary:
    """Stylize each input independently and write ``output_dir/<basename>``.

    No state is carried between frames, so ``workers > 1`` gives the same
    images as a sequential run.
    """
    out_dir = Path(job.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _generator(job.checkpoint)

    def one(path):
        path = Path(path)
        t0 = time.perf_counter()
        img = _prepare(load_image(path), job.long_side)
        target = out_dir / path.name
        save_image(stylize_image(job.checkpoint, img), target.with_suffix(".png"))
        return target.with_suffix(".png"), time.perf_counter() - t0

    outputs, timings, skipped = [], [], []
    start = time.perf_counter()

    def run(path):
        try:
            return one(path)
        except (ImageFormatError, FileNotFoundError) as exc:
            if not job.skip_unreadable:
                raise
            log.warning("skipping %s: %s", path, exc)
            return exc

    if job.workers > 1:
        with ThreadPoolExecutor(job.workers) as pool:
            results = list(pool.map(run, job.input_paths))
    else:
        results = [run(p) for p in job.input_paths]
    for path, res in zip(job.input_paths, results):
        if isinstance(res, Exception):
            skipped.append((str(path), str(res)))
        else:
            outputs.append(res[0])
            timings.append(res[1])
    return SequenceSummary(outputs, timings, time.perf_counter() - start, skipped)
