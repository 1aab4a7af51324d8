"""Metrics and experiment harnesses for loss-term ablations and frame sampling."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .core import Dataset, ImageBuffer, TrainingConfig, UnpairedSet
from .generator import GeneratorConfig
from .inference import stylize_image
from .perceptual import FeatureExtractor, default_extractor, extract_features, gram, l1_loss, style_loss_to_grams
from .sampler import SamplingSpec, sample_indices
from .trainer import Checkpoint, TrainingDivergence, train

__all__ = [
    "MetricReport",
    "AblationResult",
    "ABLATION_ARMS",
    "style_distance",
    "split_frames",
    "evaluate_checkpoint",
    "ablation_report",
    "sampling_report",
    "content_report",
    "format_table",
    "write_report",
]

log = logging.getLogger(__name__)


@dataclass
class MetricReport:
    style_distance: float
    keyframe_l1: float
    per_frame: list[dict] = field(default_factory=list)
    config_digest: str = ""
    label: str = ""
    z_indices: list[int] = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("style_distance", "keyframe_l1"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and >= 0, got {v}")

    @property
    def input_l1(self) -> float:
        """Mean L1 between held-out outputs and their untouched inputs."""
        vals = [r["input_l1"] for r in self.per_frame if "input_l1" in r]
        return float(np.mean(vals)) if vals else float("nan")

    def to_kv(self) -> dict:
        return {
            "label": self.label,
            "style_distance": self.style_distance,
            "keyframe_l1": self.keyframe_l1,
            "input_l1": self.input_l1,
            "config_digest": self.config_digest,
            "z_indices": list(self.z_indices),
            "per_frame": self.per_frame,
            **self.extra,
        }


def _grams(img: ImageBuffer, extractor) -> list[torch.Tensor]:
    with torch.no_grad():
        return [gram(m) for m in extract_features(img, extractor).maps]


def style_distance(outputs: Sequence[ImageBuffer], style: ImageBuffer,
                   extractor: FeatureExtractor | None = None) -> float:
    """Mean Gram-stack distance between each output and ``style``."""
    if not outputs:
        raise ValueError("outputs must be non-empty")
    extractor = extractor or default_extractor()
    target = _grams(style, extractor)
    with torch.no_grad():
        vals = [float(style_loss_to_grams(extract_features(o, extractor), target)) for o in outputs]
    return float(np.mean(vals))


def split_frames(n_frames: int, spec: SamplingSpec, frames, keyframe_indices=(),
                 holdout_every: int = 0) -> tuple[list[int], list[int]]:
    """Pick Z from a training pool and return (z_indices, eval_indices).

    With ``holdout_every = m > 0`` every m-th frame (offset m // 2) is withheld
    from the pool so that even dense sampling leaves frames to evaluate on.
    """
    if holdout_every > 0:
        held = set(range(holdout_every // 2, n_frames, holdout_every))
    else:
        held = set()
    pool = [i for i in range(n_frames) if i not in held]
    local = sample_indices(spec, [frames[i] for i in pool])
    z = [pool[i] for i in local]
    excluded = set(z) | set(keyframe_indices)
    evaluation = [i for i in range(n_frames) if i not in excluded]
    return z, evaluation


def config_digest(training_config: TrainingConfig, generator_config: GeneratorConfig,
                  z_indices: Sequence[int]) -> str:
    doc = {
        "training": dataclasses.asdict(training_config),
        "generator": dataclasses.asdict(generator_config),
        "z": list(z_indices),
    }
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()


def evaluate_checkpoint(ckpt: Checkpoint, keyframes, frames: Sequence[ImageBuffer],
                        eval_indices: Sequence[int], extractor: FeatureExtractor | None = None,
                        label: str = "", z_indices: Sequence[int] = ()) -> MetricReport:
    extractor = extractor or default_extractor()
    kf_l1 = float(np.mean([
        float(l1_loss(stylize_image(ckpt, k.source), k.style)) for k in keyframes
    ]))
    targets = [_grams(k.style, extractor) for k in keyframes]
    per_frame = []
    for i in eval_indices:
        out = stylize_image(ckpt, frames[i])
        with torch.no_grad():
            feats = extract_features(out, extractor)
            sd = float(np.mean([float(style_loss_to_grams(feats, t)) for t in targets]))
        per_frame.append({"index": int(i), "style_distance": sd,
                          "input_l1": float(l1_loss(out, frames[i]))})
    sd_mean = float(np.mean([r["style_distance"] for r in per_frame])) if per_frame else 0.0
    return MetricReport(
        style_distance=sd_mean,
        keyframe_l1=kf_l1,
        per_frame=per_frame,
        config_digest=config_digest(ckpt.training_config, ckpt.generator_config, z_indices),
        label=label,
        z_indices=list(z_indices),
    )


def _train_and_eval(dataset: Dataset, z, evaluation, tcfg, gcfg, extractor, label, out_dir):
    unpaired = UnpairedSet(tuple(dataset.frames[i] for i in z), tuple(z))
    run_dir = Path(out_dir) / label if out_dir is not None else None
    ckpt = train(dataset.keyframes, unpaired, tcfg, gcfg, out_dir=run_dir, extractor=extractor)
    report = evaluate_checkpoint(ckpt, dataset.keyframes, dataset.frames, evaluation,
                                 extractor, label, z)
    report.extra["style_log_max"] = max(r.style_term for r in ckpt.history)
    if run_dir is not None:
        write_report([report], run_dir / "report")
    return report


ABLATION_ARMS = ("l1_only", "vgg_only", "full")


@dataclass
class AblationResult:
    arms: dict[str, list[MetricReport]]
    seeds: list[int]
    failures: dict[str, str] = field(default_factory=dict)

    def orderings(self) -> list[dict]:
        rows = []
        for s, (l1o, vggo, full) in enumerate(zip(*(self.arms[a] for a in ABLATION_ARMS))):
            rows.append({
                "seed": self.seeds[s],
                "style_full_lt_l1_only": full.style_distance < l1o.style_distance,
                "keyframe_full_lt_vgg_only": full.keyframe_l1 < vggo.keyframe_l1,
            })
        return rows

    def holds(self) -> bool:
        rows = self.orderings()
        return bool(rows) and all(r["style_full_lt_l1_only"] and r["keyframe_full_lt_vgg_only"]
                                  for r in rows)

    def reports(self) -> list[MetricReport]:
        return [r for a in ABLATION_ARMS for r in self.arms[a]]


def ablation_report(dataset: Dataset, seeds: Sequence[int] = (0,),
                    training_config: TrainingConfig | None = None,
                    generator_config: GeneratorConfig | None = None,
                    spec: SamplingSpec = SamplingSpec("uniform", 0.1),
                    extractor: FeatureExtractor | None = None,
                    out_dir=None, keyframe_indices=(0,)) -> AblationResult:
    """Train the L1-only (lambda 0), style-only (L1 weight 0) and full arms per seed."""
    if len(dataset.frames) < 2:
        raise ValueError("ablation needs at least two unpaired frames")
    extractor = extractor or default_extractor()
    base = training_config or TrainingConfig.desk()
    gcfg = generator_config or GeneratorConfig()
    z, evaluation = split_frames(len(dataset.frames), spec, dataset.frames, keyframe_indices)
    arms = {a: [] for a in ABLATION_ARMS}
    failures = {}
    for seed in seeds:
        variants = {
            "l1_only": dataclasses.replace(base, seed=seed, lambda_override=0.0),
            "vgg_only": dataclasses.replace(base, seed=seed, l1_weight=0.0),
            "full": dataclasses.replace(base, seed=seed),
        }
        for arm, tcfg in variants.items():
            label = f"{arm}_seed{seed}"
            try:
                arms[arm].append(_train_and_eval(dataset, z, evaluation, tcfg, gcfg,
                                                 extractor, label, out_dir))
            except TrainingDivergence as exc:
                log.error("arm %s diverged: %s", label, exc)
                failures[label] = str(exc)
    return AblationResult(arms, list(seeds), failures)


def sampling_report(dataset: Dataset, strategies: Sequence[str] = ("dense", "uniform", "adaptive"),
                    fraction: float = 0.1, training_config: TrainingConfig | None = None,
                    generator_config: GeneratorConfig | None = None,
                    extractor: FeatureExtractor | None = None, out_dir=None,
                    keyframe_indices=(0,), holdout_every: int = 5) -> dict[str, MetricReport]:
    """One model per sampling strategy, scored on frames outside every Z."""
    n = len(dataset.frames)
    if n < 20:
        raise ValueError("sampling study needs a sequence of at least 20 frames")
    extractor = extractor or default_extractor()
    tcfg = training_config or TrainingConfig.desk()
    gcfg = generator_config or GeneratorConfig()
    splits = {}
    for s in dict.fromkeys(strategies):
        spec = SamplingSpec(s, 1.0 if s == "dense" else fraction)
        splits[s] = split_frames(n, spec, dataset.frames, keyframe_indices, holdout_every)
    used = set().union(*(set(z) for z, _ in splits.values())) | set(keyframe_indices)
    evaluation = [i for i in range(n) if i not in used]
    return {
        s: _train_and_eval(dataset, z, evaluation, tcfg, gcfg, extractor, f"sampling_{s}", out_dir)
        for s, (z, _) in splits.items()
    }


def content_report(dataset: Dataset, weights: Sequence[float],
                   training_config: TrainingConfig | None = None,
                   generator_config: GeneratorConfig | None = None,
                   spec: SamplingSpec = SamplingSpec("uniform", 0.1),
                   extractor: FeatureExtractor | None = None, out_dir=None,
                   keyframe_indices=(0,)) -> list[MetricReport]:
    """Sweep the optional content-loss weight with everything else fixed."""
    extractor = extractor or default_extractor()
    base = training_config or TrainingConfig.desk()
    gcfg = generator_config or GeneratorConfig()
    z, evaluation = split_frames(len(dataset.frames), spec, dataset.frames, keyframe_indices)
    return [
        _train_and_eval(dataset, z, evaluation,
                        dataclasses.replace(base, content_loss_weight=float(w)),
                        gcfg, extractor, f"content_{w:g}", out_dir)
        for w in weights
    ]


def format_table(reports: Sequence[MetricReport]) -> str:
    head = f"{'run':<24} {'style_distance':>15} {'keyframe_l1':>12} {'input_l1':>10}  z_indices"
    lines = [head, "-" * len(head)]
    for r in reports:
        lines.append(f"{r.label:<24} {r.style_distance:>15.6g} {r.keyframe_l1:>12.6g} "
                     f"{r.input_l1:>10.4g}  {','.join(map(str, r.z_indices))}")
    return "\n".join(lines) + "\n"


def write_report(reports: Sequence[MetricReport], stem) -> tuple[Path, Path]:
    """Write ``<stem>.txt`` (table) and ``<stem>.json`` (key-value records)."""
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    txt, js = stem.with_suffix(".txt"), stem.with_suffix(".json")
    txt.write_text(format_table(reports))
    js.write_text(json.dumps([r.to_kv() for r in reports], indent=2, sort_keys=True))
    return txt, js
