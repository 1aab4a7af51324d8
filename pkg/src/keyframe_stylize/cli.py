"""Command-line entry point: ``train``, ``stylize``, ``sample`` and ``evaluate``.

Exit codes: 0 success, 2 usage error, 3 training divergence, 4 artifact I/O.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import re
import sys
from pathlib import Path

from .core import (
    Dataset,
    ImageFormatError,
    KeyframePair,
    UnpairedSet,
    load_image,
    resize_long_side,
)
from .evaluation import (
    ablation_report,
    content_report,
    evaluate_checkpoint,
    format_table,
    sampling_report,
    write_report,
)
from .inference import StylizeJob, stylize_sequence
from .perceptual import WEIGHTS_ENV, default_extractor
from .runconfig import ConfigError, RunConfig, read_run_config, write_run_config
from .sampler import STRATEGIES, SamplingSpec, sample_indices, uniform_sample
from .trainer import CheckpointError, TrainingDivergence, checkpoint_digest, load_checkpoint, train

log = logging.getLogger("keyframe_stylize")

EXIT_OK, EXIT_USAGE, EXIT_DIVERGED, EXIT_IO = 0, 2, 3, 4


class UsageError(Exception):
    pass


class ArtifactError(Exception):
    pass


def _frame_paths(frames_dir) -> list[Path]:
    d = Path(frames_dir)
    if not d.is_dir():
        raise UsageError(f"frames directory {d} does not exist")
    paths = sorted(d.glob("*.png"))
    if not paths:
        raise UsageError(f"no PNG frames in {d}")
    return paths


def _load(path, long_side):
    try:
        img = load_image(path)
    except (ImageFormatError, FileNotFoundError) as exc:
        raise ArtifactError(str(exc)) from exc
    return resize_long_side(img, long_side) if long_side else img


def _load_keyframes(kdir, long_side) -> tuple[KeyframePair, ...]:
    kdir = Path(kdir)
    if not kdir.is_dir():
        raise UsageError(f"keyframes directory {kdir} does not exist")
    pairs = []
    for src in sorted(kdir.glob("*_source.png")):
        ident = src.name[: -len("_source.png")]
        sty = kdir / f"{ident}_style.png"
        if not sty.is_file():
            raise UsageError(f"keyframe {ident!r} has no {sty.name}")
        pairs.append(KeyframePair(_load(src, long_side), _load(sty, long_side), ident))
    if not pairs:
        raise UsageError(f"no *_source.png keyframes in {kdir}")
    return tuple(pairs)


def _keyframe_frame_indices(keyframes, frame_paths) -> list[int]:
    """Positions in the sequence of frames whose stem matches a keyframe id."""
    stems = {p.stem: i for i, p in enumerate(frame_paths)}
    out = []
    for k in keyframes:
        if k.identifier in stems:
            out.append(stems[k.identifier])
        else:
            m = re.search(r"\d+", k.identifier)
            if m and m.group().zfill(5) in stems:
                out.append(stems[m.group().zfill(5)])
    return sorted(set(out))


def _load_dataset(args, long_side) -> tuple[Dataset, list[int]]:
    keyframes = _load_keyframes(args.keyframes, long_side)
    paths = _frame_paths(args.frames)
    frames = tuple(_load(p, long_side) for p in paths)
    return Dataset(keyframes, frames, tuple(p.name for p in paths)), _keyframe_frame_indices(keyframes, paths)


def _read_indices(path) -> list[int]:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc}") from exc
    try:
        return [int(t) for t in text.split()]
    except ValueError as exc:
        raise UsageError(f"{path}: expected one integer index per line") from exc


def _run_config(args) -> RunConfig:
    cfg = read_run_config(args.config) if getattr(args, "config", None) else RunConfig()
    return cfg.with_overrides(
        seed=args.seed, iterations=args.iterations, fraction=args.fraction,
        strategy=args.strategy, lambda_override=getattr(args, "lam", None),
        content_loss_weight=getattr(args, "content_weight", None),
        long_side=args.long_side, learning_rate=args.learning_rate,
        base_channels=args.base_channels, residual_blocks=args.residual_blocks,
    )


def cmd_train(args) -> int:
    cfg = _run_config(args)
    if args.z_indices:
        cfg = dataclasses.replace(cfg, z_indices=tuple(_read_indices(args.z_indices)))
    long_side = cfg.training.long_side
    keyframes = _load_keyframes(args.keyframes, long_side)
    paths = _frame_paths(args.frames)
    if cfg.z_indices is not None:
        z = list(cfg.z_indices)
        if not z or min(z) < 0 or max(z) >= len(paths):
            raise UsageError(f"z indices out of range for {len(paths)} frames")
        frames = {i: _load(paths[i], long_side) for i in z}
    else:
        if cfg.sampling.strategy == "adaptive":
            all_frames = [_load(p, long_side) for p in paths]
            z = sample_indices(cfg.sampling, all_frames)
            frames = {i: all_frames[i] for i in z}
        elif cfg.sampling.strategy == "dense":
            z = list(range(len(paths)))
            frames = {i: _load(paths[i], long_side) for i in z}
        else:
            z = uniform_sample(len(paths), cfg.sampling.fraction)
            frames = {i: _load(paths[i], long_side) for i in z}
        cfg = dataclasses.replace(cfg, z_indices=tuple(z))
    unpaired = UnpairedSet(tuple(frames[i] for i in z), tuple(z))
    try:
        unpaired.check_compatible(keyframes)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_run_config(cfg, out / "config.txt")
    (out / "z_indices.txt").write_text("".join(f"{i}\n" for i in z))
    ckpt = train(keyframes, unpaired, cfg.training, cfg.generator, out_dir=out,
                 extractor=default_extractor())
    digest = checkpoint_digest(ckpt)
    (out / "checkpoint.sha256").write_text(digest + "\n")
    print(f"trained {ckpt.iteration} iterations on |Z|={len(z)}; checkpoint {out / 'checkpoint.kst'} "
          f"sha256 {digest[:16]}")
    return EXIT_OK


def cmd_stylize(args) -> int:
    try:
        ckpt = load_checkpoint(args.checkpoint, extractor=None)
    except CheckpointError as exc:
        raise ArtifactError(str(exc)) from exc
    long_side = args.long_side or ckpt.training_config.long_side
    job = StylizeJob(ckpt, _frame_paths(args.frames), Path(args.out), long_side,
                     skip_unreadable=args.skip_unreadable, workers=args.workers)
    try:
        summary = stylize_sequence(job)
    except (ImageFormatError, FileNotFoundError) as exc:
        raise ArtifactError(str(exc)) from exc
    for path, reason in summary.skipped:
        print(f"skipped {path}: {reason}", file=sys.stderr)
    print(summary.describe())
    return EXIT_OK


def cmd_sample(args) -> int:
    paths = _frame_paths(args.frames)
    spec = SamplingSpec(args.strategy, args.fraction)
    if spec.strategy == "adaptive":
        frames = [_load(p, args.long_side) for p in paths]
    else:
        frames = paths  # only the count matters
    for i in sample_indices(spec, frames):
        print(i)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    extractor = default_extractor()
    if args.report == "metrics":
        if not args.checkpoint:
            raise UsageError("--report metrics requires --checkpoint")
        try:
            ckpt = load_checkpoint(args.checkpoint, extractor=extractor)
        except CheckpointError as exc:
            raise ArtifactError(str(exc)) from exc
        long_side = args.long_side or ckpt.training_config.long_side
        dataset, kidx = _load_dataset(args, long_side)
        exclude = set(kidx) | set(_read_indices(args.z_indices) if args.z_indices else ())
        idx = [i for i in range(len(dataset.frames)) if i not in exclude]
        report = evaluate_checkpoint(ckpt, dataset.keyframes, dataset.frames, idx, extractor,
                                     label=Path(args.checkpoint).stem)
        reports = [report]
    else:
        cfg = _run_config(args)
        dataset, kidx = _load_dataset(args, cfg.training.long_side)
        kidx = kidx or [0]
        if args.report == "ablation":
            result = ablation_report(dataset, args.seeds, cfg.training, cfg.generator, cfg.sampling,
                                     extractor, out / "runs", kidx)
            reports = result.reports()
            (out / "ablation_orderings.json").write_text(json.dumps(
                {"orderings": result.orderings(), "holds": result.holds(),
                 "failures": result.failures}, indent=2))
        elif args.report == "sampling":
            res = sampling_report(dataset, STRATEGIES, cfg.sampling.fraction, cfg.training,
                                  cfg.generator, extractor, out / "runs", kidx)
            reports = list(res.values())
        else:
            reports = content_report(dataset, args.content_weights, cfg.training, cfg.generator,
                                     cfg.sampling, extractor, out / "runs", kidx)
    txt, js = write_report(reports, out / args.report)
    print(format_table(reports), end="")
    print(f"wrote {txt} and {js}")
    return EXIT_OK


def _add_common_training(p):
    p.add_argument("--config", help="flat key = value run config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--iterations", type=int)
    p.add_argument("--fraction", type=float)
    p.add_argument("--strategy", choices=STRATEGIES)
    p.add_argument("--long-side", type=int)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--base-channels", type=int)
    p.add_argument("--residual-blocks", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="keyframe-stylize",
        description=f"Few-shot keyframe stylization. Extractor weights: ${WEIGHTS_ENV}.",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="optimize a generator on keyframes + unpaired frames")
    p.add_argument("--keyframes", required=True)
    p.add_argument("--frames", required=True)
    p.add_argument("--out", required=True)
    _add_common_training(p)
    p.add_argument("--lambda", dest="lam", type=float, help="override the style weight")
    p.add_argument("--content-weight", type=float)
    p.add_argument("--z-indices", help="file with one frame index per line (output of `sample`)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("stylize", help="run a trained checkpoint over a frame directory")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--frames", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--long-side", type=int)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--skip-unreadable", action="store_true")
    p.set_defaults(func=cmd_stylize)

    p = sub.add_parser("sample", help="print the unpaired subset indices, one per line")
    p.add_argument("--frames", required=True)
    p.add_argument("--strategy", required=True, choices=STRATEGIES)
    p.add_argument("--fraction", type=float, default=0.1)
    p.add_argument("--long-side", type=int)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("evaluate", help="metrics for a checkpoint or an experiment harness")
    p.add_argument("--report", required=True, choices=("ablation", "sampling", "metrics", "content"))
    p.add_argument("--keyframes", required=True)
    p.add_argument("--frames", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--checkpoint")
    p.add_argument("--z-indices")
    p.add_argument("--seeds", type=int, nargs="+", default=[0])
    p.add_argument("--content-weights", type=float, nargs="+", default=[0.0, 1.0, 10.0])
    _add_common_training(p)
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingDivergence as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ArtifactError, OSError) as exc:
        print(f"artifact error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
