import argparse
import logging

from keyframe_stylize.core import TrainingConfig
from keyframe_stylize.fixtures import make_dataset
from keyframe_stylize.generator import GeneratorConfig


def parser(doc):
    ap = argparse.ArgumentParser(description=doc)
    ap.add_argument("--out", default=None, help="directory for per-run artifacts and reports")
    ap.add_argument("--frames", type=int, default=24)
    ap.add_argument("--size", type=int, default=64)
    ap.add_argument("--iterations", type=int, default=300)
    ap.add_argument("--base-channels", type=int, default=16)
    ap.add_argument("--residual-blocks", type=int, default=9)
    return ap


def setup(args):
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    ds = make_dataset(args.frames, args.size)
    tcfg = TrainingConfig.desk(iterations=args.iterations, long_side=args.size)
    gcfg = GeneratorConfig(residual_blocks=args.residual_blocks, base_channels=args.base_channels)
    return ds, tcfg, gcfg
