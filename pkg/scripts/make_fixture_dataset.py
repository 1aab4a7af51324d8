"""Write a synthetic keyframe dataset (frames/ and keyframes/) to disk."""

import argparse

from keyframe_stylize.fixtures import make_dataset, write_dataset


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("out")
    ap.add_argument("--frames", type=int, default=24)
    ap.add_argument("--size", type=int, default=64)
    ap.add_argument("--keyframes", type=int, nargs="+", default=[0])
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    ds = make_dataset(args.frames, args.size, tuple(args.keyframes), args.seed)
    root = write_dataset(args.out, ds)
    print(f"{len(ds.frames)} frames, {len(ds.keyframes)} keyframe(s) -> {root}")


if __name__ == "__main__":
    main()
