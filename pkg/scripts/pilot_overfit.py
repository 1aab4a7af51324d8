"""Overfit one keyframe and print the L1 trace; used to size the smoke test."""

import time

from _common import parser, setup
from keyframe_stylize.core import UnpairedSet
from keyframe_stylize.trainer import train


def main(argv=None):
    ap = parser(__doc__)
    ap.set_defaults(base_channels=32)
    ap.add_argument("--z", type=int, nargs="+", default=[12])
    args = ap.parse_args(argv)
    ds, tcfg, gcfg = setup(args)
    z = UnpairedSet(tuple(ds.frames[i] for i in args.z), tuple(args.z))
    t0 = time.perf_counter()
    ckpt = train(ds.keyframes, z, tcfg, gcfg, out_dir=args.out)
    h = ckpt.history
    for i in sorted(set(range(0, len(h), max(1, len(h) // 10))) | {len(h) - 1}):
        r = h[i]
        print(f"{i + 1:>6} l1={r.l1_term:.4f} style={r.style_term:.4g} total={r.total:.4g}")
    print(f"L1 reduction {1 - h[-1].l1_term / h[0].l1_term:.1%} in {time.perf_counter() - t0:.0f}s")


if __name__ == "__main__":
    main()
