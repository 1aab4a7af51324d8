"""Sweep the content-loss weight and report held-out style distance."""

import dataclasses

from _common import parser, setup
from keyframe_stylize.evaluation import content_report, format_table, write_report


def main(argv=None):
    ap = parser(__doc__)
    ap.add_argument("--weights", type=float, nargs="+", default=[0.0, 1.0, 10.0])
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    ds, tcfg, gcfg = setup(args)
    tcfg = dataclasses.replace(tcfg, seed=args.seed)
    reports = content_report(ds, args.weights, tcfg, gcfg, out_dir=args.out)
    print(format_table(reports))
    dist = [r.style_distance for r in reports]
    print("monotone:", all(a < b for a, b in zip(dist, dist[1:])))
    if args.out:
        write_report(reports, f"{args.out}/content")


if __name__ == "__main__":
    main()
