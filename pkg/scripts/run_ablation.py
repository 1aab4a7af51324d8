"""L1-only vs style-only vs full objective on the synthetic fixture."""

import json
import time

from _common import parser, setup
from keyframe_stylize.evaluation import ablation_report, format_table, write_report


def main(argv=None):
    ap = parser(__doc__)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    args = ap.parse_args(argv)
    ds, tcfg, gcfg = setup(args)
    t0 = time.perf_counter()
    res = ablation_report(ds, args.seeds, tcfg, gcfg, out_dir=args.out)
    print(format_table(res.reports()))
    print(json.dumps(res.orderings(), indent=1))
    print(f"orderings hold: {res.holds()}  ({time.perf_counter() - t0:.0f}s)")
    if args.out:
        write_report(res.reports(), f"{args.out}/ablation")


if __name__ == "__main__":
    main()
