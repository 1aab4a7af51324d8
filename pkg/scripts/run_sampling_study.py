"""Dense vs uniform vs adaptive choice of the unpaired frames."""

from _common import parser, setup
from keyframe_stylize.evaluation import format_table, sampling_report, write_report


def main(argv=None):
    ap = parser(__doc__)
    ap.add_argument("--fraction", type=float, default=0.1)
    args = ap.parse_args(argv)
    ds, tcfg, gcfg = setup(args)
    reports = list(sampling_report(ds, fraction=args.fraction, training_config=tcfg,
                                   generator_config=gcfg, out_dir=args.out).values())
    print(format_table(reports))
    if args.out:
        write_report(reports, f"{args.out}/sampling")


if __name__ == "__main__":
    main()
