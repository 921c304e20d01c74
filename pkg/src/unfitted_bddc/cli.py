"""Command-line entry point: ``unfitted-bddc <experiment> [--config FILE] [--out DIR]``."""

import argparse
import contextlib
import logging
import sys

from .experiments import DRIVERS, convergence_slopes, load_config, preset, write_results

logger = logging.getLogger("unfitted_bddc")


def _thread_limit(n):
    if n is None:
        return contextlib.nullcontext()
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:
        logger.info("threadpoolctl not installed; --threads ignored")
        return contextlib.nullcontext()
    return threadpool_limits(limits=n)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="unfitted-bddc",
        description="Unfitted FEM + BDDC experiments; results go to CSV and JSON files.",
    )
    sub = parser.add_subparsers(dest="experiment", required=True)
    for name in DRIVERS:
        p = sub.add_parser(name, help=f"run the {name} experiment")
        p.add_argument("--config", help="key = value file refining the built-in defaults")
        p.add_argument("--out", default="results", help="output directory (default: results)")
        p.add_argument("--max-dofs", type=int, help="skip meshes with more DOFs than this")
        p.add_argument("--threads", type=int, help="BLAS thread limit")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def _summary(records):
    cols = ("mesh_id", "preconditioner", "eps_over_h", "n_dof", "n_sd", "coarse_dofs", "iters", "cond_est")
    print("  ".join(f"{c:>14}" for c in cols))
    for r in records:
        vals = [getattr(r, c) for c in cols]
        print("  ".join(f"{v:>14.4g}" if isinstance(v, float) else f"{v!s:>14}" for v in vals))


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    config = preset(args.experiment)
    if args.config:
        config = load_config(args.config, base=config)
    if args.max_dofs is not None:
        config.max_dofs = args.max_dofs
    with _thread_limit(args.threads):
        records = DRIVERS[args.experiment](config)
    if not records:
        print("no runs fit in the DOF budget", file=sys.stderr)
        return 1
    extra = {"threads": args.threads}
    if args.experiment == "convergence" and len(records) > 1:
        l2, h1 = convergence_slopes(records)
        extra["slopes"] = {"l2": l2, "h1": h1}
        print(f"slopes: L2 {l2:.3f}, H1 {h1:.3f}")
    path = write_results(args.out, args.experiment, records, config, extra)
    _summary(records)
    print(f"wrote {path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
