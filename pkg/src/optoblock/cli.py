"""``optoblock`` command line.

Exit status: 0 when every point is ok, 2 when some point is flagged
(unstable, unconverged, error, or a cross-validation deviation above 10%),
1 on configuration or system errors.
"""
from __future__ import annotations

import argparse
import logging
import sys

from . import sweep
from .params import validate_params

EXIT_OK, EXIT_ERROR, EXIT_FLAGGED = 0, 1, 2


def _common(parser):
    parser.add_argument("--config", metavar="PATH", help="flat key = value configuration file")
    parser.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override a configuration key (repeatable)")
    parser.add_argument("--out", metavar="PATH.csv", help="CSV output (default: stdout)")
    parser.add_argument("--manifest", metavar="PATH.json", help="write the run manifest here")
    parser.add_argument("--workers", type=int, metavar="N", help="worker processes (default: available CPUs)")
    parser.add_argument("--method", choices=sweep.METHODS, help="solver")
    parser.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="optoblock", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in (
        ("scan", "g2(0) and related quantities over a 1-2 axis grid"),
        ("g2tau", "g2(tau) on a delay grid (Langevin only)"),
        ("xval", "Langevin vs master-equation g2_aa(0) on a grid"),
        ("optimum", "closed-form optimal detuning/coupling vs scanned argmin"),
        ("validate", "check parameter regime and configuration without computing"),
    ):
        _common(sub.add_parser(name, help=text, description=text))
    return parser


def _workers(args, run):
    if args.workers is not None:
        if args.workers < 1:
            raise sweep.ConfigError("--workers must be >= 1")
        return args.workers
    return run.get("workers")


def _emit(rows, columns, args, out):
    if args.out:
        sweep.write_csv(rows, columns, args.out)
    else:
        sweep.write_csv(rows, columns, out)


def main(argv=None, out=None) -> int:
    out = out or sys.stdout
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        overrides = sweep.parse_overrides(args.overrides)
        if args.command == "xval" and args.method not in (None, "both"):
            raise sweep.ConfigError("xval always runs method=both")
        method = "both" if args.command == "xval" else args.method
        if args.command == "g2tau":
            if args.method not in (None, "langevin"):
                raise sweep.ConfigError("g2tau is only available with method=langevin")
            method = "langevin"
            if not any(k.startswith("tau.") for k in overrides) and args.config is None:
                raise sweep.ConfigError("g2tau needs a tau grid (tau.start/tau.stop/tau.count)")
        spec, run = sweep.load_spec(args.config, overrides, method)
        if args.command == "g2tau" and spec.tau is None:
            raise sweep.ConfigError("g2tau needs a tau grid (tau.start/tau.stop/tau.count)")
        if args.command != "g2tau" and spec.tau is not None:
            raise sweep.ConfigError("tau.* keys are only used by g2tau")
        workers = _workers(args, run)
    except sweep.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_ERROR

    try:
        if args.command == "validate":
            status = EXIT_OK
            for values in spec.points():
                report = validate_params(spec.base.replace(**values))
                prefix = " ".join(f"{k}={sweep.format_value(v)}" for k, v in values.items())
                for line in report.lines():
                    print(f"{prefix} {line}".strip(), file=out)
                if not report.ok:
                    status = EXIT_FLAGGED
            print(f"grid points: {len(spec.points())}, method: {spec.method}, columns: {','.join(spec.columns())}", file=out)
            return status

        if args.command == "optimum":
            b = spec.base
            report = sweep.optimum_report(
                b.J, b.kappa_a, b.omega_m, base=b,
                scan=bool(run.get("optimum.scan", 1)),
                window=run.get("optimum.window", 0.1),
                step=run.get("optimum.step", 0.01),
                workers=workers,
            )
            for line in report.lines():
                print(line, file=out)
            return EXIT_FLAGGED if report.errors else EXIT_OK

        if args.command == "xval":
            xv = sweep.cross_validate(spec, workers)
            _emit(xv.rows, spec.columns(), args, out)
            if args.manifest:
                xv.manifest.write(args.manifest)
            for line in xv.lines():
                print(line, file=sys.stderr)
            return EXIT_FLAGGED if xv.flagged else EXIT_OK

        rows, manifest = sweep.run_sweep(spec, workers)
        _emit(rows, spec.columns(), args, out)
        if args.manifest:
            manifest.write(args.manifest)
        return EXIT_OK if manifest.all_ok else EXIT_FLAGGED
    except OSError as exc:
        print(f"system error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
