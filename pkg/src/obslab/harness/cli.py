"""Command line entry point: ``obslab {run,sweep,validate,rates}``.

Exit codes: 0 success, 1 invariant failure, 2 configuration error,
3 solver failure.
"""

import argparse
from concurrent.futures import ProcessPoolExecutor
import glob
import logging
import os
import sys

from obslab import theory
from obslab.discretize import ResolutionError
from obslab.geometry import GeometryError
from obslab.harness.config import ConfigError, load_config
from obslab.harness.report import write_report
from obslab.harness.runner import run_scenario
from obslab.sparsela import SolverError

EXIT_OK, EXIT_INVARIANT, EXIT_CONFIG, EXIT_SOLVER = 0, 1, 2, 3


def thread_count(requested):
    env = os.environ.get("OBSLAB_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"OBSLAB_THREADS: not an integer: {env!r}") from None
    return max(1, requested or 1)


def _common(p):
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--threads", type=int, default=1,
                   help="worker processes (OBSLAB_THREADS overrides)")
    p.add_argument("--tol-cg", type=float, default=None, help="linear solve tolerance")
    p.add_argument("--tol-norm", type=float, default=None, help="power iteration tolerance")


def build_parser():
    parser = argparse.ArgumentParser(prog="obslab", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one configuration")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    _common(p)

    p = sub.add_parser("sweep", help="run several configurations")
    p.add_argument("--config", required=True, nargs="+",
                   help="config files or directories of *.json")
    p.add_argument("--out", required=True)
    _common(p)

    p = sub.add_parser("validate", help="run the acceptance criteria")
    p.add_argument("--only", default=None, help="comma-separated criterion numbers")
    p.add_argument("--out", default=None, help="also write a JSON summary here")
    _common(p)

    p = sub.add_parser("rates", help="print closed-form rates and regimes")
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--alpha", required=True, help="start:stop:step (inclusive) or a value")
    p.add_argument("--eps", type=float, default=1e-3)
    p.add_argument("--gamma", type=float, default=0.5)
    return parser


def _execute(path, out, seed, tol_cg, tol_norm):
    def progress(msg):
        logging.getLogger("obslab").info("%s: %s", os.path.basename(str(path)), msg)

    report = run_scenario(path, seed=seed, tol_cg=tol_cg, tol_norm=tol_norm, progress=progress)
    write_report(report, out)
    return report


def _print_checks(report, stream=sys.stdout):
    for c in report.checks:
        if not c.passed:
            where = f" eps={c.eps:.6g}" if c.eps is not None else ""
            print(f"FAIL {c.name}{where}: value={c.value} bound={c.bound} {c.detail}",
                  file=stream)
    status = "PASS" if report.passed else "FAIL"
    print(f"{status} {report.config.get('name')}: {len(report.checks)} checks, "
          f"{len(report.failures())} failed")


def cmd_run(args):
    report = _execute(args.config, args.out, args.seed, args.tol_cg, args.tol_norm)
    _print_checks(report)
    return exit_code(report)


def exit_code(report):
    if report.solver_failed:
        return EXIT_SOLVER
    return EXIT_OK if report.passed else EXIT_INVARIANT


def _expand(paths):
    out = []
    for p in paths:
        if os.path.isdir(p):
            out.extend(sorted(glob.glob(os.path.join(p, "*.json"))))
        else:
            out.append(p)
    return out


def cmd_sweep(args):
    paths = _expand(args.config)
    names = []
    for p in paths:
        cfg = load_config(p)
        names.append(cfg["name"])
    if len(set(names)) != len(names):
        raise ConfigError("name: configurations in a sweep need distinct names")
    jobs = [(p, os.path.join(args.out, name), args.seed, args.tol_cg, args.tol_norm)
            for p, name in zip(paths, names)]
    workers = thread_count(args.threads)
    if workers == 1:
        reports = [_execute(*job) for job in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            reports = list(pool.map(_execute, *zip(*jobs)))
    for r in reports:
        _print_checks(r)
    return max(exit_code(r) for r in reports)


def cmd_validate(args):
    from obslab import acceptance

    only = None
    if args.only:
        only = [int(x) for x in args.only.split(",")]
    results = acceptance.run_all(only=only, seed=args.seed or 0)
    print(acceptance.format_table(results))
    if args.out:
        acceptance.write_summary(results, args.out)
    return EXIT_OK if all(r.passed for r in results) else EXIT_INVARIANT


def parse_range(text):
    if ":" not in text:
        return [float(text)]
    start, stop, step = (float(x) for x in text.split(":"))
    if step <= 0:
        raise ConfigError("--alpha: step must be positive")
    count = int(round((stop - start) / step))
    return [round(start + j * step, 12) for j in range(count + 1)]


def cmd_rates(args):
    if args.m < 2:
        raise ConfigError("--m: dimension must be at least 2")
    rows = theory.rate_table(args.m, parse_range(args.alpha), args.eps, args.gamma)
    head = f"{'alpha':>8} {'regime':>12} {'proven':>7} {'dir_fade':>12} {'dir_solid':>12} {'rauch_taylor':>13}"
    print(head)
    for r in rows:
        proven = "-" if r["proven_fading"] is None else ("yes" if r["proven_fading"] else "no")
        fade = "-" if r["rate_dir_fading"] is None else f"{r['rate_dir_fading']:.4e}"
        print(f"{r['alpha']:>8.4g} {r['regime']:>12} {proven:>7} {fade:>12} "
              f"{r['rate_dir_solid']:>12.4e} {r['rauch_taylor']:>13.4e}")
    return EXIT_OK


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    handler = {"run": cmd_run, "sweep": cmd_sweep, "validate": cmd_validate,
               "rates": cmd_rates}[args.command]
    try:
        return handler(args)
    except (ConfigError, GeometryError, ResolutionError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
