"""Command-line front-end over the package's text file formats.

Exit codes: 0 success, 2 usage error, 3 validation error, 4 numerical error.
Errors are printed to stderr as one line: ``error: <Kind>: <message>``.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import analysis, loop_detector, model, pipeline, reconstruction
from .errors import (
    ClassicalRegimeError,
    DegenerateInputError,
    PhysicalityError,
    SubPoissonianMarginalError,
    SupportError,
    TruncationError,
    ValidationError,
)

_VALIDATION = (ValidationError, ClassicalRegimeError, PhysicalityError)
_NUMERICAL = (
    TruncationError,
    SupportError,
    DegenerateInputError,
    SubPoissonianMarginalError,
)


def _echo_config(args: argparse.Namespace) -> None:
    skip = {"func", "parser"}
    for key in sorted(vars(args)):
        if key not in skip:
            print(f"config: {key}={getattr(args, key)}")


def _parse_grid(spec: str, parser: argparse.ArgumentParser) -> np.ndarray:
    """Grid spec: 'lin:start:stop:num', 'log:start:stop:num' or 'v1,v2,...'."""
    spec = spec.strip()
    if not spec:
        parser.error("empty grid specification")
    try:
        if spec.startswith("lin:") or spec.startswith("log:"):
            kind, start, stop, num = spec.split(":")
            start, stop, num = float(start), float(stop), int(num)
            if num < 1:
                raise ValueError
            if kind == "lin":
                return np.linspace(start, stop, num)
            return np.geomspace(start, stop, num)
        return np.array([float(v) for v in spec.split(",")])
    except ValueError:
        parser.error(f"bad grid specification {spec!r}")


def _cmd_model(args) -> int:
    src = model.EffectiveSource(
        N=args.N, eta=args.eta, eta_prime=args.eta_prime, M=args.M
    )
    dist = model.joint_distribution(src, args.n_max, tail_bound=args.tail_bound)
    model.write_distribution(dist, args.out)
    print(f"sum={dist.probs.sum():.17g}")
    print(f"tail_mass={dist.tail_mass:.17g}")
    return 0


def _cmd_simulate(args) -> int:
    cfg = pipeline.read_config(args.config)
    hist = pipeline.simulate_experiment(cfg)
    reconstruction.write_histogram(hist, args.out)
    print(f"pulses={hist.pulses}")
    print(f"counts={int(hist.f.sum())}")
    if args.responses_dir is not None:
        out = Path(args.responses_dir)
        out.mkdir(parents=True, exist_ok=True)
        n_max = args.resp_n_max if args.resp_n_max is not None else cfg.n_max
        for arm, weights in (("a", cfg.weights_a), ("b", cfg.weights_b)):
            resp = loop_detector.response_matrix(weights, n_max)
            loop_detector.write_response(resp, out / f"response_{arm}.txt")
        print(f"responses_dir={out}")
    return 0


def _cmd_reconstruct(args) -> int:
    hist = reconstruction.read_histogram(args.hist)
    resp_a = loop_detector.read_response(args.resp_a)
    resp_b = loop_detector.read_response(args.resp_b)
    result = reconstruction.em_reconstruct(
        hist, resp_a, resp_b, args.n_max, tol=args.tol, max_iter=args.max_iter
    )
    model.write_distribution(result.rho, args.rho_out)
    if args.report_out is not None:
        Path(args.report_out).write_text(reconstruction.format_run_report(result))
    print(f"iterations={result.iterations}")
    print(f"converged={result.converged}")
    print(f"log_likelihood={result.log_likelihood_trace[-1]:.17g}")
    if not result.converged:
        print(
            f"warning: not converged after {result.iterations} iterations",
            file=sys.stderr,
        )
    return 0


def _cmd_analyze(args) -> int:
    rho = model.read_distribution(args.rho)
    char = analysis.characterize(rho)
    text = analysis.format_characterization(char)
    if args.out is not None:
        Path(args.out).write_text(text)
    print(text, end="")
    return 0


def _cmd_map(args) -> int:
    eps = analysis.contamination_map(
        args.eta_grid, args.rate_grid, M=args.M, which=args.which
    )
    text = analysis.format_map(eps, args.eta_grid, args.rate_grid, args.M, args.which)
    Path(args.out).write_text(text)
    print(f"cells={eps.size}")
    print(f"unachievable={int(np.isnan(eps).sum())}")
    return 0


def _cmd_pipeline(args) -> int:
    cfg = pipeline.read_config(args.config)
    report = pipeline.run_full(cfg)
    report.write(args.out_dir)
    for stage, message in report.failures.items():
        print(f"failed: {stage}: {message}", file=sys.stderr)
    if report.characterization is not None:
        print(f"M_hat={report.characterization.M_hat:.17g}")
        print(f"eta_hat={report.characterization.eta_hat:.17g}")
    print(f"out_dir={args.out_dir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pairstats",
        description="Joint photon-number statistics of pulsed twin-beam sources.",
        epilog="exit codes: 0 success, 2 usage, 3 validation, 4 numerical",
    )
    default_threads = int(os.environ.get("PAIRSTATS_THREADS", "1"))
    sub = parser.add_subparsers(
        dest="subcommand",
        required=True,
        parser_class=lambda **kw: argparse.ArgumentParser(
            formatter_class=argparse.ArgumentDefaultsHelpFormatter, **kw
        ),
    )

    p = sub.add_parser("model", help="write the joint photon-number distribution")
    p.add_argument("--N", type=float, required=True, help="mean pairs per mode")
    p.add_argument("--eta", type=float, required=True, help="arm-a transmission")
    p.add_argument("--eta-prime", type=float, required=True, dest="eta_prime")
    p.add_argument("--M", type=float, default=1.0, help="equivalent mode number")
    p.add_argument("--n-max", type=int, required=True, dest="n_max")
    p.add_argument("--tail-bound", type=float, default=None, dest="tail_bound")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_model)

    p = sub.add_parser("simulate", help="simulate a click histogram from a config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="histogram output path")
    p.add_argument(
        "--responses-dir",
        default=None,
        dest="responses_dir",
        help="also write the true-weight response matrices here",
    )
    p.add_argument("--resp-n-max", type=int, default=None, dest="resp_n_max")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("reconstruct", help="invert a histogram by maximum likelihood")
    p.add_argument("--hist", required=True)
    p.add_argument("--resp-a", required=True, dest="resp_a")
    p.add_argument("--resp-b", required=True, dest="resp_b")
    p.add_argument("--n-max", type=int, required=True, dest="n_max")
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--max-iter", type=int, default=100_000, dest="max_iter")
    p.add_argument("--rho-out", required=True, dest="rho_out")
    p.add_argument("--report-out", default=None, dest="report_out")
    p.add_argument("--threads", type=int, default=default_threads)
    p.set_defaults(func=_cmd_reconstruct)

    p = sub.add_parser("analyze", help="source parameters from a distribution file")
    p.add_argument("--rho", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_analyze)

    p = sub.add_parser("map", help="contamination contour matrix")
    p.add_argument("--which", type=int, choices=(2, 4), required=True)
    p.add_argument("--M", type=float, default=1.0)
    p.add_argument("--eta-grid", required=True, dest="eta_grid")
    p.add_argument("--rate-grid", required=True, dest="rate_grid")
    p.add_argument("--out", required=True)
    p.add_argument("--threads", type=int, default=default_threads)
    p.set_defaults(func=_cmd_map)

    p = sub.add_parser("pipeline", help="full run: calibrate, collect, reconstruct")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", required=True, dest="out_dir")
    p.add_argument("--threads", type=int, default=default_threads)
    p.set_defaults(func=_cmd_pipeline)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.subcommand == "map":
        args.eta_grid = _parse_grid(args.eta_grid, parser)
        args.rate_grid = _parse_grid(args.rate_grid, parser)
    if getattr(args, "threads", 1) < 1:
        parser.error("--threads must be >= 1")
    _echo_config(args)
    try:
        return args.func(args)
    except _VALIDATION as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3
    except _NUMERICAL as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 4


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
