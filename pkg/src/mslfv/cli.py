"""Command-line entry point.

Exit codes: 0 success, 1 configuration or validation error, 2 runtime fault.
"""
from __future__ import annotations

import argparse
import logging
import sys

from . import __version__, harness
from .config import ExperimentConfig
from .model import ConfigurationError
from .pde import InstabilityError
from .simulate import AssumptionBreach

EXIT_OK, EXIT_INVALID, EXIT_FAULT = 0, 1, 2


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-c", "--config", help="TOML experiment configuration")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override a config key (repeatable), e.g. --set sim.T_end=50")
    common.add_argument("--preset", choices=["full", "desk"], help="full: 2000 replicates; desk: 200 replicates (both T_end 125)")
    common.add_argument("-o", "--out", help="output directory (default: io.out_dir)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="mslfv", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"mslfv {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    s = sub.add_parser("simulate", parents=[common], help="run replicates and write identity tables")
    s.add_argument("-j", "--workers", type=int, help="worker processes (default: rng.workers or all cores)")
    sub.add_parser("predict", parents=[common], help="steady state, Theta and aligned prediction")
    c = sub.add_parser("compare", parents=[common], help="compare simulated and predicted identity")
    c.add_argument("--sim", help="simulated identity table (default: <out>/identity_sim.csv)")
    c.add_argument("--pred", help="prediction table (default: <out>/prediction.csv)")
    d = sub.add_parser("diagnostics", parents=[common], help="operator convergence and QV cross-check")
    d.add_argument("-j", "--workers", type=int)
    sub.add_parser("steady-state", parents=[common], help="stationary population profile only")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = ExperimentConfig.load(args.config, args.overrides, args.preset)
        if getattr(args, "workers", None) is not None and args.workers < 1:
            raise ConfigurationError("--workers must be at least 1")
    except (ConfigurationError, ValueError, TypeError) as exc:
        print(f"mslfv: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_INVALID
    out = args.out or cfg.io.out_dir
    try:
        if args.command == "simulate":
            info = harness.cmd_simulate(cfg, out, args.workers)
            print(f"wrote {info['replicates']} replicates to {out}")
        elif args.command == "predict":
            info = harness.cmd_predict(cfg, out)
            print(f"prediction written to {out} (steady state converged={info['converged']}, "
                  f"residual={info['residual']:.3e})")
        elif args.command == "steady-state":
            ss = harness.cmd_steady_state(cfg, out)
            print(f"steady profile written to {out} (converged={ss.converged}, residual={ss.residual:.3e})")
        elif args.command == "compare":
            s = harness.cmd_compare(cfg, out, args.sim, args.pred)
            cov = "NA" if s.coverage is None else f"{s.coverage:.3f}"
            n_star = "NA" if s.N_star is None else f"{s.N_star:.4g}"
            n_win = "NA" if s.N_star_window is None else f"{s.N_star_window:.4g}"
            print(f"coverage {cov} over {s.positions} positions; N={s.N:g}, best-fit N*={n_star} "
                  f"(within window: {n_win})")
            if s.ratio_sim is not None:
                print(f"identity(45,55)/identity(45,46): simulation {s.ratio_sim:.3f}, "
                      f"prediction {s.ratio_pred:.3f}")
        elif args.command == "diagnostics":
            res = harness.cmd_diagnostics(cfg, out, args.workers)
            for k, v in res.items():
                print(f"{k:32s} {v:.6g}")
    except (ConfigurationError, FileNotFoundError, KeyError) as exc:
        print(f"mslfv: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (AssumptionBreach, InstabilityError, FloatingPointError, RuntimeError) as exc:
        print(f"mslfv: runtime fault: {exc}", file=sys.stderr)
        return EXIT_FAULT
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
