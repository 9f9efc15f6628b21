"""Command-line interface.

Subcommands: ``simulate`` (one condition with dumps), ``sweep`` (full gain
grid), ``compare-msc`` (functional vs neuronal backend), ``gen-trace``
(write a drift trace CSV), ``validate-config``.  Flags override the
corresponding config fields.  Exit codes: 0 success, 2 configuration or
validation error, 1 runtime error.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace

from .config import ConfigError, RunConfig, default_config, load_config
from .eye import generate_drift, save_trace
from .harness import compare_backends, run_sweep, simulate_condition

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_CONFIG = 2


def _add_override_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON run configuration (defaults apply when omitted)")
    p.add_argument("--seed", type=int, help="override the master seed")
    p.add_argument("--output", help="override the output directory")
    p.add_argument("--gains", help="override the gain grid, comma-separated")
    p.add_argument("--repeats", type=int, help="override the repeat count")
    p.add_argument("--backend", choices=("functional", "msc"), help="override the matcher backend")
    p.add_argument("--plots", action="store_true", help="also write SVG ratio plots")


def _resolve_config(args: argparse.Namespace) -> RunConfig:
    cfg = load_config(args.config) if args.config else default_config()
    if args.seed is not None:
        cfg = replace(cfg, master_seed=args.seed)
    if args.output is not None:
        cfg = replace(cfg, output_dir=args.output)
    if args.gains is not None:
        try:
            gains = tuple(float(g) for g in args.gains.split(","))
        except ValueError:
            raise ConfigError(f"--gains: expected comma-separated numbers, got {args.gains!r}") from None
        cfg = replace(cfg, gains=gains)
    if args.repeats is not None:
        cfg = replace(cfg, repeats=args.repeats)
    if args.backend is not None:
        cfg = replace(cfg, engine=replace(cfg.engine, matcher_backend=args.backend))
    if args.plots:
        cfg = replace(cfg, plots=True)
    return cfg


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stabsim", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="run one condition and dump canvases + decisions")
    _add_override_flags(p_sim)
    p_sim.add_argument("--gain", type=float, help="gain for the condition (default: first of the grid)")
    p_sim.add_argument("--snapshot-every", type=int, help="canvas PGM dump cadence in steps")

    p_sweep = sub.add_parser("sweep", help="run the full gain x repeat grid")
    _add_override_flags(p_sweep)

    p_cmp = sub.add_parser("compare-msc", help="compare functional and neuronal matcher backends")
    _add_override_flags(p_cmp)

    p_gen = sub.add_parser("gen-trace", help="generate a drift trace CSV")
    p_gen.add_argument("--out", required=True, help="output CSV path")
    p_gen.add_argument("--seed", type=int, default=0)
    p_gen.add_argument("--diffusion", type=float, default=5.0, help="arcmin^2/s per axis")
    p_gen.add_argument("--duration", type=float, default=1.0, help="seconds")
    p_gen.add_argument("--rate", type=float, default=1000.0, help="Hz")

    p_val = sub.add_parser("validate-config", help="check a config file and exit")
    p_val.add_argument("--config", required=True)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "validate-config":
            load_config(args.config)
            print(f"{args.config}: ok")
            return EXIT_OK

        if args.command == "gen-trace":
            trace = generate_drift(args.seed, args.duration, args.diffusion, args.rate)
            save_trace(trace, args.out)
            print(f"wrote {len(trace)} samples to {args.out}")
            return EXIT_OK

        cfg = _resolve_config(args)
        if args.command == "simulate":
            if args.snapshot_every is not None:
                cfg = replace(cfg, snapshot_every=args.snapshot_every)
            paths = simulate_condition(cfg, gain=args.gain)
            print(f"decision log: {paths['decisions']}")
            print(f"percept track: {paths['percept']}")
            print(f"manifest: {paths['manifest']}")
            return EXIT_OK

        if args.command == "sweep":
            report = run_sweep(cfg)
            disc = "n/a" if report.discontinuity is None else f"{report.discontinuity:.3f}"
            print(f"sweep table: {report.sweep_csv}")
            print(f"discontinuity across gain 1: {disc}")
            print(f"manifest: {report.manifest_path}")
            return EXIT_OK

        if args.command == "compare-msc":
            report = compare_backends(cfg)
            print(f"agreement: {report.agreement:.6f} over {report.steps_compared} steps")
            print(f"canvases identical: {report.canvases_identical}")
            print(f"table: {report.table_path}")
            return EXIT_OK

        parser.error(f"unknown command {args.command}")
        return EXIT_CONFIG
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        print(f"invalid arguments: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
