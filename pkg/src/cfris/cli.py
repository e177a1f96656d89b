"""Command line harness: ``simulate <scenario> --config <path> --out <dir>``."""

import argparse
import sys

from .experiments import SCENARIOS, ConfigError, load_config, run_scenario


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="simulate",
        description="Run a two-timescale cell-free/RIS experiment scenario.")
    parser.add_argument("scenario", choices=SCENARIOS)
    parser.add_argument("--config", help="flat key = value config file")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--seed", type=int, default=None, help="master seed override")
    parser.add_argument("--samples", type=int, default=None,
                        help="Monte-Carlo sample count override")
    parser.add_argument("--preset", default=None,
                        help="base parameter preset (paper-table2, paper-fig2, desk)")
    parser.add_argument("--no-plots", action="store_true",
                        help="skip figure rendering (CSV/manifest only)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.config is None and args.preset is None:
            raise ConfigError("provide --config and/or --preset")
        cfg = load_config(args.config, preset=args.preset,
                          overrides={"seed": args.seed, "n_samples": args.samples})
        manifest = run_scenario(args.scenario, cfg, args.out, plots=not args.no_plots)
    except (ConfigError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"{args.scenario}: wrote {', '.join(manifest['outputs'])} to {args.out} "
          f"({manifest['wall_clock_s']}s)")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
