"""``bnn`` command line: boundary | train | eval | noise-sweep | p-sweep.

Settings come from a JSON config file; flags override the file, which
overrides built-in defaults. Exit codes: 0 success, 1 configuration error,
2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import logging
import sys

from .errors import ConfigError, DataError, NumericError, ParameterError
from .experiments import EXPERIMENTS, ExperimentConfig, default_mask, read_config_file, run
from .masks import parse_kind

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bnn", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=EXPERIMENTS)
    parser.add_argument("--config", help="JSON experiment config (defaults used when omitted)")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--mc-samples", type=int)
    parser.add_argument("--mask-kind", help="MAP, BDC, BDO, GDC, GDO, SSD or the full kind name")
    parser.add_argument("--p", type=float, help="drop probability (p_do for SSD)")
    parser.add_argument("--p-dc", type=float, help="SSD dropconnect probability")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--checkpoint", help="checkpoint for eval/noise-sweep (default: <out>/checkpoint.json)")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    raw = read_config_file(args.config) if args.config else {}
    raw["experiment"] = args.command
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.mc_samples is not None:
        raw["mc_samples"] = args.mc_samples
    if args.out is not None:
        raw["out"] = args.out
    mask = dict(raw.get("mask", {}))
    if args.mask_kind is not None:
        try:
            kind = parse_kind(args.mask_kind)
            if kind is not parse_kind(mask.get("kind", "MAP")):
                # probabilities in the file belong to the old kind
                mask = default_mask(args.command, kind).to_dict()
        except ParameterError as exc:
            raise ConfigError(str(exc)) from None
    if args.p is not None:
        mask["p"] = args.p
    if args.p_dc is not None:
        mask["p_dc"] = args.p_dc
    raw["mask"] = mask
    return ExperimentConfig.from_dict(raw)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        cfg = resolve_config(args)
        run(cfg, args.checkpoint)
    except (ConfigError, ParameterError) as exc:
        print(f"bnn: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, FileNotFoundError) as exc:
        print(f"bnn: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"bnn: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
