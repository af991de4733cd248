"""Command-line entry point: ``weightspace <command> [--config C] [--out DIR] ...``."""
from __future__ import annotations

import argparse
import logging
import sys
from typing import Optional, Sequence

from threadpoolctl import threadpool_limits

from ..exceptions import ConfigError, MissingArtifactError, NumericalError
from ..tensor import set_default_dtype
from . import pipeline
from .config import load_config, resolve_seeds

EXIT_OK, EXIT_CONFIG, EXIT_MISSING, EXIT_NUMERICAL = 0, 2, 3, 4

COMMANDS = {
    "gen-data": "generate the training and shifted datasets (IDX files)",
    "train-zoo": "train the model zoo and assign train/val/test splits",
    "train-ae": "train a hyper-representation autoencoder on the zoo's train split",
    "eval": "reconstruction fidelity, max-performance delta and linear probes",
    "generate": "sample new models from a KDE over anchor latents",
    "grad-check": "Jacobian, Taylor and approximate behavioral-gradient analysis",
    "ablate-losses": "train one autoencoder per loss mix (S, B, C+S, C+S+B) and compare them",
    "ablate-queries": "train one autoencoder per query source and compare reconstructions",
    "sweep-beta": "train one autoencoder per structural/behavioral weight beta",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="weightspace", description="Weight-space learning experiments.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")
    for name, help_text in COMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", help="JSON experiment config (defaults apply to omitted keys)")
        p.add_argument("--out", default="run", help="run directory (default: ./run)")
        p.add_argument("--seed", type=int, help="master seed; overrides the config's 'seed'")
        p.add_argument("--threads", type=int, default=1, help="BLAS threads and zoo-training workers")
        p.add_argument("--precision", choices=("f32", "f64"), default="f32", help="autoencoder precision")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def _dispatch(args, cfg) -> None:
    with pipeline.RunDir(args.out) as run:
        pipeline.save_config(run, cfg, args.command)
        if args.command == "gen-data":
            pipeline.stage_gen_data(cfg, run)
        elif args.command == "train-zoo":
            pipeline.stage_train_zoo(cfg, run, n_jobs=args.threads)
        elif args.command == "train-ae":
            pipeline.stage_train_ae(cfg, run, args.precision)
        elif args.command == "eval":
            pipeline.stage_eval(cfg, run)
        elif args.command == "generate":
            pipeline.stage_generate(cfg, run)
        elif args.command == "grad-check":
            pipeline.stage_grad_check(cfg, run)
        elif args.command == "ablate-losses":
            pipeline.stage_ablate_losses(cfg, run, args.precision)
        elif args.command == "ablate-queries":
            pipeline.stage_ablate_queries(cfg, run, args.precision)
        elif args.command == "sweep-beta":
            pipeline.stage_sweep_beta(cfg, run, args.precision)


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        if args.seed is not None and args.seed < 0:
            raise ConfigError("--seed must be non-negative")
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg["seed"] = args.seed
        cfg = resolve_seeds(cfg)
        set_default_dtype("float64" if args.precision == "f64" else "float32")
        with threadpool_limits(limits=args.threads):
            _dispatch(args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MissingArtifactError as exc:
        print(f"missing artifact: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
