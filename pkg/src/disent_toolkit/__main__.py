"""CLI entry point for the disentanglement toolkit."""

import argparse
import logging
import os
import sys
from pathlib import Path

import uvicorn

from disent_toolkit.api.routes import RUNS_ROOT_ENV
from disent_toolkit.errors import ConfigError, DisentError, NumericError
from disent_toolkit.services.checkpoint import load_checkpoint
from disent_toolkit.services.config_loader import PROFILES, ConfigLoader, parse_metric_config
from disent_toolkit.services.evaluation import REPORT_NAME, evaluate_checkpoint, evaluate_tables
from disent_toolkit.services.synth_data import render_dataset
from disent_toolkit.services.trainer import CHECKPOINT_DIR, train
from disent_toolkit.services.traversal import export_traversals

logger = logging.getLogger("disent_toolkit")

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


def run_dir_of(checkpoint: Path) -> Path:
    """Run directory holding ``checkpoint`` (the parent of ``checkpoints/``)."""
    parent = checkpoint.parent
    return parent.parent if parent.name == CHECKPOINT_DIR else parent


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="disent-toolkit",
        description="Disent Toolkit - train, evaluate and inspect disentangled VAEs",
    )
    parser.add_argument(
        "--log-level",
        default="INFO",
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
        help="Logging level (default: INFO)",
    )
    verbs = parser.add_subparsers(dest="verb", required=True)

    train_parser = verbs.add_parser(
        "train",
        allow_abbrev=False,
        help="Train a model; extra --key value pairs override config keys",
    )
    train_parser.add_argument("--config", type=Path, help="JSON or YAML config file")
    train_parser.add_argument(
        "--profile",
        default="default",
        choices=sorted(PROFILES),
        help="Base profile the config file and overrides apply to (default: default)",
    )
    train_parser.add_argument("--resume", type=Path, help="Checkpoint to continue from")

    evaluate_parser = verbs.add_parser(
        "evaluate",
        allow_abbrev=False,
        help="Compute all metrics; extra --key value pairs override metric settings",
    )
    evaluate_parser.add_argument("--checkpoint", type=Path, help="Checkpoint to encode the dataset with")
    evaluate_parser.add_argument("--codes", type=Path, help="Codes CSV (standalone mode)")
    evaluate_parser.add_argument("--factors", type=Path, help="Factors CSV (standalone mode)")
    evaluate_parser.add_argument("--metric-config", type=Path, help="JSON or YAML metric settings")
    evaluate_parser.add_argument("--seed", type=int, default=0, help="Metric sampling seed (default: 0)")
    evaluate_parser.add_argument("--out", type=Path, help="Report path (default: <run dir>/report.json)")

    traverse_parser = verbs.add_parser("traverse", help="Export latent traversal grids")
    traverse_parser.add_argument("--checkpoint", type=Path, required=True)
    traverse_parser.add_argument("--sample", type=int, default=0, help="Dataset index to traverse around")
    traverse_parser.add_argument("--steps", type=int, default=10, help="Tiles per row (default: 10)")
    traverse_parser.add_argument("--range", type=float, default=3.0, help="Sweep [-range, range] (default: 3)")
    traverse_parser.add_argument("--out", type=Path, help="Output directory (default: run dir)")
    traverse_parser.add_argument("--png", action="store_true", help="Also write PNG copies (needs matplotlib)")

    render_parser = verbs.add_parser("render-dataset", help="Write every dataset image plus factors.csv")
    render_parser.add_argument("--out", type=Path, required=True)

    serve_parser = verbs.add_parser("serve", help="Start the run browser")
    serve_parser.add_argument("--runs-root", type=Path, default=Path("runs"), help="Directory of runs (default: runs)")
    serve_parser.add_argument("--host", default="127.0.0.1", help="Host to bind to (default: 127.0.0.1)")
    serve_parser.add_argument("--port", type=int, default=8765, help="Port to bind to (default: 8765)")
    serve_parser.add_argument("--reload", action="store_true", help="Enable auto-reload for development")
    return parser


def cmd_train(args: argparse.Namespace, overrides: list[str]) -> None:
    loader = ConfigLoader()
    if args.resume is not None:
        checkpoint = load_checkpoint(args.resume)
        config = loader.resolve(args.config, overrides, base=checkpoint.config)
    else:
        config = loader.resolve(args.config, overrides, profile=args.profile)
    final = train(config, resume=args.resume)
    print(f"Final checkpoint: {final}")


def cmd_evaluate(args: argparse.Namespace, overrides: list[str]) -> None:
    metric_config = parse_metric_config(overrides, args.metric_config)
    if args.checkpoint is not None:
        if args.codes is not None or args.factors is not None:
            raise ConfigError("use either --checkpoint or --codes/--factors, not both")
        out = args.out or run_dir_of(args.checkpoint) / REPORT_NAME
        report = evaluate_checkpoint(args.checkpoint, out, metric_config, args.seed)
    elif args.codes is not None and args.factors is not None:
        out = args.out or Path(REPORT_NAME)
        report = evaluate_tables(args.codes, args.factors, out, metric_config, args.seed)
    else:
        raise ConfigError("evaluate needs --checkpoint or both --codes and --factors")
    print(report.model_dump_json(indent=2))


def cmd_traverse(args: argparse.Namespace) -> None:
    out = args.out or run_dir_of(args.checkpoint)
    result = export_traversals(args.checkpoint, out, args.sample, args.range, args.steps, args.png)
    print(f"Traversal grid: {result.grid}")


def cmd_serve(args: argparse.Namespace) -> None:
    # The app may be re-imported by the reloader, so pass the root through the environment.
    os.environ[RUNS_ROOT_ENV] = str(args.runs_root)
    print(f"Starting Disent Toolkit run browser at http://{args.host}:{args.port}")
    uvicorn.run(
        "disent_toolkit.main:app",
        host=args.host,
        port=args.port,
        reload=args.reload,
    )


def main(argv: list[str] | None = None) -> int:
    """Run one CLI verb and return its exit code."""
    parser = build_parser()
    args, extras = parser.parse_known_args(argv)
    logging.basicConfig(
        level=getattr(logging, args.log_level),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    if extras and args.verb not in ("train", "evaluate"):
        parser.error(f"unrecognized arguments: {' '.join(extras)}")

    try:
        if args.verb == "train":
            cmd_train(args, extras)
        elif args.verb == "evaluate":
            cmd_evaluate(args, extras)
        elif args.verb == "traverse":
            cmd_traverse(args)
        elif args.verb == "render-dataset":
            print(f"Dataset written to {render_dataset(args.out)}")
        elif args.verb == "serve":
            cmd_serve(args)
    except NumericError as e:
        logger.error("Numeric failure: %s", e)
        return EXIT_NUMERIC
    except ConfigError as e:
        logger.error("Configuration error: %s", e)
        return EXIT_CONFIG
    except DisentError as e:
        logger.error("%s", e)
        return EXIT_ERROR
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
