"""Command line entry point.

``vidcurate run`` executes the whole pipeline; the other subcommands expose
single phases for debugging and incremental workflows. Exit codes: 0 on
success, 2 for unusable configuration, 3 when most records failed on provider
errors, 1 for any other failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys

from .config import PipelineConfig, ProviderConfig, load_config
from .errors import ConfigError, SystemicProviderFailure, VidcurateError
from .manifest import load_manifest, save_manifest
from .media import FFmpegToolchain, process_gate
from . import pipeline

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_SYSTEMIC = 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vidcurate",
        description="Curate raw video manifests into budgeted training sets.",
    )
    parser.add_argument("--log-level", default="INFO", help="logging level name")
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run the full pipeline")
    run_p.add_argument("--config", required=True, help="pipeline config JSON")
    run_p.add_argument("--input", required=True, help="input manifest (JSONL)")
    run_p.add_argument("--out-dir", required=True, help="output directory")
    run_p.add_argument("--workers", type=int, default=1, help="record-level parallelism")
    run_p.add_argument(
        "--score-file", action="append", default=[],
        help="precomputed score file; repeatable, later files win",
    )
    run_p.add_argument(
        "--sidecar", action="append", default=[],
        help="scorer sidecar command line; repeatable",
    )

    probe_p = sub.add_parser("probe", help="probe stream properties only")
    probe_p.add_argument("--config", help="pipeline config JSON (optional)")
    probe_p.add_argument("--input", required=True)
    probe_p.add_argument("--output", required=True, help="output manifest (JSONL)")
    probe_p.add_argument("--workers", type=int, default=1)

    metrics_p = sub.add_parser("metrics", help="compute metrics without filtering")
    metrics_p.add_argument("--config", required=True)
    metrics_p.add_argument("--input", required=True)
    metrics_p.add_argument("--output", required=True)
    metrics_p.add_argument("--workers", type=int, default=1)
    metrics_p.add_argument("--score-file", action="append", default=[])
    metrics_p.add_argument("--sidecar", action="append", default=[])

    filter_p = sub.add_parser("filter", help="apply thresholds to present metrics")
    filter_p.add_argument("--config", required=True)
    filter_p.add_argument("--input", required=True)
    filter_p.add_argument("--output", required=True)

    accel_p = sub.add_parser("accelerate", help="speed up low-motion candidates")
    accel_p.add_argument("--config", required=True)
    accel_p.add_argument("--input", required=True)
    accel_p.add_argument("--output", required=True)
    accel_p.add_argument("--workers", type=int, default=1)

    select_p = sub.add_parser("select", help="budgeted selection over active records")
    select_p.add_argument("--config", required=True)
    select_p.add_argument("--input", required=True)
    select_p.add_argument("--output", required=True)

    report_p = sub.add_parser("report", help="emit histograms and summary")
    report_p.add_argument("--config", required=True)
    report_p.add_argument("--input", required=True)
    report_p.add_argument("--out-dir", required=True)

    return parser


def _load_config_or_default(path: str | None) -> PipelineConfig:
    return load_config(path) if path else PipelineConfig()


def _merged_config(args: argparse.Namespace) -> PipelineConfig:
    """Config file plus any --score-file/--sidecar flags appended."""
    config = load_config(args.config)
    extra_scores = tuple(getattr(args, "score_file", ()) or ())
    extra_sidecars = tuple(getattr(args, "sidecar", ()) or ())
    if not extra_scores and not extra_sidecars:
        return config
    providers = ProviderConfig(
        score_files=tuple(config.providers.score_files) + extra_scores,
        sidecars=tuple(config.providers.sidecars) + extra_sidecars,
        timeout_s=config.providers.timeout_s,
    )
    return dataclasses.replace(config, providers=providers)


def _cmd_run(args: argparse.Namespace) -> int:
    config = _merged_config(args)
    records = load_manifest(args.input)
    result = pipeline.run(config, records, args.out_dir, workers=args.workers)
    print(
        f"kept {result.summary['kept']} of {result.summary['input_records']} records; "
        f"outputs in {result.out_dir}"
    )
    return EXIT_OK


def _cmd_probe(args: argparse.Namespace) -> int:
    config = _load_config_or_default(args.config)
    records = load_manifest(args.input)
    out = pipeline.probe_records(config, records, workers=args.workers)
    save_manifest(out, args.output)
    return EXIT_OK


def _cmd_metrics(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    records = load_manifest(args.input)
    out = pipeline.compute_metrics(
        config,
        records,
        workers=args.workers,
        extra_score_files=args.score_file,
        extra_sidecars=args.sidecar,
    )
    save_manifest(out, args.output)
    return EXIT_OK


def _cmd_filter(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    records = load_manifest(args.input)
    save_manifest(pipeline.apply_filters(config, records), args.output)
    return EXIT_OK


def _cmd_accelerate(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    records = load_manifest(args.input)
    process_gate.configure(config.media_tools.max_processes)
    tool = FFmpegToolchain(
        ffmpeg=config.media_tools.ffmpeg,
        ffprobe=config.media_tools.ffprobe,
        codec=config.media_tools.codec,
    )
    out, stats = pipeline.accelerate_stage(config, records, tool, workers=args.workers)
    save_manifest(out, args.output)
    print(f"accelerated {stats['accelerated']} of {stats['candidates']} candidates")
    return EXIT_OK


def _cmd_select(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    records = load_manifest(args.input)
    out, stats = pipeline.run_selection(config, records)
    save_manifest(out, args.output)
    print(
        f"selected {stats['selected']} of {stats['candidates']} candidates "
        f"({stats['total_cost']} of {stats['budget']} budget)"
    )
    return EXIT_OK


def _cmd_report(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    records = load_manifest(args.input)
    pipeline.emit_report(config, records, args.out_dir)
    return EXIT_OK


_COMMANDS = {
    "run": _cmd_run,
    "probe": _cmd_probe,
    "metrics": _cmd_metrics,
    "filter": _cmd_filter,
    "accelerate": _cmd_accelerate,
    "select": _cmd_select,
    "report": _cmd_report,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, str(args.log_level).upper(), logging.INFO),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as e:
        logger.error("config error: %s", e)
        return EXIT_CONFIG
    except SystemicProviderFailure as e:
        logger.error("systemic provider failure: %s", e)
        return EXIT_SYSTEMIC
    except VidcurateError as e:
        logger.error("%s", e)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
