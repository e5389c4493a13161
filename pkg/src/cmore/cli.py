"""Command-line entry point: ``cmore <stage|all> [--config FILE] [--key value ...]``.

Exit status is 0 on success, 1 on an internal error and 2 on usage errors
or missing inputs.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from filelock import FileLock, Timeout

from .pipeline import STAGES, ConfigError, MissingArtifact, PipelineConfig, run_stage

logger = logging.getLogger("cmore")

EXIT_OK, EXIT_INTERNAL, EXIT_USAGE = 0, 1, 2


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cmore", description="Statement-reference QA pretraining data pipeline.")
    ap.add_argument("stage", choices=[*STAGES, "all"])
    ap.add_argument("--config", help="key = value config file")
    ap.add_argument("--force", action="store_true", help="rerun stages whose outputs already exist")
    ap.add_argument("-v", "--verbose", action="store_true")
    overrides = ap.add_argument_group("config overrides")
    for key in PipelineConfig.keys():
        overrides.add_argument(f"--{key.replace('_', '-')}", dest=f"cfg_{key}", metavar="VALUE")
    return ap


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    overrides = {k[4:]: v for k, v in vars(args).items() if k.startswith("cfg_") and v is not None}
    try:
        cfg = PipelineConfig.load(args.config, overrides)
    except (ConfigError, ValueError) as exc:
        print(f"cmore: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE

    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    stages = STAGES if args.stage == "all" else (args.stage,)
    try:
        with FileLock(str(out / ".cmore.lock"), timeout=0):
            for stage in stages:
                summary = run_stage(stage, cfg, force=args.force)
                status = "skipped (outputs exist)" if summary is None else json.dumps(summary, sort_keys=True)
                print(f"{stage}: {status}")
    except Timeout:
        print(f"cmore: output directory {out} is in use by another run", file=sys.stderr)
        return EXIT_USAGE
    except (MissingArtifact, ConfigError, FileNotFoundError) as exc:
        print(f"cmore: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception:
        logger.exception("stage failed")
        return EXIT_INTERNAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
