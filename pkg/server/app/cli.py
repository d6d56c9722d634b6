"""Batch entry point: ``python -m app.cli <command> --config run.json --out results.jsonl``.

Writes one JSON line per result record and a ``<out>.summary.json`` with the
columnar series.  Exit codes: 0 success, 2 schema, 3 out of regime,
4 numerical failure.
"""
import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional, TextIO, Tuple

from pydantic import ValidationError

from app.models.pydantic_models import Command, ExperimentConfig, ResultRecord, RunSummary
from app.services.experiment_service import ExperimentService, canonical_json, config_hash
from app.utils.config import get_settings
from app.utils.errors import BeltramiError, NumericalFailureError, SchemaError
from app.utils.logging import configure_logging

logger = logging.getLogger(__name__)


def parse_args(argv: Optional[List[str]] = None) -> argparse.Namespace:
    parser = argparse.ArgumentParser(prog="beltrami", description="J-holomorphic disk experiments.")
    parser.add_argument("command", choices=[c.value for c in Command])
    parser.add_argument("--config", type=Path, help="ExperimentConfig JSON file")
    parser.add_argument("--out", type=Path, help="JSON lines output (stdout when omitted)")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--resolution", type=int)
    parser.add_argument("--epsilon", type=float)
    parser.add_argument("--log-level", default=None)
    return parser.parse_args(argv)


def load_config(path: Optional[Path]) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    try:
        return ExperimentConfig.model_validate_json(path.read_text())
    except OSError as e:
        raise SchemaError(f"cannot read config: {e}", {"path": str(path)})
    except ValidationError as e:
        raise SchemaError("config schema violation", {"path": str(path), "errors": json.loads(e.json())})


def write_records(records: List[ResultRecord], stream: TextIO) -> None:
    for record in records:
        stream.write(canonical_json(record.model_dump(mode="json")) + "\n")


def summary_path(out: Path) -> Path:
    return out.with_name(out.name + ".summary.json")


def failure_outcome(
    command: str,
    error: BeltramiError,
    config: Optional[ExperimentConfig],
    service: ExperimentService,
) -> Tuple[List[ResultRecord], RunSummary]:
    """One failed record plus a failed summary; the record carries the run's
    resolution, epsilon and mu_bound when the config got far enough to have them."""
    fields = error.context or (service.describe(config) if config is not None else {})
    payload = error.to_payload()
    record = ResultRecord(
        command=command,
        index=0,
        tool_version=service.settings.tool_version,
        resolution=fields.get("resolution"),
        epsilon=fields.get("epsilon"),
        mu_bound=fields.get("mu_bound"),
        seed=config.seed if config is not None else None,
        inputs={},
        outputs=payload,
        status="failed",
    )
    summary = RunSummary(
        command=command,
        status="failed",
        exit_code=error.exit_code,
        record_count=1,
        config_hash=config_hash(config) if config is not None else "",
        diagnostics=payload,
    )
    return [record], summary


def main(argv: Optional[List[str]] = None) -> int:
    args = parse_args(argv)
    settings = get_settings()
    configure_logging(args.log_level or settings.log_level)
    service = ExperimentService(settings)

    config: Optional[ExperimentConfig] = None
    try:
        config = service.apply_overrides(load_config(args.config), args.seed, args.resolution, args.epsilon)
        outcome = service.run(args.command, config)
        records, summary = outcome.records, outcome.summary
    except BeltramiError as e:
        logger.error("%s failed: %s", args.command, e.message)
        records, summary = failure_outcome(args.command, e, config, service)
    except Exception as e:
        logger.exception("%s failed unexpectedly", args.command)
        error = NumericalFailureError(f"unexpected {type(e).__name__}: {e}")
        records, summary = failure_outcome(args.command, error, config, service)

    if args.out is None:
        write_records(records, sys.stdout)
    else:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        with args.out.open("w") as stream:
            write_records(records, stream)
        summary_path(args.out).write_text(
            json.dumps(summary.model_dump(mode="json"), sort_keys=True, indent=2) + "\n"
        )
    return summary.exit_code


if __name__ == "__main__":
    sys.exit(main())
