#!/usr/bin/env python3
"""
Run recorder: manifests, CSV tables and JSON summaries under one output directory

Every CSV starts with a comment line carrying the schema, config hash and
artifact version; timestamps only ever go into the manifest so that reruns
with identical inputs produce identical tables and summaries.
"""
import csv
import json
import logging
import math
import os
import re
from datetime import datetime
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from config import ARTIFACT_VERSION, SCHEMA_VERSION, BrwConfig

logger = logging.getLogger(__name__)

MANIFEST_FILE = "manifest.json"
_HASH = re.compile(r"^[0-9a-f]{64}$")


def format_value(value: Any) -> str:
    """17 significant digits for floats, plain text otherwise"""
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return "%.17g" % float(value)
    return str(value)


def _jsonable(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple, np.ndarray)):
        return [_jsonable(v) for v in value]
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        # JSON has no infinities
        return value if math.isfinite(value) else None
    return value


def validate_summary(summary: Dict[str, Any]) -> List[str]:
    """Problems with a summary document; empty when it conforms to the schema"""
    problems = []
    if summary.get("schema") != SCHEMA_VERSION:
        problems.append(f"schema must be {SCHEMA_VERSION!r}, got {summary.get('schema')!r}")
    if not isinstance(summary.get("config_hash"), str) or not _HASH.match(summary["config_hash"]):
        problems.append("config_hash must be a 64-character hex digest")
    if not isinstance(summary.get("version"), str):
        problems.append("version must be a string")
    if not isinstance(summary.get("command"), str):
        problems.append("command must be a string")
    values = summary.get("values")
    if not isinstance(values, dict):
        problems.append("values must be a mapping")
    else:
        for key, value in values.items():
            if not isinstance(value, (int, float, str, bool, list, dict, type(None))):
                problems.append(f"values.{key} has unsupported type {type(value).__name__}")
    return problems


class RunRecorder:
    """Writes the artefacts of one command invocation and appends it to the manifest"""

    def __init__(self, config: BrwConfig, command: str, log_dir: Optional[str] = None, max_runs: int = 100):
        self.config = config
        self.command = command
        self.log_dir = log_dir or config.get_output_dir()
        self.max_runs = max_runs  # Keep only the last 100 manifest entries
        self.config_hash = config.config_hash()
        self.files: List[str] = []
        self.runs: List[Dict[str, Any]] = []

        os.makedirs(self.log_dir, exist_ok=True)
        self._load_manifest()

    def _load_manifest(self):
        """Load existing manifest entries"""
        path = os.path.join(self.log_dir, MANIFEST_FILE)
        try:
            if os.path.exists(path):
                with open(path, "r") as f:
                    self.runs = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            logger.warning(f"Error loading manifest {path}: {e}")
            self.runs = []

    def _save_manifest(self):
        path = os.path.join(self.log_dir, MANIFEST_FILE)
        if len(self.runs) > self.max_runs:
            self.runs = self.runs[-self.max_runs:]
        with open(path, "w") as f:
            json.dump(self.runs, f, indent=2)

    def path(self, name: str) -> str:
        return os.path.join(self.log_dir, name)

    def header_line(self) -> str:
        return f"# {SCHEMA_VERSION} config={self.config_hash} version={ARTIFACT_VERSION}"

    def write_csv(self, name: str, columns: Sequence[str], rows: Sequence[Sequence[Any]]) -> str:
        path = self.path(name)
        with open(path, "w", newline="") as f:
            f.write(self.header_line() + "\n")
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(list(columns))
            for row in rows:
                writer.writerow([format_value(v) for v in row])
        self.files.append(name)
        logger.debug(f"wrote {len(rows)} rows to {path}")
        return path

    def summary(self, values: Dict[str, Any]) -> Dict[str, Any]:
        return {
            "schema": SCHEMA_VERSION,
            "command": self.command,
            "config_hash": self.config_hash,
            "version": ARTIFACT_VERSION,
            "values": _jsonable(values),
        }

    def write_summary(self, name: str, values: Dict[str, Any]) -> Dict[str, Any]:
        document = self.summary(values)
        problems = validate_summary(document)
        if problems:
            raise ValueError(f"summary {name} violates its schema: {problems}")
        with open(self.path(name), "w") as f:
            json.dump(document, f, indent=2, sort_keys=True)
            f.write("\n")
        self.files.append(name)
        return document

    def finish(self, status: str = "ok", extra: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
        """Append this run to the manifest"""
        timestamp = datetime.now()
        entry = {
            "id": len(self.runs) + 1,
            "timestamp": timestamp.isoformat(),
            "formatted_time": timestamp.strftime("%Y-%m-%d %H:%M:%S"),
            "command": self.command,
            "config_hash": self.config_hash,
            "seed": self.config.get_simulation_config()["seed"],
            "version": ARTIFACT_VERSION,
            "status": status,
            "files": list(self.files),
        }
        if extra:
            entry.update(_jsonable(extra))
        self.runs.append(entry)
        self._save_manifest()
        logger.info(f"Run logged: {self.command} ({status}) -> {self.log_dir}")
        return entry

    def get_recent_runs(self, limit: int = 20) -> List[Dict[str, Any]]:
        return self.runs[-limit:] if self.runs else []


def read_csv(path: str) -> List[Dict[str, str]]:
    """Rows of a recorder CSV, skipping the comment header"""
    with open(path, "r", newline="") as f:
        lines = [line for line in f if not line.startswith("#")]
    return list(csv.DictReader(lines))


def pin_or_compare(path: str, columns: Sequence[str], rows: Sequence[Sequence[Any]],
                   rel_tol: float = 1e-12) -> List[str]:
    """Regression pinning: write the table on first use, later compare against it

    Integer cells must match exactly, float cells within rel_tol. Returns the mismatches.
    """
    if not os.path.exists(path):
        with open(path, "w", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(list(columns))
            for row in rows:
                writer.writerow([format_value(v) for v in row])
        return []

    pinned = read_csv(path)
    mismatches = []
    if len(pinned) != len(rows):
        return [f"row count {len(rows)} differs from pinned {len(pinned)}"]
    for i, (old, new) in enumerate(zip(pinned, rows)):
        for column, value in zip(columns, new):
            reference = old.get(column)
            if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
                if int(reference) != int(value):
                    mismatches.append(f"row {i} {column}: {value} != pinned {reference}")
            elif isinstance(value, (float, np.floating)):
                ref = float(reference)
                if not math.isclose(float(value), ref, rel_tol=rel_tol, abs_tol=rel_tol):
                    mismatches.append(f"row {i} {column}: {value!r} != pinned {ref!r}")
    return mismatches
