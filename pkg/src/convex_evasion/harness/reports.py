"""CSV and JSON-lines writers for experiment results."""

import csv
import json
import logging
import math
import os
import tempfile
from collections.abc import Iterable, Mapping
from dataclasses import asdict, is_dataclass
from pathlib import Path

log = logging.getLogger(__name__)


def _cell(value: object) -> str:
    """Shortest round-tripping text for floats, lowercase booleans."""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_rows(path: Path, rows: Iterable[Mapping[str, object]], fields: list[str]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.DictWriter(handle, fieldnames=fields, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({name: _cell(row[name]) for name in fields})
    log.info("Wrote %s", path)
    return path


def read_rows(path: Path) -> list[dict[str, str]]:
    with path.open(newline="", encoding="utf-8") as handle:
        return list(csv.DictReader(handle))


def _jsonable(value: object) -> object:
    if isinstance(value, float) and not math.isfinite(value):
        return repr(value)
    if hasattr(value, "tolist"):
        return value.tolist()
    return value


def write_trace(path: Path, records: Iterable[object]) -> Path:
    """One JSON object per line, one line per trace record."""
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as handle:
        for record in records:
            payload = asdict(record) if is_dataclass(record) else dict(record)
            payload = {key: _jsonable(value) for key, value in payload.items()}
            handle.write(json.dumps(payload, sort_keys=True) + "\n")
    log.info("Wrote trace %s", path)
    return path


def output_dir_writable(path: Path) -> bool:
    """Create ``path`` if needed and check a file can be written inside it."""
    try:
        path.mkdir(parents=True, exist_ok=True)
        descriptor, probe = tempfile.mkstemp(dir=path, prefix=".probe-")
        os.close(descriptor)
        os.unlink(probe)
    except OSError as exc:
        log.warning("Output directory %s is not writable: %s", path, exc)
        return False
    return True
