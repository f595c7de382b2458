from __future__ import annotations

import csv
import json
import math
from enum import StrEnum
from typing import TYPE_CHECKING, TextIO


if TYPE_CHECKING:
    from collections.abc import Iterable, Sequence
    from pathlib import Path

SCHEMA_VERSION = 1


class OutputFormat(StrEnum):
    CSV = "csv"
    JSON = "json"


def format_value(value) -> str:
    """Render one CSV cell; floats use the shortest repr that round-trips."""
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return repr(value)
    return str(value)


def write_csv(rows: Iterable[dict], columns: Sequence[str], out: TextIO) -> None:
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["schema_version", *columns])
    for row in rows:
        writer.writerow([SCHEMA_VERSION, *(format_value(row.get(c)) for c in columns)])


def _jsonable(value):
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, list | tuple):
        return [_jsonable(v) for v in value]
    return value


def write_json(document: dict, out: TextIO) -> None:
    json.dump(_jsonable({"schema_version": SCHEMA_VERSION, **document}), out, indent=2)
    out.write("\n")


def write_rows(rows: list[dict], columns: Sequence[str], out: TextIO, fmt: OutputFormat, **extra) -> None:
    if fmt is OutputFormat.JSON:
        write_json({**extra, "rows": [{c: row.get(c) for c in columns} for row in rows]}, out)
    else:
        write_csv(rows, columns, out)


def read_csv(path: Path) -> list[dict[str, str]]:
    with path.open(newline="", encoding="utf-8") as f:
        rows = list(csv.DictReader(f))
    for row in rows:
        version = row.pop("schema_version", None)
        if version != str(SCHEMA_VERSION):
            msg = f"{path}: unsupported schema version {version!r}, expected {SCHEMA_VERSION}"
            raise ValueError(msg)
    return rows
