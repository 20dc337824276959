"""Delimited-text emission with a reproducibility preamble.

Every table starts with comment lines carrying a schema tag and the full
resolved configuration (JSON), so any output file is enough to rerun the
experiment that produced it.  Plotting scripts can skip lines starting
with '#'.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Any, Dict, Iterable, List, Sequence, Tuple

SCHEMA_VERSION = 1


def format_value(x: Any) -> str:
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, float):
        return f"{x:.12g}"
    return str(x)


def write_table(
    path: str | Path,
    kind: str,
    meta: Dict[str, Any],
    header: Sequence[str],
    rows: Iterable[Sequence[Any]],
) -> Path:
    """Write a commented CSV table; returns the path written."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        fh.write(f"# schema: d2dtoken.{kind}/{SCHEMA_VERSION}\n")
        fh.write(f"# meta: {json.dumps(meta, sort_keys=True)}\n")
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_value(v) for v in row])
    return path


def read_table(path: str | Path) -> Tuple[str, Dict[str, Any], List[str], List[List[str]]]:
    """Read back a table written by write_table: (kind, meta, header, rows)."""
    path = Path(path)
    kind, meta = "", {}
    data_lines: List[str] = []
    for line in path.read_text().splitlines():
        if line.startswith("# schema:"):
            kind = line.split(":", 1)[1].strip()
        elif line.startswith("# meta:"):
            meta = json.loads(line.split(":", 1)[1].strip())
        elif line.startswith("#") or not line.strip():
            continue
        else:
            data_lines.append(line)
    rows = list(csv.reader(data_lines))
    header, body = rows[0], rows[1:]
    return kind, meta, header, body
