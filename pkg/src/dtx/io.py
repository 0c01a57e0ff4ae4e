"""CSV/JSON writers with embedded run metadata.

CSV files start with one ``# {json}`` comment line holding the metadata,
then a header row. Floats are written with 17 significant digits so they
round-trip exactly.
"""

from __future__ import annotations

import csv
import io as _io
import json
import os
from datetime import datetime, timezone
from typing import Iterable, Sequence

import numpy as np

from .errors import DtxIOError


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def metadata(config: dict, command: str, timestamp: bool = True) -> dict:
    from . import __version__

    meta = {"command": command, "config": _plain(config), "version": __version__}
    if timestamp:
        meta["timestamp"] = datetime.now(timezone.utc).isoformat(timespec="seconds")
    return meta


def format_value(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g")
    if value is None:
        return ""
    return str(value)


def dumps_json(doc) -> str:
    return json.dumps(_plain(doc), sort_keys=True, indent=2) + "\n"


def render_csv(rows: Sequence[dict], columns: Sequence[str], meta: dict | None = None) -> str:
    buf = _io.StringIO()
    if meta is not None:
        buf.write("# " + json.dumps(_plain(meta), sort_keys=True) + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([format_value(row.get(c)) for c in columns])
    return buf.getvalue()


def write_text(path, text: str):
    """Write ``text`` to ``path``, or stdout when ``path`` is None or ``-``."""
    if path is None or str(path) == "-":
        import sys

        sys.stdout.write(text)
        return
    try:
        parent = os.path.dirname(os.path.abspath(path))
        if not os.path.isdir(parent):
            raise FileNotFoundError(f"directory {parent} does not exist")
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise DtxIOError(f"cannot write {path}: {exc}") from exc


def read_text(path) -> str:
    try:
        with open(path, encoding="utf-8") as fh:
            return fh.read()
    except OSError as exc:
        raise DtxIOError(f"cannot read {path}: {exc}") from exc


def read_csv(path_or_text, is_text: bool = False) -> tuple[dict | None, list[dict]]:
    """Parse a CSV written by :func:`render_csv`; returns ``(metadata, rows)`` with string cells."""
    text = path_or_text if is_text else read_text(path_or_text)
    lines = text.splitlines()
    meta = None
    if lines and lines[0].startswith("# "):
        meta = json.loads(lines[0][2:])
        lines = lines[1:]
    return meta, list(csv.DictReader(lines))


def trajectory_rows(trajectories: Iterable) -> list[dict]:
    rows = []
    for i, tr in enumerate(trajectories):
        for t, x, a, r in tr.to_csv_rows():
            rows.append({"trajectory": i, "t": t, "state": x, "action": a, "reward": r})
    return rows
