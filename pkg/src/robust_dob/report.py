"""Human-readable key-value reports.

One entry per line, ``key = value``, where the key is a dotted path and the
value is JSON (numbers use the shortest round-trip representation, so
reading a report back gives identical floats). Lines starting with ``#``
are comments. Keys keep their insertion order.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np


def _plain(value):
    if isinstance(value, np.ndarray):
        return [_plain(v) for v in value.tolist()]
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating, float)):
        v = float(value)
        # JSON has no inf/nan; keep them as strings that float() parses back
        return v if math.isfinite(v) else repr(v)
    return value


def format_report(entries: dict, title: str | None = None) -> str:
    lines = [f"# {title}"] if title else []
    for key, value in entries.items():
        if "=" in key or "\n" in key:
            raise ValueError(f"report key {key!r} may not contain '=' or newlines")
        lines.append(f"{key} = {json.dumps(_plain(value))}")
    return "\n".join(lines) + "\n"


def write_report(entries: dict, path, title: str | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(format_report(entries, title))
    return path


def parse_report(text: str) -> dict:
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        key, sep, value = line.partition(" = ")
        if not sep:
            raise ValueError(f"line {n}: expected 'key = value'")
        out[key.strip()] = json.loads(value)
    return out


def read_report(path) -> dict:
    return parse_report(Path(path).read_text())
