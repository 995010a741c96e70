"""Line-delimited file helpers: compact JSON, 9-significant-digit floats, headers."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Iterable


def dump_compact(obj: Any) -> str:
    return json.dumps(obj, ensure_ascii=False, separators=(",", ":"))


def fmt_float(value: float | None) -> str:
    """Serialize a score with 9 significant digits; absent values become null."""
    if value is None:
        return "null"
    return "%.9g" % value


def write_lines(path: str | Path, lines: Iterable[str]) -> None:
    text = "".join(line + "\n" for line in lines)
    Path(path).write_text(text, encoding="utf-8")


def read_header_and_rows(path: str | Path) -> tuple[dict, list[tuple[int, dict]]]:
    """Parse a headered JSONL file into (header, [(line_number, row), ...])."""
    raw = Path(path).read_text(encoding="utf-8").splitlines()
    if not raw:
        raise ValueError(f"{path}: empty file, expected a header line")
    header = json.loads(raw[0])
    rows = []
    for lineno, line in enumerate(raw[1:], start=2):
        if not line.strip():
            continue
        rows.append((lineno, json.loads(line)))
    return header, rows


def make_header(kind: str, extra: dict | None = None) -> str:
    payload: dict[str, Any] = {"kind": kind}
    if extra:
        payload.update(extra)
    return dump_compact(payload)
