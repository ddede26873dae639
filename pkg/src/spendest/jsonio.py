"""Deterministic JSON reading and writing for pipeline artifacts.

The stock ``json`` module writes floats with ``repr``; artifact files
instead pin floats to 17 significant digits so that every writer in the
package produces byte-identical output for identical values and every
reader recovers the exact float64.  Reading goes through ``json.loads``.
"""

from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Any

from .errors import DataError

_INDENT = "  "


def _format_float(x: float) -> str:
    if not math.isfinite(x):
        raise ValueError(f"non-finite float {x!r} cannot be serialized")
    return format(x, ".17g")


def _write(doc: Any, out: list[str], depth: int) -> None:
    pad = _INDENT * depth
    child_pad = _INDENT * (depth + 1)
    if doc is None:
        out.append("null")
    elif doc is True:
        out.append("true")
    elif doc is False:
        out.append("false")
    elif isinstance(doc, int):
        out.append(str(doc))
    elif isinstance(doc, float):
        out.append(_format_float(doc))
    elif isinstance(doc, str):
        out.append(json.dumps(doc, ensure_ascii=False))
    elif isinstance(doc, (list, tuple)):
        if not doc:
            out.append("[]")
            return
        out.append("[\n")
        for i, item in enumerate(doc):
            out.append(child_pad)
            _write(item, out, depth + 1)
            out.append(",\n" if i < len(doc) - 1 else "\n")
        out.append(pad + "]")
    elif isinstance(doc, dict):
        if not doc:
            out.append("{}")
            return
        out.append("{\n")
        items = list(doc.items())
        for i, (key, value) in enumerate(items):
            if not isinstance(key, str):
                raise ValueError(f"JSON object keys must be str, got {key!r}")
            out.append(child_pad + json.dumps(key, ensure_ascii=False) + ": ")
            _write(value, out, depth + 1)
            out.append(",\n" if i < len(items) - 1 else "\n")
        out.append(pad + "}")
    else:
        raise ValueError(f"unsupported JSON value of type {type(doc).__name__}")


def dumps_canonical(doc: Any) -> str:
    """Serialize ``doc`` to the package's canonical JSON text."""
    out: list[str] = []
    _write(doc, out, 0)
    out.append("\n")
    return "".join(out)


def dump_canonical(doc: Any, path: str | Path) -> None:
    Path(path).write_text(dumps_canonical(doc), encoding="utf-8")


def load_json(path: str | Path) -> Any:
    """Read a JSON artifact, raising :class:`DataError` on malformed text."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise DataError(f"malformed JSON in {path}: {exc}") from exc
