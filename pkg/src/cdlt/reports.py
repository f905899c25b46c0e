"""Self-describing tab-separated tables.

Layout::

    # cdlt-table v1 <kind>
    # key=value key=value ...        (metadata, keys sorted)
    # columns: a b c
    1\t0.5\t...

Floats are written with ``repr`` so a load/save cycle is lossless.
"""

from __future__ import annotations

from typing import Iterable, Sequence, TextIO

TABLE_MAGIC = "# cdlt-table v1"


def _cell(v) -> str:
    if isinstance(v, float):
        return repr(v)
    if hasattr(v, "item"):
        return _cell(v.item())
    return str(v)


def write_table(fh: TextIO, kind: str, columns: Sequence[str], rows: Iterable[Sequence],
                meta: dict | None = None) -> None:
    meta = meta or {}
    for key, val in meta.items():
        if any(ch.isspace() for ch in str(val)) or "=" in str(key):
            raise ValueError(f"metadata {key}={val!r} must not contain whitespace")
    fh.write(f"{TABLE_MAGIC} {kind}\n")
    fh.write("# " + " ".join(f"{k}={_cell(meta[k])}" for k in sorted(meta)) + "\n")
    fh.write("# columns: " + " ".join(columns) + "\n")
    for row in rows:
        if len(row) != len(columns):
            raise ValueError("row length does not match the column schema")
        fh.write("\t".join(_cell(v) for v in row) + "\n")


def _parse(v: str):
    for conv in (int, float):
        try:
            return conv(v)
        except ValueError:
            pass
    return v


def read_table(fh: Iterable[str]) -> tuple[str, dict, list[str], list[list]]:
    """Returns ``(kind, meta, columns, rows)``; numeric cells are parsed."""
    lines = iter(fh)
    head = next(lines).rstrip("\n")
    if not head.startswith(TABLE_MAGIC):
        raise ValueError("not a cdlt table")
    kind = head[len(TABLE_MAGIC):].strip()
    meta = {}
    for item in next(lines).lstrip("#").split():
        k, _, v = item.partition("=")
        meta[k] = _parse(v)
    cols = next(lines).split(":", 1)[1].split()
    rows = [[_parse(c) for c in ln.rstrip("\n").split("\t")] for ln in lines if ln.strip()]
    return kind, meta, cols, rows
