"""FMEA worksheet parsing and process-flow derivation.

Worksheets are CSV files with the header
``function,failure,cause,effect,recommendation[,order]``. Without an ``order``
column the process order is the order in which functions first appear.
"""

from __future__ import annotations

import csv
import io
import re
from dataclasses import dataclass, field
from pathlib import Path

from .errors import EmptyMandatoryCell, EncodingError, MissingColumn

COLUMNS = ("function", "failure", "cause", "effect", "recommendation")
MANDATORY = ("function", "failure", "cause")

_CAUSE_SPLIT = re.compile(r"[;\n]")


@dataclass(frozen=True)
class FmeaRecord:
    line_id: str
    order_index: int
    function_text: str
    failure_text: str
    cause_text: str
    effect_text: str = ""
    recommendation_text: str | None = None


@dataclass(frozen=True)
class Worksheet:
    line_id: str
    records: tuple[FmeaRecord, ...] = ()


@dataclass(frozen=True)
class ProcessFlow:
    line_id: str
    functions: tuple[str, ...]
    precedes_pairs: frozenset[tuple[str, str]] = field(default_factory=frozenset)

    def position(self, function: str) -> int:
        return self.functions.index(function)


def _clean(cell: str | None) -> str:
    return " ".join((cell or "").split())


def parse_worksheet_text(text: str, line_id: str) -> Worksheet:
    reader = csv.reader(io.StringIO(text, newline=""))
    try:
        header = [h.strip().lower() for h in next(reader)]
    except StopIteration:
        raise MissingColumn(COLUMNS[0]) from None
    for name in COLUMNS:
        if name not in header:
            raise MissingColumn(name)
    col = {name: header.index(name) for name in header}
    has_order = "order" in col

    raw_rows = []
    for rowno, row in enumerate(reader, start=2):
        if not any(cell.strip() for cell in row):
            continue
        row = row + [""] * (len(header) - len(row))
        cells = {name: row[col[name]] for name in col}
        for name in MANDATORY + (("order",) if has_order else ()):
            if not cells[name].strip():
                raise EmptyMandatoryCell(rowno, name)
        raw_rows.append((rowno, cells))

    # order key per function: explicit order column or first appearance
    order_key: dict[str, tuple[float, int]] = {}
    for seq, (rowno, cells) in enumerate(raw_rows):
        fn = _clean(cells["function"])
        if fn in order_key:
            continue
        if has_order:
            try:
                key = float(cells["order"])
            except ValueError:
                raise EmptyMandatoryCell(rowno, "order") from None
            order_key[fn] = (key, seq)
        else:
            order_key[fn] = (float(seq), seq)
    ranked = sorted(order_key, key=lambda f: order_key[f])
    order_index = {fn: i for i, fn in enumerate(ranked)}

    records = []
    for rowno, cells in raw_rows:
        fn = _clean(cells["function"])
        causes = [_clean(c) for c in _CAUSE_SPLIT.split(cells["cause"])]
        causes = [c for c in causes if c]
        if not causes:
            raise EmptyMandatoryCell(rowno, "cause")
        rec = _clean(cells["recommendation"]) or None
        for cause in causes:
            records.append(
                FmeaRecord(
                    line_id=line_id,
                    order_index=order_index[fn],
                    function_text=fn,
                    failure_text=_clean(cells["failure"]),
                    cause_text=cause,
                    effect_text=_clean(cells["effect"]),
                    recommendation_text=rec,
                )
            )
    return Worksheet(line_id, tuple(records))


def parse_worksheet(path: str | Path, line_id: str | None = None) -> Worksheet:
    path = Path(path)
    try:
        text = path.read_bytes().decode("utf-8-sig")
    except UnicodeDecodeError as exc:
        raise EncodingError(f"{path}: not valid UTF-8 ({exc.reason} at byte {exc.start})") from None
    return parse_worksheet_text(text, line_id or path.stem)


def build_process_flow(ws: Worksheet) -> ProcessFlow:
    by_position: dict[int, str] = {}
    for rec in ws.records:
        by_position.setdefault(rec.order_index, rec.function_text)
    functions = tuple(by_position[i] for i in sorted(by_position))
    pairs = frozenset(zip(functions, functions[1:]))
    return ProcessFlow(ws.line_id, functions, pairs)


def format_worksheet(ws: Worksheet) -> str:
    """Render ``ws`` back to worksheet CSV (one row per record)."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(COLUMNS)
    for r in ws.records:
        writer.writerow(
            [r.function_text, r.failure_text, r.cause_text, r.effect_text, r.recommendation_text or ""]
        )
    return buf.getvalue()
