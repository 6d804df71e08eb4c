"""CSV with a fixed column order and lossless float round trip."""
from __future__ import annotations

import csv
import re
from pathlib import Path

_INT_LIST = re.compile(r"^\d+(x\d+)+$")


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (list, tuple)):
        return "x".join(str(i) for i in v)
    return str(v)


def write_csv(path, columns, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_cell(r.get(c)) for c in columns])


def parse_value(s: str):
    if s == "":
        return None
    if _INT_LIST.match(s):
        return [int(i) for i in s.split("x")]
    for cast in (int, float):
        try:
            return cast(s)
        except ValueError:
            pass
    return s


def read_csv(path) -> tuple[list[str], list[dict]]:
    with open(Path(path), newline="") as fh:
        r = csv.reader(fh)
        columns = next(r)
        rows = [{c: parse_value(v) for c, v in zip(columns, line)} for line in r]
    return columns, rows
