"""Experiment reports: CSV tables plus a versioned JSON summary.

Tables are written with ``repr`` floats, ``.`` decimals, LF line endings and
a header row, so identical configs give byte-identical CSV files. The only
non-deterministic field, the wall-clock duration, lives in the JSON summary.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

SCHEMA_VERSION = 1


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        if len(r) != len(header):
            raise ValueError(f"row has {len(r)} cells, header has {len(header)}")
        w.writerow([_cell(v) for v in r])
    return buf.getvalue()


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple, np.ndarray)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        f = float(v)
        # JSON has no inf/nan; keep them readable and parseable
        return f if math.isfinite(f) else str(f)
    return v


@dataclass
class Assertion:
    name: str
    passed: bool
    detail: str


@dataclass
class Report:
    command: str
    config: dict
    tables: dict = field(default_factory=dict)  # name -> CSV text
    assertions: list = field(default_factory=list)
    results: dict = field(default_factory=dict)  # scalar summary values
    files: dict = field(default_factory=dict)  # extra artifacts: file name -> text
    duration_s: float | None = None

    def table(self, name: str, header, rows):
        self.tables[name] = csv_text(header, rows)

    def check(self, name: str, passed, detail: str = "") -> bool:
        self.assertions.append(Assertion(name, bool(passed), detail))
        return bool(passed)

    @property
    def passed(self) -> bool:
        return all(a.passed for a in self.assertions)

    def summary(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "command": self.command,
            "config": _jsonable(self.config),
            "passed": self.passed,
            "assertions": [{"name": a.name, "passed": a.passed, "detail": a.detail}
                           for a in self.assertions],
            "results": _jsonable(self.results),
            "tables": {name: f"{self.command}_{name}.csv" for name in self.tables},
            "files": {name: f"{self.command}_{name}" for name in self.files},
            "duration_s": self.duration_s,
        }

    def write(self, out_dir) -> list[Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = []
        for name, text in self.tables.items():
            p = out / f"{self.command}_{name}.csv"
            with open(p, "w", newline="\n") as fh:
                fh.write(text)
            paths.append(p)
        for name, text in self.files.items():
            p = out / f"{self.command}_{name}"
            with open(p, "w", newline="\n") as fh:
                fh.write(text if text.endswith("\n") else text + "\n")
            paths.append(p)
        p = out / f"{self.command}.json"
        with open(p, "w", newline="\n") as fh:
            fh.write(json.dumps(self.summary(), indent=2, sort_keys=False) + "\n")
        paths.append(p)
        return paths


__all__ = ["SCHEMA_VERSION", "csv_text", "Assertion", "Report"]
