"""Execution-log comparison and the operational-integrity report.

Logs from the before/after device sessions are normalized (timestamps,
PID/TID columns and hex addresses masked, since those vary between runs
without meaning anything) and line-diffed.  A changed line counts once, an
inserted or deleted line counts once; an APK passes when its diff stays at
or below the threshold.
"""

from __future__ import annotations

import csv
import io
import re
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

_TS_PID_TID = re.compile(r"^(\d{2}-\d{2} \d{2}:\d{2}:\d{2}\.\d{3})\s+(\d+)\s+(\d+)(?=\s)")
_TS_ONLY = re.compile(r"^\d{2}-\d{2} \d{2}:\d{2}:\d{2}\.\d{3}")
_HEX_ADDR = re.compile(r"0x[0-9a-fA-F]+")


@dataclass(frozen=True)
class ExecutionLog:
    apk_name: str
    lines: tuple[str, ...]

    def __post_init__(self):
        if any("\n" in line or "\r" in line for line in self.lines):
            raise ValueError("log lines must be newline-free")

    def __len__(self) -> int:
        return len(self.lines)

    @classmethod
    def from_text(cls, apk_name: str, text: str) -> "ExecutionLog":
        return cls(apk_name, tuple(text.splitlines()))

    def text(self) -> str:
        return "".join(line + "\n" for line in self.lines)


def normalize_line(line: str) -> str:
    line = _TS_PID_TID.sub(r"<ts> <pid> <tid>", line)
    line = _TS_ONLY.sub("<ts>", line)
    return _HEX_ADDR.sub("<addr>", line)


def normalize_log(log: ExecutionLog) -> ExecutionLog:
    """Mask run-variant fields; idempotent and line-count preserving."""
    return ExecutionLog(log.apk_name, tuple(normalize_line(line) for line in log.lines))


def diff_count(a: ExecutionLog, b: ExecutionLog) -> int:
    """Number of differing lines between two logs.

    Defined as the minimum number of line edits (replace, insert, delete)
    taking one log to the other, so a changed line counts once rather than
    as a delete plus an insert.  Unlike a particular diff tool's hunk
    layout, this count is well-defined: symmetric, zero exactly on equal
    logs, and bounded by the combined line counts.
    """
    x, y = a.lines, b.lines
    # strip the common prefix and suffix; real log pairs are mostly equal
    start = 0
    while start < len(x) and start < len(y) and x[start] == y[start]:
        start += 1
    end = 0
    while (
        end < len(x) - start
        and end < len(y) - start
        and x[len(x) - 1 - end] == y[len(y) - 1 - end]
    ):
        end += 1
    x = x[start:len(x) - end]
    y = y[start:len(y) - end]
    if not x or not y:
        return len(x) + len(y)

    ids: dict[str, int] = {}
    ax = np.array([ids.setdefault(line, len(ids)) for line in x])
    ay = np.array([ids.setdefault(line, len(ids)) for line in y])
    m = len(ay)
    offsets = np.arange(m + 1)
    prev = offsets.copy()
    base = np.empty(m + 1, dtype=np.int64)
    for i in range(1, len(ax) + 1):
        base[0] = i
        np.minimum(prev[1:] + 1, prev[:-1] + (ay != ax[i - 1]), out=base[1:])
        # fold in left-to-right insertions: cur[j] = min_k<=j (base[k] + j - k)
        prev = np.minimum.accumulate(base - offsets) + offsets
    return int(prev[m])


@dataclass(frozen=True)
class IntegrityRow:
    apk_name: str
    before_lines: int
    after_lines: int
    diff_lines: int
    verdict: str  # "Pass" | "Fail"

    def __post_init__(self):
        if self.diff_lines < 0:
            raise ValueError("diff_lines must be >= 0")
        if self.verdict not in ("Pass", "Fail"):
            raise ValueError(f"unknown verdict {self.verdict!r}")


DEFAULT_PASS_THRESHOLD = 3


def integrity_report(
    rows_input: Iterable[tuple[str, ExecutionLog, ExecutionLog]],
    pass_threshold: int = DEFAULT_PASS_THRESHOLD,
) -> list[IntegrityRow]:
    """Per-APK line counts and normalized diff, with a threshold verdict."""
    if pass_threshold < 0:
        raise ValueError("pass_threshold must be >= 0")
    rows = []
    for name, before, after in rows_input:
        diff = diff_count(normalize_log(before), normalize_log(after))
        rows.append(
            IntegrityRow(
                apk_name=name,
                before_lines=len(before),
                after_lines=len(after),
                diff_lines=diff,
                verdict="Pass" if diff <= pass_threshold else "Fail",
            )
        )
    return rows


def render_table(rows: Sequence[IntegrityRow]) -> str:
    """Aligned text table: #, APK name, Before, After, Diff, Verdict."""
    header = ("#", "APK names", "Before", "After", "Diff", "Verdict")
    body = [
        (str(i), row.apk_name, str(row.before_lines), str(row.after_lines),
         str(row.diff_lines), row.verdict)
        for i, row in enumerate(rows, start=1)
    ]
    widths = [max(len(line[col]) for line in [header, *body]) for col in range(len(header))]
    out = []
    for line in [header, *body]:
        cells = [line[0].rjust(widths[0]), line[1].ljust(widths[1])]
        cells += [line[col].rjust(widths[col]) for col in range(2, len(header))]
        out.append("  ".join(cells).rstrip())
    return "\n".join(out) + "\n"


def render_csv(rows: Sequence[IntegrityRow]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["name", "before", "after", "diff", "verdict"])
    for row in rows:
        writer.writerow(
            [row.apk_name, row.before_lines, row.after_lines, row.diff_lines, row.verdict]
        )
    return buffer.getvalue()
