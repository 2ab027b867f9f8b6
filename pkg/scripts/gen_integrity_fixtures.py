#!/usr/bin/env python3
"""Generate the checked-in execution-log fixture pairs.

Each pair simulates the logcat capture of one app before and after
modification.  The two captures differ everywhere in timestamps, PIDs/TIDs
and heap addresses (which normalization must mask) and in a small, exactly
controlled set of real line differences (which it must keep).  Counts and
diffs are verified against the targets before anything is written.

Run from the repository root:  python scripts/gen_integrity_fixtures.py
"""

from __future__ import annotations

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from gangmam.integrity import ExecutionLog, diff_count, normalize_log  # noqa: E402

OUT_DIR = Path(__file__).resolve().parents[1] / "tests" / "fixtures" / "integrity_logs"

# name, before lines, after lines, expected diff, edit plan.
# Edits: ("change", pos) counts 1; ("insert", pos) 1; ("delete", pos) 1.
ROWS = [
    ("puzzles.legogames9.legobatman9.apk", 139, 139, 1,
     [("change", 61)]),
    ("com.tianer.cloudcharge.apk", 141, 141, 1,
     [("change", 88)]),
    ("com.thevotinggame.thevotinggame.apk", 35, 35, 1,
     [("change", 17)]),
    ("com.cocoa.cocoa_178755715f29.apk", 35, 34, 3,
     [("change", 7), ("change", 16), ("delete", 27)]),
    ("com.landlordvision.mobile.apk", 141, 141, 1,
     [("change", 52)]),
    ("tools.app.volume.super.loud.apk", 153, 153, 1,
     [("change", 120)]),
    ("com.robotobia.hdstockwallpapers.apk", 139, 140, 2,
     [("change", 33), ("insert", 97)]),
    ("com.appybuilder.asker88kudus.M0.apk", 140, 140, 1,
     [("change", 74)]),
    ("com.stmvideo.webtv.radiorevivert.apk", 140, 141, 2,
     [("change", 29), ("insert", 103)]),
    ("ru.indieproductions.survivalguidef.apk", 141, 139, 2,
     [("delete", 40), ("delete", 95)]),
]

TAGS = ("ActivityManager", "WindowManager", "ActivityTaskManager", "libprocessgroup",
        "Zygote", "PackageManager", "MonkeyDriver", "InputDispatcher", "art", "AudioFlinger")

VERBS = ("resumed", "focused", "measured", "layered", "queued", "drawn", "bound", "attached")


def alpha_token(i: int) -> str:
    out = ""
    i += 1
    while i:
        i, r = divmod(i - 1, 26)
        out = chr(ord("a") + r) + out
    return out


def logical_lines(package: str, count: int) -> list[str]:
    """Messages only; unique per line so the diff is unambiguous."""
    lines = []
    for i in range(count):
        token = alpha_token(i * 7 + len(package))
        tag = TAGS[i % len(TAGS)]
        verb = VERBS[i % len(VERBS)]
        if i % 9 == 3:
            message = f"{tag}: window {verb} handle @HEX@ for {package} token {token}"
        else:
            message = f"{tag}: activity {verb} step {token} in {package}"
        lines.append(message)
    return lines


def render(messages: list[str], package: str, variant: int) -> list[str]:
    """Attach run-variant noise: timestamps, pid/tid columns, hex handles."""
    rendered = []
    pid = 4200 + variant * 913
    for i, message in enumerate(messages):
        minute = (7 * variant + i) // 60 % 60
        second = (11 * variant + i) % 60
        millis = (variant * 317 + i * 53) % 1000
        tid = pid + 1 + (i % 7)
        message = message.replace("@HEX@", f"0x{(0x7f3a0000 + variant * 0x1111 + i * 0x40):x}")
        rendered.append(
            f"06-12 14:{minute:02d}:{second:02d}.{millis:03d} {pid:5d} {tid:5d} I {message}"
        )
    return rendered


def apply_edits(messages: list[str], edits, package: str) -> list[str]:
    out = list(messages)
    # right-to-left so positions stay valid
    for op, pos in sorted(edits, key=lambda e: -e[1]):
        if op == "change":
            tag = out[pos].split(":")[0]
            out[pos] = f"{tag}: dynamic input field updated to {alpha_token(pos * 3 + 5)}-variant"
        elif op == "delete":
            del out[pos]
        elif op == "insert":
            out.insert(pos, f"MonkeyDriver: extra idle tick observed near {alpha_token(pos + 11)}")
        else:
            raise ValueError(op)
    return out


def main() -> int:
    OUT_DIR.mkdir(parents=True, exist_ok=True)
    for name, before_count, after_count, want_diff, edits in ROWS:
        stem = name[: -len(".apk")]
        base = logical_lines(name, before_count)
        after_logical = apply_edits(base, edits, name)
        before_lines = render(base, name, variant=1)
        after_lines = render(after_logical, name, variant=2)

        before = ExecutionLog(name, tuple(before_lines))
        after = ExecutionLog(name, tuple(after_lines))
        assert len(before) == before_count, (name, len(before))
        assert len(after) == after_count, (name, len(after))
        got = diff_count(normalize_log(before), normalize_log(after))
        assert got == want_diff, f"{name}: diff {got}, wanted {want_diff}"
        raw = diff_count(before, after)
        assert raw >= before_count - 5, f"{name}: raw diff {raw} too small to exercise masking"

        (OUT_DIR / f"{stem}.before.log").write_text(before.text(), encoding="utf-8")
        (OUT_DIR / f"{stem}.after.log").write_text(after.text(), encoding="utf-8")
        print(f"{name}: {before_count}/{after_count}/{got} ok")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
