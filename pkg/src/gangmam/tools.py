"""Clients for the external programs the pipeline drives.

Every invocation goes through a :class:`ToolRunner`, which either launches a
real process (live), launches and records the result (record), or serves the
result from a transcript without touching the system (replay).  Transcripts
are JSON lines of ``{key, exit_code, stdout_b64, stderr_b64}``; keys are
content-addressed over (tool, argv, stdin) with path arguments reduced to
their basenames so fixtures survive relocation.
"""

from __future__ import annotations

import base64
import json
import subprocess
import threading
import time
from collections import defaultdict
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Callable

from .apk import DecodedApk, load_decoded_apk, sha256_file, sha256_hex
from .errors import (
    EmulatorNotFound,
    InstallFailed,
    KeystoreError,
    ToolFailed,
    ToolTimeout,
    TranscriptMiss,
)
from .integrity import ExecutionLog

DEFAULT_TIMEOUT = 300.0
DEFAULT_MONKEY_EVENTS = 500


class Tool(Enum):
    DECODER = "decoder"
    BUILDER = "builder"
    KEYGEN = "keygen"
    SIGNER = "signer"
    DEVICE_BRIDGE = "device-bridge"


@dataclass(frozen=True)
class ToolInvocation:
    tool: Tool
    argv: tuple[str, ...]
    workdir: Path | None = None
    timeout: float = DEFAULT_TIMEOUT

    def __post_init__(self):
        if not self.argv:
            raise ValueError("argv must not be empty")
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")


@dataclass(frozen=True)
class ToolResult:
    exit_code: int
    stdout: bytes
    stderr: bytes
    duration: float = 0.0


@dataclass(frozen=True)
class ExecutionMode:
    """Live, or transcript-backed record / replay."""

    kind: str  # "live" | "record" | "replay"
    transcript: Path | None = None

    def __post_init__(self):
        if self.kind not in ("live", "record", "replay"):
            raise ValueError(f"unknown execution mode {self.kind!r}")
        if self.kind in ("record", "replay") and self.transcript is None:
            raise ValueError(f"{self.kind} mode needs a transcript path")

    @classmethod
    def live(cls) -> "ExecutionMode":
        return cls("live")

    @classmethod
    def record(cls, transcript: Path) -> "ExecutionMode":
        return cls("record", Path(transcript))

    @classmethod
    def replay(cls, transcript: Path) -> "ExecutionMode":
        return cls("replay", Path(transcript))


def invocation_key(invocation: ToolInvocation, stdin: bytes = b"") -> str:
    """Content address of an invocation; path arguments keep only basenames."""
    normalized = [
        token.rsplit("/", 1)[-1] if "/" in token else token
        for token in invocation.argv
    ]
    payload = "\x00".join([invocation.tool.value, *normalized]).encode("utf-8")
    return sha256_hex(payload + b"\x00" + stdin)


def _subprocess_launch(invocation: ToolInvocation, stdin: bytes = b"") -> ToolResult:
    started = time.monotonic()
    try:
        completed = subprocess.run(
            list(invocation.argv),
            input=stdin,
            cwd=str(invocation.workdir) if invocation.workdir else None,
            capture_output=True,
            timeout=invocation.timeout,
        )
    except subprocess.TimeoutExpired:
        raise ToolTimeout(
            f"{invocation.argv[0]} exceeded {invocation.timeout}s"
        ) from None
    except FileNotFoundError as exc:
        raise ToolFailed(invocation.argv[0], 127, str(exc)) from None
    return ToolResult(
        exit_code=completed.returncode,
        stdout=completed.stdout,
        stderr=completed.stderr,
        duration=time.monotonic() - started,
    )


def load_transcript(path: Path) -> dict[str, ToolResult]:
    """Parse a transcript file; later entries win on key collisions."""
    entries: dict[str, ToolResult] = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        record = json.loads(line)
        entries[record["key"]] = ToolResult(
            exit_code=int(record["exit_code"]),
            stdout=base64.b64decode(record["stdout_b64"]),
            stderr=base64.b64decode(record["stderr_b64"]),
        )
    return entries


class ToolRunner:
    """Mode-aware invocation front end.

    ``launch`` is injectable so tests can spy on (or fake) process launches;
    replay mode never calls it.
    """

    def __init__(
        self,
        mode: ExecutionMode,
        launch: Callable[[ToolInvocation, bytes], ToolResult] | None = None,
    ):
        self.mode = mode
        self._launch = launch or _subprocess_launch
        self._replay_cache: dict[str, ToolResult] | None = None
        self._lock = threading.Lock()

    def _transcript_entries(self) -> dict[str, ToolResult]:
        if self._replay_cache is None:
            path = self.mode.transcript
            if path is None or not Path(path).is_file():
                raise TranscriptMiss(f"transcript {path} does not exist")
            self._replay_cache = load_transcript(path)
        return self._replay_cache

    def run(self, invocation: ToolInvocation, stdin: bytes = b"") -> ToolResult:
        if self.mode.kind == "replay":
            key = invocation_key(invocation, stdin)
            entries = self._transcript_entries()
            if key not in entries:
                raise TranscriptMiss(
                    f"no transcript entry for {' '.join(invocation.argv)} (key {key[:12]}...)"
                )
            return entries[key]
        result = self._launch(invocation, stdin)
        if self.mode.kind == "record":
            line = json.dumps(
                {
                    "key": invocation_key(invocation, stdin),
                    "exit_code": result.exit_code,
                    "stdout_b64": base64.b64encode(result.stdout).decode("ascii"),
                    "stderr_b64": base64.b64encode(result.stderr).decode("ascii"),
                },
                sort_keys=True,
            )
            with self._lock:
                with open(self.mode.transcript, "a", encoding="utf-8") as handle:
                    handle.write(line + "\n")
        return result

    @property
    def is_replay(self) -> bool:
        return self.mode.kind == "replay"


@dataclass(frozen=True)
class ToolCommands:
    """Executable names (or paths) for the external programs."""

    apktool: str = "apktool"
    adb: str = "adb"
    keytool: str = "keytool"
    jarsigner: str = "jarsigner"


@dataclass(frozen=True)
class KeystoreConfig:
    path: Path
    alias: str = "gangmam"
    storepass: str = "gangmam-store"
    keypass: str = "gangmam-store"
    dname: str = "CN=gangmam, OU=testing"
    validity_days: int = 10000


def _check_ok(tool: str, result: ToolResult) -> ToolResult:
    if result.exit_code != 0:
        raise ToolFailed(tool, result.exit_code, result.stderr.decode("utf-8", "replace")[:400])
    return result


def decode_apk(
    apk_path: Path,
    out_dir: Path,
    runner: ToolRunner,
    commands: ToolCommands = ToolCommands(),
    timeout: float = DEFAULT_TIMEOUT,
) -> DecodedApk:
    """Disassemble an APK into ``out_dir`` and parse the result.

    In replay mode no process runs; the decoded tree must already be present
    (a checked-in fixture or a staged copy) and the transcript only vouches
    for the recorded exit status.
    """
    apk_path = Path(apk_path)
    invocation = ToolInvocation(
        Tool.DECODER,
        (commands.apktool, "d", str(apk_path), "-o", str(out_dir), "-f"),
        timeout=timeout,
    )
    _check_ok(commands.apktool, runner.run(invocation))
    return load_decoded_apk(Path(out_dir), sha256_file(apk_path))


def build_and_sign(
    decoded_dir: Path,
    out_apk: Path,
    keystore: KeystoreConfig,
    runner: ToolRunner,
    commands: ToolCommands = ToolCommands(),
    timeout: float = DEFAULT_TIMEOUT,
) -> Path:
    """Rebuild a decoded directory into a signed APK.

    The keystore is generated once (RSA-2048 self-signed) when its file does
    not exist yet and reused afterwards.
    """
    out_apk = Path(out_apk)
    build = ToolInvocation(
        Tool.BUILDER,
        (commands.apktool, "b", str(decoded_dir), "-o", str(out_apk)),
        timeout=timeout,
    )
    _check_ok(commands.apktool, runner.run(build))

    if not Path(keystore.path).exists():
        keygen = ToolInvocation(
            Tool.KEYGEN,
            (
                commands.keytool,
                "-genkeypair",
                "-keyalg", "RSA",
                "-keysize", "2048",
                "-keystore", str(keystore.path),
                "-alias", keystore.alias,
                "-storepass", keystore.storepass,
                "-keypass", keystore.keypass,
                "-dname", keystore.dname,
                "-validity", str(keystore.validity_days),
            ),
            timeout=timeout,
        )
        result = runner.run(keygen)
        if result.exit_code != 0:
            raise KeystoreError(
                f"keytool failed ({result.exit_code}): "
                + result.stderr.decode("utf-8", "replace")[:400]
            )

    sign = ToolInvocation(
        Tool.SIGNER,
        (
            commands.jarsigner,
            "-keystore", str(keystore.path),
            "-storepass", keystore.storepass,
            "-keypass", keystore.keypass,
            str(out_apk),
            keystore.alias,
        ),
        timeout=timeout,
    )
    _check_ok(commands.jarsigner, runner.run(sign))

    if runner.is_replay:
        # No builder ran; materialize a deterministic placeholder artifact.
        if not out_apk.exists():
            out_apk.parent.mkdir(parents=True, exist_ok=True)
            out_apk.write_bytes(b"gangmam replay artifact: %s\n" % out_apk.name.encode())
    elif not out_apk.exists():
        raise ToolFailed(commands.apktool, 0, f"builder reported success but {out_apk} is missing")
    return out_apk


# One queue per device so concurrent sessions never interleave on a device.
_DEVICE_LOCKS: dict[str, threading.Lock] = defaultdict(threading.Lock)
_DEVICE_LOCKS_GUARD = threading.Lock()


def _device_lock(name: str) -> threading.Lock:
    with _DEVICE_LOCKS_GUARD:
        return _DEVICE_LOCKS[name]


def list_devices(
    runner: ToolRunner,
    commands: ToolCommands = ToolCommands(),
    timeout: float = DEFAULT_TIMEOUT,
) -> list[str]:
    """Names from the bridge's device list (``<name>\\tdevice`` lines)."""
    invocation = ToolInvocation(Tool.DEVICE_BRIDGE, (commands.adb, "devices"), timeout=timeout)
    result = _check_ok(commands.adb, runner.run(invocation))
    devices = []
    for line in result.stdout.decode("utf-8", "replace").splitlines():
        parts = line.split()
        if len(parts) == 2 and parts[1] == "device":
            devices.append(parts[0])
    return devices


def device_session(
    apk_path: Path,
    package: str,
    emulator: str,
    runner: ToolRunner,
    commands: ToolCommands = ToolCommands(),
    monkey_seed: int = 1,
    event_count: int = DEFAULT_MONKEY_EVENTS,
    timeout: float = DEFAULT_TIMEOUT,
) -> ExecutionLog:
    """One seeded exercise session: install, monkey, capture, uninstall.

    The emulator must appear in the device list before any phase runs.  A
    phase failure skips the rest, but cleanup (clearing the log buffer)
    always runs.
    """
    apk_path = Path(apk_path)
    if emulator not in list_devices(runner, commands, timeout):
        raise EmulatorNotFound(f"{emulator} is not in the device list")

    adb = commands.adb

    def bridge(*args: str) -> ToolInvocation:
        return ToolInvocation(Tool.DEVICE_BRIDGE, (adb, "-s", emulator, *args), timeout=timeout)

    with _device_lock(emulator):
        try:
            install = runner.run(bridge("install", str(apk_path)))
            if install.exit_code != 0:
                raise InstallFailed(
                    f"install of {apk_path.name} failed: "
                    + install.stderr.decode("utf-8", "replace")[:400]
                )
            _check_ok(adb, runner.run(
                bridge("shell", "monkey", "-p", package, "-s", str(monkey_seed), str(event_count))
            ))
            capture = _check_ok(adb, runner.run(bridge("logcat", "-d")))
            _check_ok(adb, runner.run(bridge("uninstall", package)))
        finally:
            try:
                runner.run(bridge("logcat", "-c"))
            except Exception:
                pass  # cleanup is best-effort and must not mask the real failure
    return ExecutionLog.from_text(apk_path.name, capture.stdout.decode("utf-8", "replace"))
