"""Command-line entry point.

Exit codes: 0 on success, 2 on usage errors, 3 on environment errors
(missing inputs, unreachable emulator, unwritable output, bad config).
"""

from __future__ import annotations

import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

from . import __version__
from .errors import (
    ConflictingFlags,
    GangMamError,
    MissingValue,
    UnknownFlag,
    UsageError,
)
from .gan import GanConfig
from .pipeline import (
    CONFIG_ENV_VAR,
    apply_overrides,
    clean_output,
    load_config,
    run_batch,
    train_from_csv,
    train_synthetic,
)

USAGE = f"""usage: gangmam [-e <name>] [-n <path>] [-c] [-v] [-h] [run options]
       gangmam train --out <path> [train options]

  -e   Name of the emulator
  -c   Clean all output folder contents created earlier
  -n   Path of the feature vector file to run in No GANG mode
  -v   Print current tool version
  -h   help message

run options (override the config file, default path ${CONFIG_ENV_VAR}):
  --config <path>      pipeline config file
  --input-dir <dir>    directory scanned for *.apk inputs
  --output-dir <dir>   directory all artifacts are written under
  --mode <m>           live | replay | record
  --transcript <path>  transcript file for replay/record modes
  --model <path>       trained generator model file
  --threshold <n>      integrity pass threshold (diff lines)

train options:
  --out <path>         where to write the model (required)
  --malware-csv <p>    feature CSV of malicious vectors
  --benign-csv <p>     feature CSV of benign vectors
                       (omit both to use the built-in synthetic corpus)
  --seed <n> --dims <n> --n-mal <n> --n-ben <n>
  --epochs <n> --batch-size <n> --lr <x> --noise-dim <n>
"""

_RUN_VALUE_FLAGS = {
    "--config": "config_path",
    "--input-dir": "input_dir",
    "--output-dir": "output_dir",
    "--mode": "mode",
    "--transcript": "transcript",
    "--model": "gan_model",
    "--threshold": "pass_threshold",
}

_TRAIN_VALUE_FLAGS = {
    "--out", "--malware-csv", "--benign-csv", "--seed", "--dims", "--n-mal",
    "--n-ben", "--epochs", "--batch-size", "--lr", "--noise-dim",
    "--detector-epochs", "--detector-lr",
}


@dataclass
class Command:
    kind: str  # help | version | clean | run | train
    emulator: str | None = None
    csv_path: Path | None = None
    config_path: Path | None = None
    overrides: dict = field(default_factory=dict)
    train_opts: dict = field(default_factory=dict)


def _take_value(argv: list[str], i: int) -> str:
    flag = argv[i]
    if i + 1 >= len(argv) or argv[i + 1].startswith("-"):
        raise MissingValue(f"{flag} needs a value")
    return argv[i + 1]


def _parse_train(argv: list[str]) -> Command:
    opts: dict[str, str] = {}
    i = 0
    while i < len(argv):
        flag = argv[i]
        if flag in ("-h", "--help"):
            return Command(kind="help")
        if flag not in _TRAIN_VALUE_FLAGS:
            raise UnknownFlag(f"unknown train flag {flag!r}")
        opts[flag.lstrip("-").replace("-", "_")] = _take_value(argv, i)
        i += 2
    if "out" not in opts:
        raise MissingValue("train needs --out <path>")
    if ("malware_csv" in opts) != ("benign_csv" in opts):
        raise ConflictingFlags("--malware-csv and --benign-csv must be given together")
    return Command(kind="train", train_opts=opts)


def parse_args(argv: list[str]) -> Command:
    """Map the flag surface onto a command; raises UsageError subclasses."""
    if argv and argv[0] == "train":
        return _parse_train(argv[1:])
    if "-h" in argv:
        return Command(kind="help")
    if "-v" in argv:
        return Command(kind="version")

    command = Command(kind="run")
    clean = False
    i = 0
    while i < len(argv):
        flag = argv[i]
        if flag == "-c":
            clean = True
            i += 1
        elif flag == "-e":
            command.emulator = _take_value(argv, i)
            i += 2
        elif flag == "-n":
            command.csv_path = Path(_take_value(argv, i))
            i += 2
        elif flag in _RUN_VALUE_FLAGS:
            value = _take_value(argv, i)
            if flag == "--config":
                command.config_path = Path(value)
            elif flag == "--threshold":
                try:
                    command.overrides["pass_threshold"] = int(value)
                except ValueError:
                    raise UsageError(f"--threshold needs an integer, got {value!r}") from None
            else:
                command.overrides[_RUN_VALUE_FLAGS[flag]] = value
            i += 2
        else:
            raise UnknownFlag(f"unknown flag {flag!r}")
    if clean and command.csv_path is not None:
        raise ConflictingFlags("-c cannot be combined with -n")
    if clean:
        command.kind = "clean"
    return command


def _int_opt(opts: dict, key: str, default: int) -> int:
    try:
        return int(opts.get(key, default))
    except ValueError:
        raise UsageError(f"--{key.replace('_', '-')} needs an integer") from None


def _float_opt(opts: dict, key: str, default: float) -> float:
    try:
        return float(opts.get(key, default))
    except ValueError:
        raise UsageError(f"--{key.replace('_', '-')} needs a number") from None


def _run_train(command: Command) -> int:
    opts = command.train_opts
    gan_config = GanConfig(
        noise_dim=_int_opt(opts, "noise_dim", 10),
        learning_rate=_float_opt(opts, "lr", 0.001),
        epochs=_int_opt(opts, "epochs", 200),
        batch_size=_int_opt(opts, "batch_size", 32),
        seed=_int_opt(opts, "seed", 7),
    )
    detector_epochs = _int_opt(opts, "detector_epochs", 400)
    detector_lr = _float_opt(opts, "detector_lr", 0.5)
    out = Path(opts["out"])
    if "malware_csv" in opts:
        _, report = train_from_csv(
            out, Path(opts["malware_csv"]), Path(opts["benign_csv"]),
            gan_config, detector_epochs, detector_lr,
        )
    else:
        _, report = train_synthetic(
            out,
            seed=_int_opt(opts, "seed", 7),
            dims=_int_opt(opts, "dims", 64),
            n_mal=_int_opt(opts, "n_mal", 500),
            n_ben=_int_opt(opts, "n_ben", 500),
            gan_config=gan_config,
            detector_epochs=detector_epochs,
            detector_lr=detector_lr,
        )
    print(f"model written to {out}")
    print(f"final evasion rate vs reference detector: {report.final_evasion_rate:.3f}")
    return 0


def main(argv: list[str] | None = None) -> int:
    if argv is None:
        argv = sys.argv[1:]
    try:
        command = parse_args(list(argv))
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        print(USAGE, file=sys.stderr, end="")
        return 2

    if command.kind == "help":
        print(USAGE, end="")
        return 0
    if command.kind == "version":
        print(f"gangmam {__version__}")
        return 0

    try:
        if command.kind == "train":
            return _run_train(command)

        config_path = command.config_path
        if config_path is None and os.environ.get(CONFIG_ENV_VAR):
            config_path = Path(os.environ[CONFIG_ENV_VAR])
        config = load_config(config_path)
        apply_overrides(config, command.overrides)
        if command.emulator is not None:
            config.emulator = command.emulator

        if command.kind == "clean":
            clean_output(config)
            print(f"cleaned {config.output_dir}")
            return 0

        result = run_batch(config, nogang_csv=command.csv_path)
        ok = sum(1 for outcome in result.outcomes if outcome.status == "ok")
        print(f"processed {len(result.outcomes)} APK(s): {ok} ok, "
              f"{len(result.outcomes) - ok} failed")
        if result.report_path is not None:
            print(f"integrity report: {result.report_path}")
        return result.exit_code
    except GangMamError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
