"""Batch orchestration: decode, extract, perturb, modify, rebuild, validate.

One :class:`PipelineConfig` (JSON file, overridable per run) drives the whole
batch.  Per-APK failures become failure rows and never abort the batch; all
artifacts written under the output directory are deterministic for fixed
inputs, seeds and transcripts (no wall-clock data is ever written).
"""

from __future__ import annotations

import json
import shutil
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import __version__
from .apk import DecodedApk, catalog_from_corpus, extract_features
from .detector import LogisticDetector, synth_corpus, train_logistic
from .errors import (
    ConfigError,
    EmulatorNotFound,
    GangMamError,
    NoInputs,
    OutputDirUnwritable,
)
from .featurecsv import csv_decode, csv_encode
from .features import FeatureCatalog, FeatureVector, stack_bits
from .gan import GanConfig, init_gan, model_load, model_save, perturb, train_matrices
from .integrity import IntegrityRow, integrity_report, render_csv, render_table
from .mam import apply_plan, build_plan
from .tools import (
    ExecutionMode,
    KeystoreConfig,
    ToolCommands,
    ToolRunner,
    build_and_sign,
    decode_apk,
    device_session,
    list_devices,
)

CONFIG_ENV_VAR = "GANGMAM_CONFIG"
CONFIG_VERSION = 1


@dataclass
class PipelineConfig:
    input_dir: Path = Path("input")
    output_dir: Path = Path("output")
    mode: str = "live"  # live | replay | record
    transcript: Path | None = None
    emulator: str | None = None
    monkey_seed: int = 1234
    monkey_events: int = 500
    pass_threshold: int = 3
    tool_timeout: float = 300.0
    gan_model: Path | None = None
    noise_seed: int = 7
    stub_package: str = "gangmam.injected"
    catalog_csv: Path | None = None
    keystore_path: Path | None = None
    keystore_alias: str = "gangmam"
    keystore_storepass: str = "gangmam-store"
    tools: ToolCommands = field(default_factory=ToolCommands)

    def execution_mode(self) -> ExecutionMode:
        if self.mode == "live":
            return ExecutionMode.live()
        if self.transcript is None:
            raise ConfigError(f"mode {self.mode!r} requires a transcript path")
        return ExecutionMode(self.mode, Path(self.transcript))

    def keystore(self) -> KeystoreConfig:
        path = self.keystore_path or self.output_dir / "keys" / "gangmam.jks"
        return KeystoreConfig(
            path=Path(path),
            alias=self.keystore_alias,
            storepass=self.keystore_storepass,
            keypass=self.keystore_storepass,
        )


_PATH_KEYS = {"input_dir", "output_dir", "transcript", "gan_model", "catalog_csv", "keystore_path"}


def load_config(path: Path | None) -> PipelineConfig:
    """Defaults overlaid with a versioned JSON config file."""
    config = PipelineConfig()
    if path is None:
        return config
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    version = raw.pop("config_version", CONFIG_VERSION)
    if version != CONFIG_VERSION:
        raise ConfigError(f"unsupported config_version {version}")
    tool_overrides = raw.pop("tools", {})
    if not isinstance(tool_overrides, dict):
        raise ConfigError("'tools' must be an object")
    known = {f.name for f in fields(PipelineConfig)}
    for key, value in raw.items():
        if key not in known:
            raise ConfigError(f"unknown config key {key!r}")
        if key in _PATH_KEYS and value is not None:
            value = Path(value)
        setattr(config, key, value)
    known_tools = {f.name for f in fields(ToolCommands)}
    unknown_tools = set(tool_overrides) - known_tools
    if unknown_tools:
        raise ConfigError(f"unknown tool name(s): {sorted(unknown_tools)}")
    config.tools = replace(config.tools, **tool_overrides)
    return config


def apply_overrides(config: PipelineConfig, overrides: dict) -> PipelineConfig:
    for key, value in overrides.items():
        if key in _PATH_KEYS and value is not None:
            value = Path(value)
        setattr(config, key, value)
    return config


@dataclass
class ApkOutcome:
    name: str
    apk_hash: str | None = None
    status: str = "ok"
    stage: str | None = None
    error: str | None = None
    row: IntegrityRow | None = None

    def fail(self, stage: str, error: Exception | str) -> None:
        self.status = "failed"
        self.stage = stage
        self.error = str(error)


@dataclass
class BatchResult:
    exit_code: int
    outcomes: list[ApkOutcome]
    rows: list[IntegrityRow]
    report_path: Path | None = None


@dataclass
class _Job:
    name: str  # APK file name
    stem: str
    apk_path: Path
    workdir: Path
    outcome: ApkOutcome
    decoded: DecodedApk | None = None
    original: FeatureVector | None = None
    target: FeatureVector | None = None
    modified_apk: Path | None = None

    @property
    def live(self) -> bool:
        return self.outcome.status == "ok"


def _prepare_output(config: PipelineConfig) -> None:
    try:
        for sub in ("", "work", "modified", "logs", "keys"):
            (config.output_dir / sub).mkdir(parents=True, exist_ok=True)
        probe = config.output_dir / ".write-probe"
        probe.write_bytes(b"")
        probe.unlink()
    except OSError as exc:
        raise OutputDirUnwritable(f"cannot write under {config.output_dir}: {exc}") from None


def clean_output(config: PipelineConfig) -> None:
    """Empty the output directory; touches nothing outside it."""
    root = Path(config.output_dir)
    if str(root.resolve()) == root.resolve().anchor:
        raise OutputDirUnwritable(f"refusing to clean filesystem root {root}")
    if not root.is_dir():
        return
    for entry in sorted(root.iterdir()):
        if entry.is_dir() and not entry.is_symlink():
            shutil.rmtree(entry)
        else:
            entry.unlink()


def _noise_for(apk_hash: str, noise_seed: int, noise_dim: int) -> np.ndarray:
    # Keyed on the APK hash, so batch order cannot change any vector.
    rng = np.random.default_rng([int(noise_seed), int(apk_hash[:16], 16)])
    return rng.uniform(0.0, 1.0, size=noise_dim)


def _read_bytes(path: Path, what: str) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read {what} {path}: {exc}") from None


def run_batch(
    config: PipelineConfig, nogang_csv: Path | None = None, launch=None
) -> BatchResult:
    """Process every APK in the input directory; one row per input.

    In replay mode each ``X.apk`` needs its decoded fixture tree at ``X/``
    next to it (staged into the work directory before the transcript-backed
    decode step).  With ``nogang_csv`` the target vectors come from the CSV
    (matched by hash) instead of the GAN.  ``launch`` overrides the process
    launcher (testing seam; replay mode never launches anything).
    """
    apk_paths = sorted(Path(config.input_dir).glob("*.apk"))
    if not apk_paths:
        raise NoInputs(f"no .apk inputs under {config.input_dir}")
    _prepare_output(config)
    runner = ToolRunner(config.execution_mode(), launch=launch)

    if config.emulator is None:
        raise EmulatorNotFound("no emulator configured (use -e or the config file)")
    if config.emulator not in list_devices(runner, config.tools, config.tool_timeout):
        raise EmulatorNotFound(f"{config.emulator} is not in the device list")

    jobs = [
        _Job(
            name=path.name,
            stem=path.stem,
            apk_path=path,
            workdir=config.output_dir / "work" / path.stem,
            outcome=ApkOutcome(name=path.name),
        )
        for path in apk_paths
    ]

    for job in jobs:
        try:
            if job.workdir.exists():
                shutil.rmtree(job.workdir)
            if runner.is_replay:
                fixture_tree = job.apk_path.parent / job.stem
                if not fixture_tree.is_dir():
                    raise NoInputs(f"replay mode needs a decoded fixture at {fixture_tree}")
                shutil.copytree(fixture_tree, job.workdir)
            job.decoded = decode_apk(
                job.apk_path, job.workdir, runner, config.tools, config.tool_timeout
            )
            job.outcome.apk_hash = job.decoded.source_apk_hash
        except GangMamError as exc:
            job.outcome.fail("decode", exc)

    decoded_jobs = [job for job in jobs if job.live]

    # Column space: the No-GANG CSV wins, then a pinned catalog file, then
    # the corpus union.
    csv_targets: dict[str, FeatureVector] = {}
    if nogang_csv is not None:
        catalog, csv_vectors = csv_decode(Path(nogang_csv).read_bytes())
        csv_targets = {vector.apk_hash: vector for vector in csv_vectors}
    elif config.catalog_csv is not None:
        catalog, _ = csv_decode(Path(config.catalog_csv).read_bytes())
    else:
        catalog = (
            catalog_from_corpus([job.decoded for job in decoded_jobs])
            if decoded_jobs
            else FeatureCatalog(())
        )

    for job in decoded_jobs:
        job.original = extract_features(job.decoded, catalog)
    _write_feature_csv(config.output_dir / "features_original.csv", catalog, decoded_jobs, "original")

    if nogang_csv is None and decoded_jobs:
        if config.gan_model is None:
            raise ConfigError("full mode needs a trained model (gan_model); run 'gangmam train'")
        model = model_load(Path(config.gan_model).read_bytes())
        if model.feature_dim != len(catalog):
            raise ConfigError(
                f"model expects {model.feature_dim} features but the catalog has {len(catalog)}"
            )
        for job in decoded_jobs:
            noise = _noise_for(
                job.decoded.source_apk_hash, config.noise_seed, model.config.noise_dim
            )
            job.target = perturb(model, job.original, noise)
    elif nogang_csv is not None:
        for job in decoded_jobs:
            target = csv_targets.get(job.decoded.source_apk_hash)
            if target is None:
                job.outcome.fail(
                    "target", f"no CSV entry for hash {job.decoded.source_apk_hash}"
                )
            else:
                job.target = target
    _write_feature_csv(
        config.output_dir / "features_modified.csv",
        catalog,
        [job for job in decoded_jobs if job.live],
        "target",
    )

    keystore = config.keystore()
    for job in jobs:
        if not job.live:
            continue
        try:
            plan = build_plan(job.original, job.target, catalog, config.stub_package)
            apply_plan(job.decoded, plan)
            job.modified_apk = config.output_dir / "modified" / job.name
            build_and_sign(
                job.workdir, job.modified_apk, keystore, runner,
                config.tools, config.tool_timeout,
            )
        except GangMamError as exc:
            job.outcome.fail("modify", exc)

    report_inputs = []
    for job in jobs:
        if not job.live:
            continue
        try:
            package = job.decoded.manifest.package
            before = device_session(
                job.apk_path, package, config.emulator, runner, config.tools,
                config.monkey_seed, config.monkey_events, config.tool_timeout,
            )
            after = device_session(
                job.modified_apk, package, config.emulator, runner, config.tools,
                config.monkey_seed, config.monkey_events, config.tool_timeout,
            )
            (config.output_dir / "logs" / f"{job.stem}.before.log").write_text(
                before.text(), encoding="utf-8"
            )
            (config.output_dir / "logs" / f"{job.stem}.after.log").write_text(
                after.text(), encoding="utf-8"
            )
            report_inputs.append((job, (job.name, before, after)))
        except GangMamError as exc:
            job.outcome.fail("validate", exc)

    rows = integrity_report([entry for _, entry in report_inputs], config.pass_threshold)
    for (job, _), row in zip(report_inputs, rows):
        job.outcome.row = row

    (config.output_dir / "integrity_report.txt").write_text(
        render_table(rows), encoding="utf-8"
    )
    (config.output_dir / "integrity_report.csv").write_text(
        render_csv(rows), encoding="utf-8"
    )
    manifest_path = config.output_dir / "run_manifest.json"
    manifest_path.write_text(_run_manifest_json(config, jobs, catalog), encoding="utf-8")

    return BatchResult(
        exit_code=0,
        outcomes=[job.outcome for job in jobs],
        rows=rows,
        report_path=config.output_dir / "integrity_report.txt",
    )


def _write_feature_csv(path: Path, catalog, jobs, attr: str) -> None:
    vectors = [getattr(job, attr) for job in jobs if getattr(job, attr) is not None]
    path.write_bytes(csv_encode(catalog, vectors))


def _run_manifest_json(config: PipelineConfig, jobs, catalog) -> str:
    payload = {
        "tool": "gangmam",
        "version": __version__,
        "mode": config.mode,
        "emulator": config.emulator,
        "monkey_seed": config.monkey_seed,
        "pass_threshold": config.pass_threshold,
        "catalog_size": len(catalog),
        "apks": [
            {
                "name": job.outcome.name,
                "hash": job.outcome.apk_hash,
                "status": job.outcome.status,
                "stage": job.outcome.stage,
                "error": job.outcome.error,
                "row": None
                if job.outcome.row is None
                else {
                    "before": job.outcome.row.before_lines,
                    "after": job.outcome.row.after_lines,
                    "diff": job.outcome.row.diff_lines,
                    "verdict": job.outcome.row.verdict,
                },
            }
            for job in jobs
        ],
    }
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


# --------------------------------------------------------------------------
# model training entry points (the 'train' subcommand)
# --------------------------------------------------------------------------

def train_synthetic(
    out_path: Path,
    seed: int = 7,
    dims: int = 64,
    n_mal: int = 500,
    n_ben: int = 500,
    gan_config: GanConfig | None = None,
    detector_epochs: int = 400,
    detector_lr: float = 0.5,
):
    """Train a model against the reference detector on a synthetic corpus."""
    corpus = synth_corpus(seed, dims, n_mal, n_ben)
    blackbox = train_logistic(corpus, detector_epochs, detector_lr)
    config = gan_config or GanConfig(seed=seed)
    model = init_gan(dims, config)
    X = corpus.matrix()
    y = corpus.label_array()
    model, report = train_matrices(model, X[y == 1.0], X[y == 0.0], blackbox)
    Path(out_path).write_bytes(model_save(model))
    return model, report


def train_from_csv(
    out_path: Path,
    malware_csv: Path,
    benign_csv: Path,
    gan_config: GanConfig | None = None,
    detector_epochs: int = 400,
    detector_lr: float = 0.5,
):
    """Train from two feature CSVs over the same catalog.

    The reference detector is fitted on the two corpora (labeled by file)
    and then acts as the black box for the generator.
    """
    catalog_mal, malware = csv_decode(Path(malware_csv).read_bytes())
    catalog_ben, benign = csv_decode(Path(benign_csv).read_bytes())
    if catalog_mal != catalog_ben:
        raise ConfigError("malware and benign CSVs use different catalogs")
    if not malware or not benign:
        raise ConfigError("both CSVs must contain at least one vector row")
    Xm = stack_bits(malware)
    Xb = stack_bits(benign)
    X = np.vstack([Xm, Xb])
    y = np.concatenate([np.ones(len(malware)), np.zeros(len(benign))])
    blackbox = LogisticDetector(detector_epochs, detector_lr).fit(X, y)
    config = gan_config or GanConfig()
    model = init_gan(len(catalog_mal), config)
    model, report = train_matrices(model, Xm, Xb, blackbox)
    Path(out_path).write_bytes(model_save(model))
    return model, report
