import json
import shutil
from pathlib import Path

import numpy as np
import pytest

from _helpers import FIXTURE_APKS, FIXTURES, FakeAndroidTools, SpyLauncher, tree_hash
from gangmam.apk import (
    catalog_from_corpus,
    extract_features,
    load_decoded_apk,
    sha256_file,
    sha256_hex,
)
from gangmam.errors import ConfigError, EmulatorNotFound, NoInputs
from gangmam.featurecsv import csv_decode, csv_encode
from gangmam.features import FeatureVector, merge_additive
from gangmam.gan import GanConfig, model_load
from gangmam.pipeline import (
    PipelineConfig,
    clean_output,
    run_batch,
    train_from_csv,
    train_synthetic,
)


def fixture_decoded(name: str):
    return load_decoded_apk(
        FIXTURES / "apks" / name, sha256_file(FIXTURES / "apks" / f"{name}.apk")
    )


def stage_inputs(dest: Path, with_trees: bool) -> Path:
    dest.mkdir(parents=True, exist_ok=True)
    for name in FIXTURE_APKS:
        shutil.copy(FIXTURES / "apks" / f"{name}.apk", dest / f"{name}.apk")
        if with_trees:
            shutil.copytree(FIXTURES / "apks" / name, dest / name)
    return dest


def fixture_corpus_csvs(tmp_path: Path) -> tuple[Path, Path, int]:
    """Feature CSVs over the fixture corpus: real vectors plus synthetic benign."""
    apks = [fixture_decoded(name) for name in FIXTURE_APKS]
    catalog = catalog_from_corpus(apks)
    malware = [extract_features(apk, catalog) for apk in apks]
    rng = np.random.default_rng(29)
    benign = [
        FeatureVector.from_array(
            sha256_hex(f"benign:{i}".encode()), (rng.random(len(catalog)) < 0.5).astype(int)
        )
        for i in range(6)
    ]
    malware_csv = tmp_path / "malware.csv"
    benign_csv = tmp_path / "benign.csv"
    malware_csv.write_bytes(csv_encode(catalog, malware))
    benign_csv.write_bytes(csv_encode(catalog, benign))
    return malware_csv, benign_csv, len(catalog)


def small_gan_config() -> GanConfig:
    return GanConfig(
        noise_dim=4, gen_hidden=(8,), sub_hidden=(8,),
        learning_rate=0.05, epochs=5, batch_size=4, seed=3,
    )


def train_fixture_model(tmp_path: Path) -> Path:
    malware_csv, benign_csv, _ = fixture_corpus_csvs(tmp_path)
    model_path = tmp_path / "model.gmam"
    train_from_csv(model_path, malware_csv, benign_csv, small_gan_config(),
                   detector_epochs=100, detector_lr=0.3)
    return model_path


def make_config(input_dir: Path, output_dir: Path, mode: str, transcript: Path | None,
                model: Path | None) -> PipelineConfig:
    return PipelineConfig(
        input_dir=input_dir,
        output_dir=output_dir,
        mode=mode,
        transcript=transcript,
        emulator="Nexus_4a",
        gan_model=model,
    )


# ---- training entry points -------------------------------------------------

def test_train_synthetic_writes_loadable_model(tmp_path):
    out = tmp_path / "m.gmam"
    model, report = train_synthetic(
        out, seed=5, dims=12, n_mal=20, n_ben=20,
        gan_config=small_gan_config(), detector_epochs=80, detector_lr=0.3,
    )
    assert out.exists()
    loaded = model_load(out.read_bytes())
    assert loaded.feature_dim == 12
    assert 0.0 <= report.final_evasion_rate <= 1.0


def test_train_from_csv_checks_catalogs(tmp_path):
    malware_csv, _, _ = fixture_corpus_csvs(tmp_path)
    other = tmp_path / "other.csv"
    other.write_bytes(b"sha256,permission.X\n")
    with pytest.raises(ConfigError):
        train_from_csv(tmp_path / "m.gmam", malware_csv, other, small_gan_config())


# ---- batch behavior --------------------------------------------------------

def test_no_inputs(tmp_path):
    (tmp_path / "empty").mkdir()
    config = make_config(tmp_path / "empty", tmp_path / "out", "live", None, None)
    with pytest.raises(NoInputs):
        run_batch(config, launch=FakeAndroidTools())


def test_unknown_emulator_aborts_batch(tmp_path):
    stage_inputs(tmp_path / "input", with_trees=False)
    config = make_config(tmp_path / "input", tmp_path / "out", "live", None, None)
    config.emulator = "Ghost_Emu"
    with pytest.raises(EmulatorNotFound):
        run_batch(config, launch=FakeAndroidTools())


def test_full_mode_requires_model(tmp_path):
    stage_inputs(tmp_path / "input", with_trees=False)
    config = make_config(tmp_path / "input", tmp_path / "out", "live", None, None)
    with pytest.raises(ConfigError):
        run_batch(config, launch=FakeAndroidTools())


def test_model_catalog_width_mismatch(tmp_path):
    stage_inputs(tmp_path / "input", with_trees=False)
    model_path = tmp_path / "m.gmam"
    train_synthetic(model_path, seed=5, dims=4, n_mal=5, n_ben=5,
                    gan_config=small_gan_config(), detector_epochs=20)
    config = make_config(tmp_path / "input", tmp_path / "out", "live", None, model_path)
    with pytest.raises(ConfigError):
        run_batch(config, launch=FakeAndroidTools())


def test_full_run_with_fake_tools(tmp_path):
    input_dir = stage_inputs(tmp_path / "input", with_trees=False)
    model_path = train_fixture_model(tmp_path)
    out = tmp_path / "out"
    config = make_config(input_dir, out, "live", None, model_path)
    result = run_batch(config, launch=FakeAndroidTools())

    assert result.exit_code == 0
    assert len(result.outcomes) == 3
    assert all(outcome.status == "ok" for outcome in result.outcomes)
    assert len(result.rows) == 3
    assert all(row.verdict == "Pass" for row in result.rows)
    for artifact in (
        "features_original.csv", "features_modified.csv",
        "integrity_report.txt", "integrity_report.csv", "run_manifest.json",
    ):
        assert (out / artifact).exists()
    # modified vectors OR-dominate the originals
    catalog, originals = csv_decode((out / "features_original.csv").read_bytes())
    _, modified = csv_decode((out / "features_modified.csv").read_bytes())
    by_hash = {v.apk_hash: v for v in originals}
    for target in modified:
        original = by_hash[target.apk_hash]
        assert merge_additive(original, target) == target


def test_per_apk_failure_rows_do_not_abort(tmp_path):
    input_dir = stage_inputs(tmp_path / "input", with_trees=False)
    model_path = train_fixture_model(tmp_path)
    config = make_config(input_dir, tmp_path / "out", "live", None, model_path)
    result = run_batch(config, launch=FakeAndroidTools(fail_install_for=("bravo.apk",)))

    assert result.exit_code == 0
    outcomes = {outcome.name: outcome for outcome in result.outcomes}
    assert outcomes["bravo.apk"].status == "failed"
    assert outcomes["bravo.apk"].stage == "validate"
    assert outcomes["alpha.apk"].status == "ok"
    assert outcomes["charlie.apk"].status == "ok"
    assert len(result.rows) == 2
    # exactly one outcome per input APK
    assert sorted(outcomes) == ["alpha.apk", "bravo.apk", "charlie.apk"]


def test_nogang_with_unmatched_hashes(tmp_path):
    input_dir = stage_inputs(tmp_path / "input", with_trees=False)
    apks = [fixture_decoded(name) for name in FIXTURE_APKS]
    catalog = catalog_from_corpus(apks)
    stranger = FeatureVector(sha256_hex(b"not-an-input"), bytes(len(catalog)))
    csv_path = tmp_path / "vectors.csv"
    csv_path.write_bytes(csv_encode(catalog, [stranger]))

    config = make_config(input_dir, tmp_path / "out", "live", None, None)
    result = run_batch(config, nogang_csv=csv_path, launch=FakeAndroidTools())
    assert result.exit_code == 0
    assert all(outcome.status == "failed" for outcome in result.outcomes)
    assert all("no CSV entry" in outcome.error for outcome in result.outcomes)
    assert result.rows == []


def test_nogang_happy_path(tmp_path):
    input_dir = stage_inputs(tmp_path / "input", with_trees=False)
    apks = [fixture_decoded(name) for name in FIXTURE_APKS]
    catalog = catalog_from_corpus(apks)
    rng = np.random.default_rng(41)
    targets = []
    for apk in apks:
        original = extract_features(apk, catalog)
        extra = FeatureVector(
            original.apk_hash, bytes(int(b) for b in (rng.random(len(catalog)) < 0.25))
        )
        targets.append(merge_additive(original, extra))
    csv_path = tmp_path / "vectors.csv"
    csv_path.write_bytes(csv_encode(catalog, targets))

    out = tmp_path / "out"
    config = make_config(input_dir, out, "live", None, None)
    result = run_batch(config, nogang_csv=csv_path, launch=FakeAndroidTools())
    assert result.exit_code == 0
    assert all(outcome.status == "ok" for outcome in result.outcomes)
    _, modified = csv_decode((out / "features_modified.csv").read_bytes())
    assert sorted(v.apk_hash for v in modified) == sorted(v.apk_hash for v in targets)


# ---- record / replay -------------------------------------------------------

def test_record_then_replay_end_to_end(tmp_path):
    model_path = train_fixture_model(tmp_path)
    transcript = tmp_path / "transcript.jsonl"

    record_input = stage_inputs(tmp_path / "record-input", with_trees=False)
    record_config = make_config(record_input, tmp_path / "out-record", "record",
                                transcript, model_path)
    record_result = run_batch(record_config, launch=FakeAndroidTools())
    assert record_result.exit_code == 0 and len(record_result.rows) == 3
    assert transcript.exists()

    replay_input = stage_inputs(tmp_path / "replay-input", with_trees=True)

    spies = []
    outputs = []
    for run in range(2):
        spy = SpyLauncher()  # raises on any launch attempt
        config = make_config(replay_input, tmp_path / f"out-replay-{run}", "replay",
                             transcript, model_path)
        result = run_batch(config, launch=spy)
        assert result.exit_code == 0
        assert len(result.rows) == 3
        assert all(outcome.status == "ok" for outcome in result.outcomes)
        spies.append(spy)
        outputs.append(tmp_path / f"out-replay-{run}")

    assert all(spy.calls == [] for spy in spies)
    assert tree_hash(outputs[0]) == tree_hash(outputs[1])
    # record and replay agree on the integrity table
    assert (outputs[0] / "integrity_report.csv").read_bytes() == (
        (tmp_path / "out-record" / "integrity_report.csv").read_bytes()
    )


def test_replay_needs_decoded_fixture_trees(tmp_path):
    model_path = train_fixture_model(tmp_path)
    transcript = tmp_path / "transcript.jsonl"
    record_input = stage_inputs(tmp_path / "ri", with_trees=False)
    run_batch(make_config(record_input, tmp_path / "ro", "record", transcript, model_path),
              launch=FakeAndroidTools())

    bare_input = stage_inputs(tmp_path / "bare", with_trees=False)
    config = make_config(bare_input, tmp_path / "out", "replay", transcript, model_path)
    result = run_batch(config, launch=SpyLauncher())
    assert all(outcome.status == "failed" and outcome.stage == "decode"
               for outcome in result.outcomes)


# ---- outputs ---------------------------------------------------------------

def test_run_manifest_structure(tmp_path):
    input_dir = stage_inputs(tmp_path / "input", with_trees=False)
    model_path = train_fixture_model(tmp_path)
    out = tmp_path / "out"
    run_batch(make_config(input_dir, out, "live", None, model_path), launch=FakeAndroidTools())
    payload = json.loads((out / "run_manifest.json").read_text())
    assert payload["tool"] == "gangmam"
    assert payload["catalog_size"] > 0
    assert [entry["name"] for entry in payload["apks"]] == [
        "alpha.apk", "bravo.apk", "charlie.apk",
    ]
    assert all(entry["row"]["verdict"] == "Pass" for entry in payload["apks"])


def test_unwritable_output_dir(tmp_path):
    from gangmam.errors import OutputDirUnwritable

    stage_inputs(tmp_path / "input", with_trees=False)
    blocker = tmp_path / "not-a-dir"
    blocker.write_text("file where the output dir should go")
    config = make_config(tmp_path / "input", blocker / "out", "live", None, None)
    with pytest.raises(OutputDirUnwritable):
        run_batch(config, launch=FakeAndroidTools())


def test_clean_output_removes_only_contents(tmp_path):
    out = tmp_path / "out"
    (out / "nested").mkdir(parents=True)
    (out / "nested" / "a").write_text("x")
    neighbor = tmp_path / "neighbor.txt"
    neighbor.write_text("keep")
    clean_output(PipelineConfig(output_dir=out))
    assert out.exists() and list(out.iterdir()) == []
    assert neighbor.read_text() == "keep"
