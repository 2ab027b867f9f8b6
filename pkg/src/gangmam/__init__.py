"""gangmam: adversarial feature vectors for Android packages, end to end.

The package covers the whole desk-scale pipeline: feature extraction from
decoded APKs, a from-scratch GAN that produces strictly additive evasive
vectors, a modification engine that realizes those vectors inside the
package, record/replay clients for the external tooling, and execution-log
diffing to check that modified apps still behave like the originals.
"""

__version__ = "1.0.0"

from .apk import (
    DecodedApk,
    catalog_from_corpus,
    extract_features,
    load_decoded_apk,
    sha256_hex,
)
from .detector import Label, LabeledCorpus, LogisticDetector, evasion_rate, synth_corpus, train_logistic
from .errors import GangMamError
from .featurecsv import csv_decode, csv_encode
from .features import (
    FeatureCatalog,
    FeatureDefinition,
    FeatureKind,
    FeatureVector,
    build_catalog,
    diff_added,
    encode_vector,
    merge_additive,
)
from .gan import (
    EvasionGan,
    GanConfig,
    GanModel,
    TrainingReport,
    init_gan,
    model_load,
    model_save,
    perturb,
    train_gan,
)
from .integrity import ExecutionLog, IntegrityRow, diff_count, integrity_report, normalize_log
from .mam import ModificationPlan, SmaliStub, apply_plan, build_plan, emit_smali_stubs
from .manifest import ManifestModel, parse_decoded_manifest
from .pipeline import PipelineConfig, load_config, run_batch

__all__ = [
    "DecodedApk",
    "EvasionGan",
    "ExecutionLog",
    "FeatureCatalog",
    "FeatureDefinition",
    "FeatureKind",
    "FeatureVector",
    "GanConfig",
    "GanModel",
    "GangMamError",
    "IntegrityRow",
    "Label",
    "LabeledCorpus",
    "LogisticDetector",
    "ManifestModel",
    "ModificationPlan",
    "PipelineConfig",
    "SmaliStub",
    "TrainingReport",
    "apply_plan",
    "build_catalog",
    "build_plan",
    "catalog_from_corpus",
    "csv_decode",
    "csv_encode",
    "diff_added",
    "diff_count",
    "emit_smali_stubs",
    "encode_vector",
    "evasion_rate",
    "extract_features",
    "init_gan",
    "integrity_report",
    "load_config",
    "load_decoded_apk",
    "merge_additive",
    "model_load",
    "model_save",
    "normalize_log",
    "parse_decoded_manifest",
    "perturb",
    "run_batch",
    "sha256_hex",
    "synth_corpus",
    "train_gan",
    "train_logistic",
]
