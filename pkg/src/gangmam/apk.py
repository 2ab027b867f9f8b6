"""Decoded-APK ingestion: hashing, manifest features, corpus catalogs.

A decoded APK is the directory a decoder leaves behind: a text
``AndroidManifest.xml`` at the root plus zero or more ``smali*/`` source
roots.  Feature extraction is a pure function of (manifest text, catalog).
"""

from __future__ import annotations

import hashlib
import warnings
from dataclasses import dataclass
from pathlib import Path

from .errors import ApkIoError, EmptyCorpus
from .features import (
    COMPONENT_KINDS,
    FeatureCatalog,
    FeatureDefinition,
    FeatureKind,
    FeatureVector,
    build_catalog,
    encode_vector,
)
from .manifest import ManifestModel, parse_decoded_manifest

# Framework prefixes stripped when turning manifest names into feature names.
# Anything else is kept in full so namespaced custom names stay unique.
_STRIP_PREFIX = {
    FeatureKind.PERMISSION: "android.permission.",
    FeatureKind.INTENT_ACTION: "android.intent.action.",
    FeatureKind.INTENT_CATEGORY: "android.intent.category.",
}


class EmptyCatalogWarning(UserWarning):
    """A corpus sweep observed no features at all."""


def sha256_hex(data: bytes) -> str:
    """Lowercase hex SHA-256 of a byte sequence."""
    return hashlib.sha256(data).hexdigest()


def sha256_file(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def name_feature(kind: FeatureKind, raw_name: str) -> FeatureDefinition:
    """Map a manifest-level name to its catalog feature definition."""
    prefix = _STRIP_PREFIX.get(kind)
    if prefix and raw_name.startswith(prefix):
        raw_name = raw_name[len(prefix):]
    return FeatureDefinition(kind, raw_name)


def manifest_name_for(definition: FeatureDefinition) -> str:
    """Inverse of :func:`name_feature` for non-component features.

    A dotless suffix is assumed to be a framework name and gets the standard
    prefix back; anything with a dot is already a full name.
    """
    prefix = _STRIP_PREFIX.get(definition.kind)
    if prefix is None:
        raise ValueError(f"{definition.kind} has no manifest name mapping")
    suffix = definition.suffix
    return suffix if "." in suffix else prefix + suffix


def manifest_features(manifest: ManifestModel) -> set[FeatureDefinition]:
    """Every feature a manifest declares, as exact definitions.

    Components contribute their fully qualified class names; actions and
    categories are collected across all intent filters.
    """
    found: set[FeatureDefinition] = set()
    for permission in manifest.permissions:
        found.add(name_feature(FeatureKind.PERMISSION, permission))
    for kind in COMPONENT_KINDS:
        for class_name in manifest.component_names(kind):
            found.add(FeatureDefinition(kind, class_name))
    for action in manifest.filter_names("actions"):
        found.add(name_feature(FeatureKind.INTENT_ACTION, action))
    for category in manifest.filter_names("categories"):
        found.add(name_feature(FeatureKind.INTENT_CATEGORY, category))
    return found


@dataclass(frozen=True)
class DecodedApk:
    """A decoder output directory plus the hash of the APK it came from."""

    root_path: Path
    manifest: ManifestModel
    smali_roots: tuple[Path, ...]
    source_apk_hash: str

    @property
    def manifest_path(self) -> Path:
        return self.root_path / "AndroidManifest.xml"


def load_decoded_apk(root_path: Path, source_apk_hash: str) -> DecodedApk:
    """Parse a decoded directory into a :class:`DecodedApk`.

    ``smali_roots`` are the ``smali*`` subdirectories in sorted order; the
    list may be empty for manifest-only fixtures.
    """
    root_path = Path(root_path)
    manifest_file = root_path / "AndroidManifest.xml"
    if not manifest_file.is_file():
        raise ApkIoError(f"no AndroidManifest.xml under {root_path}")
    manifest = parse_decoded_manifest(manifest_file.read_bytes())
    smali_roots = tuple(
        sorted(p for p in root_path.glob("smali*") if p.is_dir())
    )
    return DecodedApk(
        root_path=root_path,
        manifest=manifest,
        smali_roots=smali_roots,
        source_apk_hash=source_apk_hash,
    )


def manifest_membership(manifest: ManifestModel):
    """Predicate telling whether a manifest satisfies a feature definition.

    Exact definitions match directly.  Component definitions written as a
    bare class name (no package) match any component of that kind whose
    simple name agrees, so curated catalogs can name classes without pinning
    a package.
    """
    exact = manifest_features(manifest)
    simple_names = {
        (kind, class_name.rsplit(".", 1)[-1])
        for kind in COMPONENT_KINDS
        for class_name in manifest.component_names(kind)
    }

    def present(definition: FeatureDefinition) -> bool:
        if definition in exact:
            return True
        if definition.kind in COMPONENT_KINDS and "." not in definition.suffix:
            return (definition.kind, definition.suffix) in simple_names
        return False

    return present


def _catalog_membership(
    manifest: ManifestModel, catalog: FeatureCatalog
) -> set[FeatureDefinition]:
    present = manifest_membership(manifest)
    return {definition for definition in catalog if present(definition)}


def extract_features(apk: DecodedApk, catalog: FeatureCatalog) -> FeatureVector:
    """Encode which catalog features the APK's manifest declares.

    Features outside the catalog are skipped: the catalog defines the
    universe.
    """
    present = _catalog_membership(apk.manifest, catalog)
    return encode_vector(present, apk.source_apk_hash, catalog)


def catalog_from_corpus(apks: list[DecodedApk]) -> FeatureCatalog:
    """Canonical union of every feature observed across a corpus.

    An all-empty corpus yields an empty catalog and an
    :class:`EmptyCatalogWarning` instead of an error.
    """
    if not apks:
        raise EmptyCorpus("corpus must contain at least one decoded APK")
    union: set[FeatureDefinition] = set()
    for apk in apks:
        union |= manifest_features(apk.manifest)
    if not union:
        warnings.warn(
            "corpus manifests declare no features; catalog is empty",
            EmptyCatalogWarning,
            stacklevel=2,
        )
        return FeatureCatalog(())
    return build_catalog(union)
