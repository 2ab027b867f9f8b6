"""The modification engine: turn a vector diff into concrete APK edits.

Additions only.  Permissions become ``uses-permission`` entries; components
become manifest entries backed by inert smali stubs; injected intent actions
and categories ride on one generated carrier receiver so no existing
component's launch behavior is touched.  Manifest edits preserve original
element order and append new elements at the end of their parent.
"""

from __future__ import annotations

import xml.etree.ElementTree as ET
from dataclasses import dataclass
from pathlib import Path

from .apk import (
    DecodedApk,
    load_decoded_apk,
    manifest_membership,
    manifest_name_for,
)
from .errors import ApkIoError, HashMismatch, NotAdditive
from .features import (
    COMPONENT_KINDS,
    FeatureCatalog,
    FeatureDefinition,
    FeatureKind,
    FeatureVector,
    diff_added,
)
from .manifest import (
    ANDROID_NS,
    ManifestModel,
    component_tag,
    model_from_root,
    resolve_class_name,
    serialize_manifest,
)

_ANDROID_NAME = "{%s}name" % ANDROID_NS
_ANDROID_EXPORTED = "{%s}exported" % ANDROID_NS
_ANDROID_AUTHORITIES = "{%s}authorities" % ANDROID_NS

DEFAULT_STUB_PACKAGE = "gangmam.injected"
CARRIER_RECEIVER_CLASS = "CarrierReceiver"

_SUPERCLASS = {
    FeatureKind.ACTIVITY: "Landroid/app/Activity;",
    FeatureKind.SERVICE: "Landroid/app/Service;",
    FeatureKind.RECEIVER: "Landroid/content/BroadcastReceiver;",
    FeatureKind.PROVIDER: "Landroid/content/ContentProvider;",
}

# Abstract methods that must be overridden for the class to verify; each
# override returns the neutral value for its type (null, false, or 0).
_REQUIRED_OVERRIDES = {
    FeatureKind.ACTIVITY: "",
    FeatureKind.SERVICE: """
# virtual methods
.method public onBind(Landroid/content/Intent;)Landroid/os/IBinder;
    .locals 1

    const/4 v0, 0x0

    return-object v0
.end method
""",
    FeatureKind.RECEIVER: """
# virtual methods
.method public onReceive(Landroid/content/Context;Landroid/content/Intent;)V
    .locals 0

    return-void
.end method
""",
    FeatureKind.PROVIDER: """
# virtual methods
.method public delete(Landroid/net/Uri;Ljava/lang/String;[Ljava/lang/String;)I
    .locals 1

    const/4 v0, 0x0

    return v0
.end method

.method public getType(Landroid/net/Uri;)Ljava/lang/String;
    .locals 1

    const/4 v0, 0x0

    return-object v0
.end method

.method public insert(Landroid/net/Uri;Landroid/content/ContentValues;)Landroid/net/Uri;
    .locals 1

    const/4 v0, 0x0

    return-object v0
.end method

.method public onCreate()Z
    .locals 1

    const/4 v0, 0x0

    return v0
.end method

.method public query(Landroid/net/Uri;[Ljava/lang/String;Ljava/lang/String;[Ljava/lang/String;Ljava/lang/String;)Landroid/database/Cursor;
    .locals 1

    const/4 v0, 0x0

    return-object v0
.end method

.method public update(Landroid/net/Uri;Landroid/content/ContentValues;Ljava/lang/String;[Ljava/lang/String;)I
    .locals 1

    const/4 v0, 0x0

    return v0
.end method
""",
}


@dataclass(frozen=True)
class ModificationPlan:
    """Per-APK injection list: strictly additive, in catalog order."""

    apk_hash: str
    additions: tuple[FeatureDefinition, ...]
    stub_package: str = DEFAULT_STUB_PACKAGE

    def __post_init__(self):
        ordered = sorted(set(self.additions), key=FeatureDefinition.sort_key)
        if list(self.additions) != ordered:
            raise NotAdditive("plan additions must be unique and in catalog order")
        if not self.stub_package or any(
            not part.isidentifier() for part in self.stub_package.split(".")
        ):
            raise ValueError(f"invalid stub package {self.stub_package!r}")

    def component_additions(self) -> tuple[FeatureDefinition, ...]:
        return tuple(d for d in self.additions if d.kind in COMPONENT_KINDS)

    def filter_additions(self) -> tuple[FeatureDefinition, ...]:
        return tuple(
            d
            for d in self.additions
            if d.kind in (FeatureKind.INTENT_ACTION, FeatureKind.INTENT_CATEGORY)
        )

    def class_for(self, definition: FeatureDefinition) -> str:
        """Concrete class injected for a component feature.

        Fully qualified feature names are used as-is; bare names resolve
        under the stub package.
        """
        suffix = definition.suffix
        return suffix if "." in suffix else f"{self.stub_package}.{suffix}"

    @property
    def carrier_class(self) -> str:
        return f"{self.stub_package}.{CARRIER_RECEIVER_CLASS}"


def build_plan(
    original: FeatureVector,
    target: FeatureVector,
    catalog: FeatureCatalog,
    stub_package: str = DEFAULT_STUB_PACKAGE,
) -> ModificationPlan:
    """Plan the additions that take ``original`` to ``target``."""
    if original.apk_hash != target.apk_hash:
        raise HashMismatch(f"{original.apk_hash} vs {target.apk_hash}")
    additions = diff_added(original, target, catalog)
    return ModificationPlan(original.apk_hash, tuple(additions), stub_package)


@dataclass(frozen=True)
class SmaliStub:
    """One generated smali file, relative to a smali source root."""

    relative_path: str
    contents: str
    component_kind: FeatureKind

    def __post_init__(self):
        descriptor = "L" + self.relative_path[:-len(".smali")] + ";"
        if f".class public {descriptor}\n" not in self.contents:
            raise ValueError(f"stub contents do not declare {descriptor}")
        if f".super {_SUPERCLASS[self.component_kind]}\n" not in self.contents:
            raise ValueError(f"stub superclass does not match {self.component_kind}")


def _render_stub(class_name: str, kind: FeatureKind) -> SmaliStub:
    descriptor = "L" + class_name.replace(".", "/") + ";"
    superclass = _SUPERCLASS[kind]
    contents = f""".class public {descriptor}
.super {superclass}

# direct methods
.method public constructor <init>()V
    .locals 0

    invoke-direct {{p0}}, {superclass}-><init>()V

    return-void
.end method
{_REQUIRED_OVERRIDES[kind]}"""
    return SmaliStub(
        relative_path=class_name.replace(".", "/") + ".smali",
        contents=contents,
        component_kind=kind,
    )


def emit_smali_stubs(plan: ModificationPlan) -> list[SmaliStub]:
    """Inert stub classes for every injected component.

    Permissions, actions and categories need no code of their own, except
    that injected actions/categories share the single carrier receiver.
    """
    stubs = [
        _render_stub(plan.class_for(definition), definition.kind)
        for definition in plan.component_additions()
    ]
    if plan.filter_additions():
        stubs.append(_render_stub(plan.carrier_class, FeatureKind.RECEIVER))
    return stubs


def _application_element(root: ET.Element) -> ET.Element:
    for child in root:
        if child.tag == "application":
            return child
    return ET.SubElement(root, "application")


def _find_component(root: ET.Element, package: str, tag: str, class_name: str):
    for application in root:
        if application.tag != "application":
            continue
        for element in application:
            if element.tag != tag:
                continue
            raw = element.get(_ANDROID_NAME) or element.get("name")
            if raw is not None and resolve_class_name(package, raw) == class_name:
                return element
    return None


def apply_manifest_edits(manifest: ManifestModel, plan: ModificationPlan) -> ManifestModel:
    """Pure manifest transformation realizing the plan's additions.

    Idempotent: features the manifest already satisfies are skipped, so
    applying the same plan twice changes nothing the second time.
    """
    root = manifest.copy_tree()
    present = manifest_membership(manifest)

    for definition in plan.additions:
        if present(definition):
            continue
        if definition.kind is FeatureKind.PERMISSION:
            ET.SubElement(
                root, "uses-permission", {_ANDROID_NAME: manifest_name_for(definition)}
            )
        elif definition.kind in COMPONENT_KINDS:
            attrs = {
                _ANDROID_NAME: plan.class_for(definition),
                _ANDROID_EXPORTED: "false",
            }
            if definition.kind is FeatureKind.PROVIDER:
                attrs[_ANDROID_AUTHORITIES] = plan.class_for(definition)
            ET.SubElement(_application_element(root), component_tag(definition.kind), attrs)
        else:
            carrier = _find_component(root, manifest.package, "receiver", plan.carrier_class)
            if carrier is None:
                carrier = ET.SubElement(
                    _application_element(root),
                    "receiver",
                    {_ANDROID_NAME: plan.carrier_class, _ANDROID_EXPORTED: "false"},
                )
            intent_filter = next(
                (el for el in carrier if el.tag == "intent-filter"), None
            )
            if intent_filter is None:
                intent_filter = ET.SubElement(carrier, "intent-filter")
            tag = "action" if definition.kind is FeatureKind.INTENT_ACTION else "category"
            ET.SubElement(intent_filter, tag, {_ANDROID_NAME: manifest_name_for(definition)})

    return model_from_root(root)


def apply_plan(apk: DecodedApk, plan: ModificationPlan) -> DecodedApk:
    """Realize the plan inside the decoded directory.

    The manifest is the only pre-existing file ever rewritten, and only when
    the edit actually added something.  Stub files are written under the
    first smali root (created if absent) and never overwrite existing files.
    """
    if apk.source_apk_hash != plan.apk_hash:
        raise HashMismatch(
            f"plan is for {plan.apk_hash}, APK is {apk.source_apk_hash}"
        )
    edited = apply_manifest_edits(apk.manifest, plan)
    try:
        if edited != apk.manifest:
            apk.manifest_path.write_bytes(serialize_manifest(edited.root))
        stubs = emit_smali_stubs(plan)
        if stubs:
            smali_root = apk.smali_roots[0] if apk.smali_roots else apk.root_path / "smali"
            for stub in stubs:
                path = Path(smali_root) / stub.relative_path
                if path.exists():
                    continue
                path.parent.mkdir(parents=True, exist_ok=True)
                path.write_text(stub.contents, encoding="utf-8")
    except OSError as exc:
        raise ApkIoError(f"failed to write modifications under {apk.root_path}: {exc}") from exc
    return load_decoded_apk(apk.root_path, apk.source_apk_hash)
