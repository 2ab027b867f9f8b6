"""Parser and serializer for decoder-emitted (text form) Android manifests.

Only the subset the pipeline cares about is modeled: the package name,
``uses-permission`` entries, the four component kinds and their intent
filters.  Everything else is ignored on parse but retained on the underlying
element tree, so rewriting a manifest preserves elements this module does not
understand.
"""

from __future__ import annotations

import copy
import re
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field

from .errors import MissingPackageAttribute, UnknownRootElement, XmlSyntaxError
from .features import COMPONENT_KINDS, FeatureKind

ANDROID_NS = "http://schemas.android.com/apk/res/android"
_ANDROID_NAME = "{%s}name" % ANDROID_NS

_COMPONENT_TAGS = {
    "activity": FeatureKind.ACTIVITY,
    "service": FeatureKind.SERVICE,
    "receiver": FeatureKind.RECEIVER,
    "provider": FeatureKind.PROVIDER,
}
_TAG_FOR_KIND = {kind: tag for tag, kind in _COMPONENT_TAGS.items()}


def attr_name(element: ET.Element) -> str | None:
    """android:name of an element, tolerating a missing namespace prefix."""
    value = element.get(_ANDROID_NAME)
    if value is None:
        value = element.get("name")
    return value


def resolve_class_name(package: str, raw: str) -> str:
    """Expand manifest class-name shorthand to a fully qualified name."""
    if raw.startswith("."):
        return package + raw
    if "." not in raw:
        return package + "." + raw
    return raw


@dataclass(frozen=True)
class IntentFilter:
    actions: tuple[str, ...] = ()
    categories: tuple[str, ...] = ()


@dataclass(frozen=True)
class ManifestComponent:
    kind: FeatureKind
    name: str  # as written in the manifest; may be shorthand
    intent_filters: tuple[IntentFilter, ...] = ()

    def __post_init__(self):
        if self.kind not in COMPONENT_KINDS:
            raise ValueError(f"{self.kind} is not a manifest component kind")

    def resolved_name(self, package: str) -> str:
        return resolve_class_name(package, self.name)


@dataclass(frozen=True, eq=False)
class ManifestModel:
    """Extracted manifest view plus the element tree it came from.

    Equality is structural over the extracted fields only; the retained tree
    is an implementation detail for round-trip serialization.
    """

    package: str
    permissions: tuple[str, ...]
    components: tuple[ManifestComponent, ...]
    root: ET.Element = field(repr=False)

    def __eq__(self, other) -> bool:
        if not isinstance(other, ManifestModel):
            return NotImplemented
        return (
            self.package == other.package
            and self.permissions == other.permissions
            and self.components == other.components
        )

    def __hash__(self):
        return hash((self.package, self.permissions, self.components))

    def component_names(self, kind: FeatureKind) -> tuple[str, ...]:
        return tuple(
            c.resolved_name(self.package) for c in self.components if c.kind is kind
        )

    def filter_names(self, which: str) -> tuple[str, ...]:
        """All intent-filter action or category names, in document order."""
        names: list[str] = []
        for component in self.components:
            for intent_filter in component.intent_filters:
                names.extend(getattr(intent_filter, which))
        return tuple(names)

    def copy_tree(self) -> ET.Element:
        return copy.deepcopy(self.root)


def _parse_filters(component_el: ET.Element) -> tuple[IntentFilter, ...]:
    filters = []
    for filter_el in component_el:
        if filter_el.tag != "intent-filter":
            continue
        actions = []
        categories = []
        for child in filter_el:
            name = attr_name(child)
            if name is None:
                continue
            if child.tag == "action":
                actions.append(name)
            elif child.tag == "category":
                categories.append(name)
        filters.append(IntentFilter(tuple(actions), tuple(categories)))
    return tuple(filters)


_PACKAGE_SEGMENT = re.compile(r"^[A-Za-z_$][A-Za-z0-9_$]*$")


def model_from_root(root: ET.Element) -> ManifestModel:
    """Build the extracted view over an already-parsed manifest tree."""
    if root.tag != "manifest":
        raise UnknownRootElement(f"expected <manifest> root, got <{root.tag}>")
    package = root.get("package")
    if not package:
        raise MissingPackageAttribute("manifest has no package attribute")
    if not all(_PACKAGE_SEGMENT.match(part) for part in package.split(".")):
        raise MissingPackageAttribute(
            f"package {package!r} is not a dot-separated identifier"
        )

    permissions = [
        name
        for element in root
        if element.tag == "uses-permission" and (name := attr_name(element))
    ]
    components = []
    for application in root:
        if application.tag != "application":
            continue
        for element in application:
            kind = _COMPONENT_TAGS.get(element.tag)
            if kind is None:
                continue
            name = attr_name(element)
            if name is None:
                continue
            components.append(ManifestComponent(kind, name, _parse_filters(element)))
    return ManifestModel(
        package=package,
        permissions=tuple(permissions),
        components=tuple(components),
        root=root,
    )


def parse_decoded_manifest(xml_text: str | bytes) -> ManifestModel:
    """Parse manifest text into a model.

    Raises :class:`XmlSyntaxError` (with a 1-based position) on malformed
    XML, :class:`UnknownRootElement` / :class:`MissingPackageAttribute` on
    schema violations.  Unknown elements and attributes are ignored.
    """
    try:
        root = ET.fromstring(xml_text)
    except ET.ParseError as exc:
        line, column = getattr(exc, "position", (0, -1))
        raise XmlSyntaxError(str(exc), line=line, column=column + 1) from None
    return model_from_root(root)


def serialize_manifest(root: ET.Element) -> bytes:
    """Deterministic UTF-8 serialization with the android namespace prefix."""
    ET.register_namespace("android", ANDROID_NS)
    body = ET.tostring(root, encoding="unicode")
    return ('<?xml version="1.0" encoding="utf-8" standalone="no"?>\n' + body + "\n").encode(
        "utf-8"
    )


def component_tag(kind: FeatureKind) -> str:
    return _TAG_FOR_KIND[kind]
