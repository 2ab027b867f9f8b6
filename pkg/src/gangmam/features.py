"""Binary static-feature model shared by the vector generator and the modifier.

A :class:`FeatureCatalog` fixes the column space; a :class:`FeatureVector` is
one row of the interchange CSV: the APK's SHA256 plus one presence bit per
catalog entry.  All values here are immutable and safe to share between
pipeline workers.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import (
    BadHash,
    EmptyDefinitionList,
    HashMismatch,
    LengthMismatch,
    MalformedName,
    NotAdditive,
    UnknownFeature,
)

_HASH_RE = re.compile(r"^[0-9a-f]{64}$")


class FeatureKind(Enum):
    """The seven static feature families, in canonical sort order.

    The enum value doubles as the name tag used in CSV column labels
    (``permission.INTERNET``, ``service.com.app.Worker``, ...).
    """

    PERMISSION = "permission"
    ACTIVITY = "activity"
    SERVICE = "service"
    RECEIVER = "receiver"
    PROVIDER = "provider"
    INTENT_ACTION = "action"
    INTENT_CATEGORY = "category"


_KIND_ORDER = {kind: position for position, kind in enumerate(FeatureKind)}

#: Kinds that correspond to manifest components (and to smali stubs).
COMPONENT_KINDS = (
    FeatureKind.ACTIVITY,
    FeatureKind.SERVICE,
    FeatureKind.RECEIVER,
    FeatureKind.PROVIDER,
)


@dataclass(frozen=True)
class FeatureDefinition:
    """A single typed feature.

    Names are free tokens; anything CSV-hostile (comma, newline, surrounding
    whitespace) is rejected.  Names are normalized to always start with the
    kind's tag, so ``(SERVICE, "PluginPitService")`` and
    ``(SERVICE, "service.PluginPitService")`` denote the same feature and the
    CSV header remains self-describing.
    """

    kind: FeatureKind
    name: str

    def __post_init__(self):
        name = self.name
        if not isinstance(name, str) or not name:
            raise MalformedName("feature name must be a non-empty string")
        if name != name.strip():
            raise MalformedName(f"feature name has surrounding whitespace: {name!r}")
        if any(ch in name for ch in ",\n\r"):
            raise MalformedName(f"feature name contains CSV-unsafe characters: {name!r}")
        tag = self.kind.value + "."
        if not name.startswith(tag):
            name = tag + name
            object.__setattr__(self, "name", name)
        if len(name) <= len(tag):
            raise MalformedName(f"feature name is empty after its kind tag: {name!r}")

    @property
    def suffix(self) -> str:
        """Name with the kind tag stripped."""
        return self.name[len(self.kind.value) + 1:]

    def sort_key(self) -> tuple[int, str]:
        return (_KIND_ORDER[self.kind], self.name)


def definition_from_label(label: str) -> FeatureDefinition:
    """Parse a CSV column label back into a definition.

    Raises ValueError when the label's leading segment is not a kind tag.
    """
    head, _, rest = label.partition(".")
    for kind in FeatureKind:
        if head == kind.value:
            if not rest:
                raise ValueError(f"column label {label!r} has no name after its kind tag")
            return FeatureDefinition(kind, label)
    raise ValueError(f"column label {label!r} does not start with a known kind tag")


class FeatureCatalog:
    """Immutable ordered registry of feature definitions.

    Entries are kept in canonical order: kind declaration order first, then
    lexicographic name.  ``index_of`` is the exact inverse of ``entries``.
    """

    __slots__ = ("entries", "_index")

    def __init__(self, entries: Sequence[FeatureDefinition]):
        entries = tuple(entries)
        if list(entries) != sorted(entries, key=FeatureDefinition.sort_key):
            raise ValueError("catalog entries must be in canonical order")
        index = {definition: position for position, definition in enumerate(entries)}
        if len(index) != len(entries):
            raise ValueError("catalog entries must be unique")
        self.entries = entries
        self._index = index

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self) -> Iterator[FeatureDefinition]:
        return iter(self.entries)

    def __contains__(self, definition: FeatureDefinition) -> bool:
        return definition in self._index

    def __eq__(self, other) -> bool:
        if not isinstance(other, FeatureCatalog):
            return NotImplemented
        return self.entries == other.entries

    def __hash__(self):
        return hash(self.entries)

    def __repr__(self) -> str:
        return f"FeatureCatalog({len(self.entries)} entries)"

    def index_of(self, definition: FeatureDefinition) -> int:
        try:
            return self._index[definition]
        except KeyError:
            raise UnknownFeature(f"{definition.name} is not in the catalog") from None

    def names(self) -> tuple[str, ...]:
        return tuple(definition.name for definition in self.entries)


def build_catalog(definitions: Iterable[FeatureDefinition]) -> FeatureCatalog:
    """Canonicalize a list of definitions into a catalog.

    Duplicates collapse; the result is independent of input order.
    """
    unique = set(definitions)
    if not unique:
        raise EmptyDefinitionList("cannot build a catalog from zero definitions")
    return FeatureCatalog(sorted(unique, key=FeatureDefinition.sort_key))


def _check_hash(apk_hash: str) -> str:
    if not isinstance(apk_hash, str) or not _HASH_RE.match(apk_hash):
        raise BadHash(f"not a 64-char lowercase hex SHA256: {apk_hash!r}")
    return apk_hash


@dataclass(frozen=True)
class FeatureVector:
    """A SHA256-keyed bitset over some catalog.

    ``bits`` is one byte per feature, each 0 or 1, in catalog order.  The
    vector does not carry its catalog; callers pair them explicitly.
    """

    apk_hash: str
    bits: bytes

    def __post_init__(self):
        _check_hash(self.apk_hash)
        if not isinstance(self.bits, bytes):
            raise TypeError("bits must be bytes")
        if any(b not in (0, 1) for b in self.bits):
            raise ValueError("bits must contain only 0 and 1")

    def __len__(self) -> int:
        return len(self.bits)

    @property
    def popcount(self) -> int:
        return sum(self.bits)

    def to_array(self) -> np.ndarray:
        """Bits as a float64 row, ready for the numeric models."""
        return np.frombuffer(self.bits, dtype=np.uint8).astype(np.float64)

    @classmethod
    def from_array(cls, apk_hash: str, values: np.ndarray) -> "FeatureVector":
        arr = np.asarray(values)
        if arr.ndim != 1:
            raise ValueError("expected a 1-D bit array")
        return cls(apk_hash, bytes(int(v) for v in (arr != 0)))


def stack_bits(vectors: Sequence[FeatureVector]) -> np.ndarray:
    """Stack vectors into an (n, dims) float64 matrix (rows in input order)."""
    if not vectors:
        return np.zeros((0, 0))
    lengths = {len(v) for v in vectors}
    if len(lengths) != 1:
        raise LengthMismatch(f"vectors have mixed lengths: {sorted(lengths)}")
    return np.stack([v.to_array() for v in vectors])


def encode_vector(
    present: Iterable[FeatureDefinition],
    apk_hash: str,
    catalog: FeatureCatalog,
) -> FeatureVector:
    """Build the bitset for the given present-feature set.

    Every member of ``present`` must exist in the catalog.
    """
    bits = bytearray(len(catalog))
    for definition in present:
        bits[catalog.index_of(definition)] = 1
    return FeatureVector(_check_hash(apk_hash), bytes(bits))


def merge_additive(base: FeatureVector, addition: FeatureVector) -> FeatureVector:
    """Bitwise OR of two vectors for the same APK; never clears a bit."""
    if len(base) != len(addition):
        raise LengthMismatch(f"{len(base)} vs {len(addition)} bits")
    if base.apk_hash != addition.apk_hash:
        raise HashMismatch(f"{base.apk_hash} vs {addition.apk_hash}")
    merged = bytes(a | b for a, b in zip(base.bits, addition.bits))
    return FeatureVector(base.apk_hash, merged)


def diff_added(
    original: FeatureVector,
    modified: FeatureVector,
    catalog: FeatureCatalog,
) -> list[FeatureDefinition]:
    """Definitions set in ``modified`` but not in ``original``, in catalog order.

    Any 1 -> 0 transition means the modified vector is not an additive
    successor of the original and is rejected.
    """
    if len(original) != len(modified):
        raise LengthMismatch(f"{len(original)} vs {len(modified)} bits")
    if len(original) != len(catalog):
        raise LengthMismatch(
            f"vectors have {len(original)} bits but catalog has {len(catalog)} entries"
        )
    dropped = [i for i, (o, m) in enumerate(zip(original.bits, modified.bits)) if o and not m]
    if dropped:
        names = ", ".join(catalog.entries[i].name for i in dropped[:5])
        raise NotAdditive(f"modified vector clears {len(dropped)} bit(s): {names}")
    return [
        catalog.entries[i]
        for i, (o, m) in enumerate(zip(original.bits, modified.bits))
        if m and not o
    ]
