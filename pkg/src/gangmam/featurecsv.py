"""Bit-exact CSV wire format for feature vectors.

Layout (UTF-8, LF line endings, no BOM, no quoting):

    sha256,<feature name>,...,<feature name>\n
    <64-hex hash>,0,1,...,0\n

Feature names are the catalog's self-describing labels, so the catalog can be
reconstructed from the header alone.  Encoding is deterministic; decoding
accepts any column order and re-canonicalizes.
"""

from __future__ import annotations

import re
from typing import Sequence

from .errors import (
    CatalogMismatch,
    CsvParseError,
    DuplicateHashRow,
    NonBinaryCell,
    RowLengthMismatch,
)
from .features import FeatureCatalog, FeatureVector, build_catalog, definition_from_label

_HASH_CELL_RE = re.compile(r"^[0-9a-f]{64}$")


def csv_encode(catalog: FeatureCatalog, vectors: Sequence[FeatureVector]) -> bytes:
    """Serialize vectors over the catalog into the wire format."""
    lines = ["sha256" + "".join("," + name for name in catalog.names())]
    seen: set[str] = set()
    for row, vector in enumerate(vectors, start=2):
        if len(vector) != len(catalog):
            raise CatalogMismatch(
                f"vector {vector.apk_hash} has {len(vector)} bits, catalog has {len(catalog)}"
            )
        if vector.apk_hash in seen:
            raise DuplicateHashRow(f"hash {vector.apk_hash} repeats", line=row, column=1)
        seen.add(vector.apk_hash)
        lines.append(vector.apk_hash + "".join("," + str(b) for b in vector.bits))
    return ("\n".join(lines) + "\n").encode("utf-8")


def csv_decode(data: bytes) -> tuple[FeatureCatalog, list[FeatureVector]]:
    """Parse the wire format back into a catalog and its vectors.

    The reconstructed catalog is canonical; row bits are permuted to match it
    when the file's columns were not already in canonical order.
    """
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise CsvParseError(f"not valid UTF-8: {exc}", line=1, column=1) from None
    if not text:
        raise CsvParseError("empty input", line=1, column=1)
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()

    header = lines[0].split(",")
    if header[0] != "sha256":
        raise CsvParseError("header must start with 'sha256'", line=1, column=1)
    definitions = []
    for column, label in enumerate(header[1:], start=2):
        try:
            definition = definition_from_label(label)
        except ValueError as exc:
            raise CsvParseError(str(exc), line=1, column=column) from None
        definitions.append(definition)
    if len(set(definitions)) != len(definitions):
        raise CsvParseError("duplicate feature column", line=1, column=1)

    if definitions:
        catalog = build_catalog(definitions)
        order = [catalog.index_of(definition) for definition in definitions]
    else:
        catalog = FeatureCatalog(())
        order = []

    vectors: list[FeatureVector] = []
    seen: set[str] = set()
    for line_no, line in enumerate(lines[1:], start=2):
        cells = line.split(",")
        if len(cells) != len(header):
            raise RowLengthMismatch(
                f"row has {len(cells)} cells, header has {len(header)}",
                line=line_no,
                column=len(cells),
            )
        apk_hash = cells[0]
        if not _HASH_CELL_RE.match(apk_hash):
            raise CsvParseError(
                f"malformed sha256 hash {apk_hash!r}", line=line_no, column=1
            )
        if apk_hash in seen:
            raise DuplicateHashRow(f"hash {apk_hash} repeats", line=line_no, column=1)
        seen.add(apk_hash)
        bits = bytearray(len(catalog))
        for column, cell in enumerate(cells[1:], start=2):
            if cell == "0":
                value = 0
            elif cell == "1":
                value = 1
            else:
                raise NonBinaryCell(
                    f"cell must be 0 or 1, got {cell!r}", line=line_no, column=column
                )
            bits[order[column - 2]] = value
        vectors.append(FeatureVector(apk_hash, bytes(bits)))
    return catalog, vectors
