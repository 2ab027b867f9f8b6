"""Exception hierarchy for the gangmam package.

Every structured failure raised by this package derives from
:class:`GangMamError`, so callers can catch one base class at pipeline
boundaries while tests assert on precise subclasses.
"""

from __future__ import annotations


class GangMamError(Exception):
    """Base class of all structured errors raised by this package."""


# --------------------------------------------------------------------------
# feature model
# --------------------------------------------------------------------------

class EmptyDefinitionList(GangMamError):
    """A catalog was requested from zero feature definitions."""


class MalformedName(GangMamError):
    """Feature name violates the CSV-safe token rules."""


class UnknownFeature(GangMamError):
    """A feature definition is not part of the catalog in use."""


class BadHash(GangMamError):
    """APK hash is not 64 lowercase hex characters."""


class LengthMismatch(GangMamError):
    """Two bit vectors were combined but have different lengths."""


class HashMismatch(GangMamError):
    """Two values that must describe the same APK carry different hashes."""


class NotAdditive(GangMamError):
    """A supposedly additive change clears at least one bit."""


class CatalogMismatch(GangMamError):
    """Vector does not fit the catalog it is being serialized against."""


class CsvParseError(GangMamError):
    """Feature CSV violates the wire grammar.

    ``line`` and ``column`` are 1-based; ``column`` counts cells.
    """

    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column


class NonBinaryCell(CsvParseError):
    """A data cell holds something other than '0' or '1'."""


class RowLengthMismatch(CsvParseError):
    """A data row has a different cell count than the header."""


class DuplicateHashRow(CsvParseError):
    """The same APK hash appears on more than one row."""


# --------------------------------------------------------------------------
# manifest / decoded APK
# --------------------------------------------------------------------------

class XmlSyntaxError(GangMamError):
    """Manifest is not well-formed XML; carries a 1-based position."""

    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column


class MissingPackageAttribute(GangMamError):
    """Manifest root lacks the mandatory package attribute."""


class UnknownRootElement(GangMamError):
    """Document root is not a <manifest> element."""


class EmptyCorpus(GangMamError):
    """An operation that needs at least one input APK/vector got none."""


class ApkIoError(GangMamError):
    """Reading or writing a decoded APK directory failed."""


# --------------------------------------------------------------------------
# numerics (GAN + detector)
# --------------------------------------------------------------------------

class BadConfig(GangMamError):
    """GAN configuration violates its invariants."""


class BadParams(GangMamError):
    """Synthetic corpus parameters out of range."""


class ShapeMismatch(GangMamError):
    """Array dimensions do not line up with the model."""


class NonFiniteLoss(GangMamError):
    """Training diverged; ``report`` holds everything up to the failure."""

    def __init__(self, message: str, report=None):
        super().__init__(message)
        self.report = report


class EmptyInput(GangMamError):
    """A rate or statistic was requested over zero samples."""


class ModelFormatError(GangMamError):
    """Persisted model bytes are structurally invalid."""


class BadMagic(ModelFormatError):
    """File does not start with the expected magic tag."""


class VersionUnsupported(ModelFormatError):
    """File carries a format version this build cannot read."""


class TruncatedFile(ModelFormatError):
    """File ends before the declared payload is complete."""


# --------------------------------------------------------------------------
# external tools
# --------------------------------------------------------------------------

class ToolError(GangMamError):
    """Base class for external-tool failures."""


class ToolFailed(ToolError):
    """Tool exited nonzero (or could not be launched at all)."""

    def __init__(self, tool: str, exit_code: int, stderr_excerpt: str = ""):
        detail = f": {stderr_excerpt}" if stderr_excerpt else ""
        super().__init__(f"{tool} failed with exit code {exit_code}{detail}")
        self.tool = tool
        self.exit_code = exit_code
        self.stderr_excerpt = stderr_excerpt


class TranscriptMiss(ToolError):
    """Replay mode found no transcript entry for an invocation."""


class ToolTimeout(ToolError):
    """Tool ran past its configured timeout."""


class EmulatorNotFound(ToolError):
    """Requested emulator is absent from the device list."""


class InstallFailed(ToolError):
    """APK install step failed on the device."""


class KeystoreError(ToolError):
    """Keystore generation or use failed."""


# --------------------------------------------------------------------------
# CLI / pipeline
# --------------------------------------------------------------------------

class UsageError(GangMamError):
    """Command line cannot be parsed; maps to exit code 2."""


class UnknownFlag(UsageError):
    pass


class MissingValue(UsageError):
    pass


class ConflictingFlags(UsageError):
    pass


class NoInputs(GangMamError):
    """Input directory holds nothing the pipeline can process."""


class OutputDirUnwritable(GangMamError):
    """Output directory cannot be created or written."""


class ConfigError(GangMamError):
    """Pipeline configuration file is invalid."""
