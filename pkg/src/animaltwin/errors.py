"""Exception hierarchy.

Every error carries an ``exit_code`` used by the command line front-end:
1 for validation / user errors, 2 for I/O errors, 3 for internal invariant
violations.
"""

from __future__ import annotations


class AnimalTwinError(Exception):
    exit_code = 1

    def to_dict(self) -> dict:
        return {"error": type(self).__name__, "message": str(self), "exit_code": self.exit_code}


class UserError(AnimalTwinError):
    """Bad input data or bad parameters."""

    exit_code = 1


class IOFailure(AnimalTwinError):
    exit_code = 2


class InvariantViolation(AnimalTwinError):
    exit_code = 3


# timeseries
class EmptyChannel(UserError):
    pass


class NonmonotonicTimestamps(UserError):
    pass


class IncompatibleWindow(UserError):
    pass


class NoTemporalOverlap(UserError):
    pass


class UnknownMasterChannel(UserError):
    pass


class InvalidTable(UserError):
    """Ragged columns, duplicate names or unordered timestamps."""


# sensors
class MismatchedAxes(UserError):
    pass


class WindowTooShort(UserError):
    pass


class NonpositiveSetup(UserError):
    pass


# ingest
class FileNotFound(IOFailure, FileNotFoundError):
    pass


class MissingColumn(UserError):
    pass


class EmptyFile(UserError):
    pass


class DuplicateChannelName(UserError):
    pass


class InvalidSpec(UserError):
    """A JSON parameter document does not satisfy its schema."""


# quality
class UnknownColumn(UserError):
    pass


class MissingDataFound(UserError):
    pass


class AllMissingColumn(UserError):
    pass


# split
class TooFewRows(UserError):
    pass


class MissingTargetColumn(UserError):
    pass


# model
class InsufficientRows(UserError):
    pass


class AllRowsIncomplete(UserError):
    pass


class DegenerateData(UserError):
    pass


class MissingFeatureColumn(UserError):
    pass


class ModelTableSchemaMismatch(UserError):
    pass


class LengthMismatch(UserError):
    pass


class NoComparablePairs(UserError):
    pass


class UnsupportedSchemaVersion(UserError):
    pass


class CorruptArtifact(IOFailure):
    pass


class NotFittedError(UserError, AttributeError):
    pass


# report
class EmptyMetrics(UserError):
    pass


# runner
class UnparseableManifest(UserError):
    pass


class ValidationFailed(UserError):
    def __init__(self, violations):
        self.violations = list(violations)
        lines = "; ".join(f"{v.code}: {v.message}" for v in self.violations)
        super().__init__(f"manifest has {len(self.violations)} violation(s): {lines}")


class StepFailed(AnimalTwinError):
    def __init__(self, step: str, cause: BaseException):
        self.step = step
        self.cause = cause
        self.exit_code = getattr(cause, "exit_code", 3)
        super().__init__(f"step {step!r} failed: {type(cause).__name__}: {cause}")


class DigestMismatch(InvariantViolation):
    """An intermediate file changed between the step that wrote it and the step reading it."""


class ComponentProcessFailed(AnimalTwinError):
    """A component run as a subprocess exited non-zero."""

    def __init__(self, message: str, exit_code: int, error: dict | None = None):
        self.exit_code = exit_code
        self.error = error or {}
        super().__init__(message)


class WorkdirNotWritable(IOFailure):
    pass


# synth
class DurationTooShort(UserError):
    pass
