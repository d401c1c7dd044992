"""Exception hierarchy.

``CascadeError`` subclasses are user/config/data problems (CLI exit 1);
``EnvironmentFailure`` subclasses are IO or network problems (CLI exit 2).
"""

from __future__ import annotations


class CascadeError(Exception):
    """Base class for every error raised by this package."""


class EnvironmentFailure(CascadeError):
    """IO or transport failure outside the caller's control."""


class IoFailure(EnvironmentFailure):
    pass


class BackendFailure(EnvironmentFailure):
    """A model backend call failed at the transport level."""


class UnknownTask(CascadeError):
    pass


class UnknownLanguage(CascadeError):
    pass


class MappingIncomplete(CascadeError):
    def __init__(self, missing):
        self.missing = sorted(missing)
        super().__init__(f"family mapping is missing tasks: {', '.join(self.missing)}")


class SchemaError(CascadeError):
    """A serialized record does not match its schema."""


class DuplicateSampleId(CascadeError):
    pass


class EmptyPool(CascadeError):
    pass


class BadFraction(CascadeError):
    pass


class DigestMismatch(CascadeError):
    pass


class MissingTemplate(CascadeError):
    pass


class ThresholdMissing(CascadeError):
    pass


class EmptyGrid(CascadeError):
    pass


class RepairFailed(CascadeError):
    pass


class MissingGold(CascadeError):
    pass


class OrphanPrediction(CascadeError):
    pass


class MalformedLine(CascadeError):
    def __init__(self, path, line_no: int, reason: str):
        self.path = str(path)
        self.line_no = line_no
        super().__init__(f"{path}:{line_no}: {reason}")


class EmptyArchive(CascadeError):
    pass


class MismatchedArchives(CascadeError):
    def __init__(self, only_left, only_right):
        self.only_left = sorted(only_left)
        self.only_right = sorted(only_right)
        diff = self.only_left + self.only_right
        super().__init__(f"archives cover different sample ids: {', '.join(diff[:20])}")


class MalformedCsv(CascadeError):
    pass


class OutOfRangeScore(CascadeError):
    def __init__(self, row: int, score: float):
        self.row = row
        self.score = score
        super().__init__(f"row {row}: score {score} outside [1, 10]")


class ProviderBlocked(EnvironmentFailure):
    pass


class UnparsableJudgment(CascadeError):
    pass


class ConfigError(CascadeError):
    pass
