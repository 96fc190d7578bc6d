"""Exception hierarchy. Each class maps to a distinct CLI exit code."""

from __future__ import annotations


class OrganFusionError(Exception):
    exit_code = 1


class InputFileError(OrganFusionError):
    """An input path is missing or unreadable."""

    exit_code = 3


class ParseError(OrganFusionError):
    """A file is not well-formed in its documented format."""

    exit_code = 4

    def __init__(self, message: str, source: str | None = None, record: int | str | None = None):
        self.source = source
        self.record = record
        super().__init__(_locate(message, source, record))


class ValidationError(OrganFusionError):
    """A record parsed but violates a data invariant."""

    exit_code = 5

    def __init__(self, message: str, source: str | None = None, record: int | str | None = None):
        self.source = source
        self.record = record
        super().__init__(_locate(message, source, record))


class ConfigError(OrganFusionError):
    """A configuration is infeasible or inconsistent."""

    exit_code = 6


class EvaluationError(OrganFusionError):
    """Inputs are valid but nothing can be evaluated (empty ground truth, no images)."""

    exit_code = 7


class FusionError(EvaluationError):
    """Fusion cannot produce a distribution (no ROIs, no prior mass)."""


def _locate(message: str, source: str | None, record: int | str | None) -> str:
    where = []
    if source is not None:
        where.append(str(source))
    if record is not None:
        where.append(record if isinstance(record, str) else f"record {record}")
    if where:
        return f"{': '.join(where)}: {message}"
    return message
