"""Exception types shared across the package.

Every error raised on a product code path derives from HvacQaError so the
orchestrator can catch one base class and route the request into the
truthful-failure fallback instead of crashing.
"""

from __future__ import annotations


class HvacQaError(Exception):
    """Base class for all product errors."""


# -- storage / ingest ---------------------------------------------------------

class MalformedRow(HvacQaError):
    def __init__(self, line_no: int, reason: str):
        super().__init__(f"line {line_no}: {reason}")
        self.line_no = line_no
        self.reason = reason


class UnknownModality(HvacQaError):
    def __init__(self, name: str):
        super().__init__(f"unknown modality column: {name!r}")
        self.name = name


class SqlUnsupported(HvacQaError):
    """Statement text falls outside the supported read-only grammar."""


class SqlExec(HvacQaError):
    """Statement parsed but cannot be evaluated (bad column, bad param)."""


class InvalidRange(HvacQaError):
    """Time range with start after end."""


# -- context ------------------------------------------------------------------

class BudgetTooSmall(HvacQaError):
    """Mandatory metadata block alone exceeds the prompt budget."""


class UnknownTaxonomy(HvacQaError):
    def __init__(self, term: str):
        super().__init__(f"term not in taxonomy: {term!r}")
        self.term = term


class ConfigInvalid(HvacQaError):
    """Service or metadata configuration failed validation."""


class BindFailure(HvacQaError):
    """Service could not bind its listen address."""


# -- plans --------------------------------------------------------------------

class PlanUnparseable(HvacQaError):
    """Plan text is not a JSON document, even after repair."""


class PlanInvalid(HvacQaError):
    """Plan parsed as JSON but violates the plan schema."""


# -- processing ---------------------------------------------------------------

class MissingData(HvacQaError):
    """An operation needed at least one row/value and got none."""


class KindMismatch(HvacQaError):
    """Operand value kind does not match what the operation accepts."""


class InternalNull(HvacQaError):
    """A null leaked into a computation that expects concrete values."""


# -- gateway ------------------------------------------------------------------

class BackendUnavailable(HvacQaError):
    """Model backend unreachable or returned a transport-level error."""


class FixtureMissing(HvacQaError):
    def __init__(self, role: str, key: str):
        super().__init__(f"no fixture for role {role!r} key {key!r}")
        self.role = role
        self.key = key


# -- orchestrator / eval ------------------------------------------------------

class UnknownFlag(HvacQaError):
    def __init__(self, flag: str):
        super().__init__(f"unknown ablation flag: {flag!r}")
        self.flag = flag


class RatingUnparseable(HvacQaError):
    """Judge completion carried no usable score line."""


class SpecInvalid(HvacQaError):
    """Dataset generation spec rejected (rooms, days, null rate bounds)."""
