"""Exception hierarchy shared by all vaxledger modules."""

from __future__ import annotations


class VaxledgerError(Exception):
    """Base class for all errors raised by this package."""


class EncodingError(VaxledgerError):
    """A record cannot be canonically encoded or decoded."""


class KeyFormatError(VaxledgerError):
    """A signing or verification key has the wrong shape."""


class DuplicateActorError(VaxledgerError):
    """An actor id is already registered in the directory."""


class AuthError(VaxledgerError):
    """The author's role does not permit this action."""


class ChainError(VaxledgerError):
    """A block does not extend the chain it was appended to."""


class StateError(VaxledgerError):
    """An operation is illegal in the current business state."""


class InputError(VaxledgerError):
    """Caller-supplied data violates an operation precondition."""


class SafetyError(StateError):
    """A dose was attempted from a vial that is not safe to use."""


class SchedulingError(StateError):
    """No matching appointment exists for an administration."""


class InventoryError(StateError):
    """A vial or lot has no doses left to give."""


class SpoiledLotError(StateError):
    """A lot containing only spoiled vials cannot be moved."""


class LinkageError(StateError):
    """A report references a (beneficiary, lot) pair with no dose on record."""


class RoutingError(StateError):
    """Telemetry references a subject with no lot currently attached."""


class EligibilityError(StateError):
    """A certificate was requested for a beneficiary with no completed dose."""


class ConflictError(StateError):
    """The operation would duplicate an existing record."""


class ConfigError(VaxledgerError):
    """A configuration value or file is invalid."""


class ScenarioParseError(VaxledgerError):
    """A scenario or config file failed to parse."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
