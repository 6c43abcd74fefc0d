"""Exception hierarchy shared across the package.

Every error raised by library code derives from PyramedError so callers
(and the CLI exit-code mapping) can catch one base class. Names mirror the
failure they report; messages name the offending field, file, or id.
"""


class PyramedError(Exception):
    """Base class for all errors raised by this package."""


# --- tensor serialization ---------------------------------------------------

class TensorFormatError(PyramedError):
    """Base for .mstf encode/decode failures."""


class MalformedHeaderError(TensorFormatError):
    pass


class UnsupportedVersionError(TensorFormatError):
    pass


class LengthMismatchError(TensorFormatError):
    pass


class DecodeError(PyramedError):
    """Image file could not be decoded."""


# --- image geometry ----------------------------------------------------------

class NonSquareError(PyramedError):
    pass


class NonDivisibleSideError(PyramedError):
    pass


class InconsistentGridError(PyramedError):
    pass


class NonDivisibleGridError(PyramedError):
    pass


class SpecMismatchError(PyramedError):
    """Input does not satisfy the encoder spec (tile side, patch divisibility, kind)."""


class ShapeMismatchError(PyramedError):
    pass


# --- connector training -------------------------------------------------------

class ZeroVectorError(PyramedError):
    pass


class EmptyDatasetError(PyramedError):
    pass


# --- synthesis pipeline --------------------------------------------------------

class EmptyCaptionError(PyramedError):
    pass


class DuplicateIdsError(PyramedError):
    def __init__(self, ids):
        self.ids = sorted(ids)
        super().__init__(f"duplicate ids: {', '.join(self.ids)}")


class MissingCredentialError(PyramedError):
    pass


class HttpError(PyramedError):
    def __init__(self, message, status=None):
        self.status = status
        super().__init__(message)


class MalformedResponseError(PyramedError):
    pass


class ConversationParseError(PyramedError):
    """Base for conversation parsing failures."""


class NoTurnsFoundError(ConversationParseError):
    pass


class RoleOrderViolationError(ConversationParseError):
    pass


class DanglingAssistantError(ConversationParseError):
    pass


class TooFewTurnsError(ConversationParseError):
    pass


# --- evaluation -----------------------------------------------------------------

class MissingPredictionError(PyramedError):
    def __init__(self, qids):
        self.qids = sorted(qids)
        shown = ", ".join(self.qids[:10])
        more = "" if len(self.qids) <= 10 else f" (+{len(self.qids) - 10} more)"
        super().__init__(f"missing predictions for qids: {shown}{more}")


class EmptyClosedSetError(PyramedError):
    pass


class EmptyGroundTruthError(PyramedError):
    pass


class MalformedRecordError(PyramedError):
    pass
