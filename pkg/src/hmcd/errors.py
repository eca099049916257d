"""Exception hierarchy for the hmcd package.

Everything raised on purpose derives from HmcdError so callers (and the CLI)
can tell expected failures apart from genuine bugs.
"""


class HmcdError(Exception):
    """Base class for all deliberate errors raised by this package."""


# ---------------------------------------------------------------------------
# HTTP message parsing / validation


class MessageParseError(HmcdError):
    """Raw bytes could not be parsed as an HTTP/1.x message.

    ``offset`` is the byte offset into the input where parsing failed.
    """

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class MalformedStartLine(MessageParseError):
    pass


class MalformedHeader(MessageParseError):
    pass


class TruncatedMessage(MessageParseError):
    pass


class InvalidMessage(HmcdError):
    """A message object violates the wire grammar and cannot be serialized."""


# ---------------------------------------------------------------------------
# Corpus I/O


class CorpusError(HmcdError):
    pass


class FormatVersionMismatch(CorpusError):
    pass


class CorruptRecord(CorpusError):
    def __init__(self, message: str, line: int):
        super().__init__(f"{message} (line {line})")
        self.line = line


class ManifestMismatch(CorpusError):
    pass


class EmptyCorpus(HmcdError):
    pass


# ---------------------------------------------------------------------------
# Features / scaling


class EmptyFit(HmcdError):
    """fit() was called with no rows."""


# ---------------------------------------------------------------------------
# Numeric core


class ShapeMismatch(HmcdError):
    pass


class GraphStateError(HmcdError):
    """backward() called on a tensor with no graph, or on a non-scalar."""


class CheckpointError(HmcdError):
    pass


# ---------------------------------------------------------------------------
# Training / prediction


class InsufficientData(HmcdError):
    pass


class Diverged(HmcdError):
    """Training produced a non-finite loss."""


# ---------------------------------------------------------------------------
# Dictionary / generation


class WordNotInMalDict(HmcdError):
    pass


class PositionOutOfRange(HmcdError):
    pass


class NoTemplates(HmcdError):
    pass


class ValidationFailed(HmcdError):
    """A generated flow failed re-parse validation after all retries."""


# ---------------------------------------------------------------------------
# Evaluation


class UndefinedMetric(HmcdError):
    pass


class LengthMismatch(HmcdError):
    pass


# ---------------------------------------------------------------------------
# Configuration / CLI


class ConfigError(HmcdError):
    pass


class UnknownKey(ConfigError):
    pass


class OutOfBounds(ConfigError):
    pass


class UsageError(HmcdError):
    """Bad command line; maps to exit code 1."""
