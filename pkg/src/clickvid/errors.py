"""Exception types raised across the pipeline.

Every error carries a short machine-readable ``code`` so the CLI can report
failures on a single line without inspecting the exception class.
"""

from __future__ import annotations


class VidError(Exception):
    """Base class for all pipeline errors."""

    code = "Error"


class MalformedLine(VidError):
    code = "MalformedLine"

    def __init__(self, line_no: int, reason: str) -> None:
        super().__init__(f"line {line_no}: {reason}")
        self.line_no = line_no
        self.reason = reason


class InvalidConfig(VidError):
    code = "InvalidConfig"


class MissingInput(VidError):
    code = "MissingInput"


class MalformedFile(VidError):
    code = "MalformedFile"


class EmptyVocabulary(VidError):
    code = "EmptyVocabulary"


class EmptyCorpus(VidError):
    code = "EmptyCorpus"


class InvalidK(VidError):
    code = "InvalidK"


class UnknownCategory(VidError):
    code = "UnknownCategory"


class ChannelMismatch(VidError):
    code = "ChannelMismatch"


class LabelOutOfRange(VidError):
    code = "LabelOutOfRange"


class DimensionMismatch(VidError):
    code = "DimensionMismatch"


class InvalidPermutation(VidError):
    code = "InvalidPermutation"


class EmptyBatch(VidError):
    code = "EmptyBatch"


class EmptyIndex(VidError):
    code = "EmptyIndex"


class Divergence(VidError):
    """Training produced a non-finite loss.

    ``params`` holds the last parameters whose loss was finite and ``epoch``
    the number of epochs completed with them.
    """

    code = "Divergence"

    def __init__(self, message: str, params=None, epoch: int = 0) -> None:
        super().__init__(message)
        self.params = params
        self.epoch = epoch
