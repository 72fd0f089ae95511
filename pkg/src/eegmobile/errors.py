"""Exception types raised across the package.

Every error derives from :class:`EEGMobileError` so callers (the CLI in
particular) can categorize failures with a single ``except`` clause.
"""


class EEGMobileError(Exception):
    """Base class for all package errors."""

    category = "error"


# -- EDF parsing -------------------------------------------------------------


class EdfError(EEGMobileError, ValueError):
    category = "edf"


class TruncatedHeader(EdfError):
    """Input ends before the declared header length."""


class MalformedField(EdfError):
    """A fixed-width header field holds undecodable or non-numeric text."""


class InvariantViolation(EdfError):
    """Header fields decode but contradict each other."""


class UnknownChannel(EdfError, KeyError):
    """Requested channel label is not in the recording."""

    def __str__(self):
        return str(self.args[0]) if self.args else ""


class TruncatedData(EdfError):
    """File ends in the middle of a data record."""


class MalformedTAL(EdfError):
    """Time-stamped annotation list is missing delimiters or is unparsable."""


class NonMonotonicOnsets(EdfError):
    """Annotation onsets decrease inside a stream."""


# -- spectrograms ------------------------------------------------------------


class SpectroError(EEGMobileError, ValueError):
    category = "spectro"


class SignalTooShort(SpectroError):
    pass


class InvalidConfig(SpectroError):
    pass


class InvalidTarget(SpectroError):
    pass


# -- dataset / cache ---------------------------------------------------------


class DatasetError(EEGMobileError):
    category = "dataset"


class CoverageGap(UserWarning):
    """Annotation interval runs past the end of the signal (truncated)."""


class ClippedSamples(UserWarning):
    """Digital samples outside [digital_min, digital_max] were clamped."""


class MisalignedDuration(DatasetError, ValueError):
    pass


class TooFewSubjects(DatasetError, ValueError):
    pass


class CacheWriteFailure(DatasetError, OSError):
    pass


class MissingKey(DatasetError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else ""


class ChecksumMismatch(DatasetError):
    """Stored CRC32 disagrees with record bytes; the cache must be rebuilt."""


class CacheFormatError(DatasetError, ValueError):
    pass


class IngestError(DatasetError):
    """Wraps a parse/transform failure with the (subject, night, epoch) it hit."""

    def __init__(self, subject_id, night, epoch_index, cause):
        self.subject_id = subject_id
        self.night = night
        self.epoch_index = epoch_index
        self.cause = cause
        where = f"subject={subject_id} night={night}"
        if epoch_index is not None:
            where += f" epoch={epoch_index}"
        super().__init__(f"{where}: {type(cause).__name__}: {cause}")


# -- network / training ------------------------------------------------------


class ShapeMismatch(EEGMobileError, ValueError):
    category = "nn"


class CheckpointError(EEGMobileError, ValueError):
    category = "nn"


class TrainError(EEGMobileError):
    category = "train"


class LabelOutOfRange(TrainError, ValueError):
    pass


class BadSelector(TrainError, ValueError):
    pass


class EmptyFold(TrainError):
    pass


class LeakageError(TrainError):
    """A validation subject was seen during training."""


# -- metrics -----------------------------------------------------------------


class MetricsError(EEGMobileError, ValueError):
    category = "metrics"


class LengthMismatch(MetricsError):
    pass


class ClassOutOfRange(MetricsError):
    pass


class EmptyMatrix(MetricsError):
    pass
