"""Exceptions raised across the diacritization toolkit"""


class TashkeelError(Exception):
    """Base class for all errors raised by tashkeel"""


class InvalidMarkCombination(TashkeelError, ValueError):
    """
    Raised in strict mode when the marks following a letter do not form
    one of the 15 diacritic classes
    """

    def __init__(self, position, marks):
        self.position = position
        self.marks = marks
        super().__init__(
            f"Invalid mark combination at letter position {position}: "
            + " ".join(f"U+{ord(x):04X}" for x in marks)
        )


class NoLetters(TashkeelError, ValueError):
    """Raised when a ratio over letters is requested for zero letters"""


class CountMismatch(TashkeelError, ValueError):
    """Raised when segments and separators can not be interleaved"""


class EmptyCorpus(TashkeelError, ValueError):
    """Raised when a vocabulary is requested from an empty corpus"""


class SequenceTooLong(TashkeelError, ValueError):
    """Raised when batching a sequence longer than the configured max"""

    def __init__(self, index, length, max_len):
        self.index = index
        self.length = length
        self.max_len = max_len
        super().__init__(
            f"Sequence {index} has length {length} exceeding max length"
            f" {max_len}"
        )


class LengthExceeded(TashkeelError, ValueError):
    """Raised when model input is longer than the position table"""


class PrefixLengthMismatch(TashkeelError, ValueError):
    """Raised when the decoder label prefix and tokens differ in shape"""


class ShapeMismatch(TashkeelError, ValueError):
    """Raised when pretrained weights can not be mapped to a target"""


class AllIgnored(TashkeelError, ValueError):
    """Raised when a loss is requested with no counted positions"""


class NonFiniteGradient(TashkeelError, RuntimeError):
    """Raised by the optimizer when a gradient holds NaN or inf"""

    def __init__(self, name):
        self.name = name
        super().__init__(f"Non-finite gradient in parameter {name}")


class SkeletonMismatch(TashkeelError, ValueError):
    """Raised when reference and hypothesis letters differ"""

    def __init__(self, position, reference=None, hypothesis=None):
        self.position = position
        super().__init__(
            f"Letter skeletons diverge at position {position}"
            f" (reference: {reference!r}, hypothesis: {hypothesis!r})"
        )


class EmptyEvaluationSet(TashkeelError, ValueError):
    """Raised when a metric has no counted positions or words"""


class LineCountMismatch(TashkeelError, ValueError):
    """Raised when reference and hypothesis files are not line aligned"""


class CheckpointError(TashkeelError, RuntimeError):
    """Raised when a checkpoint fails hash or layout verification"""


class ConfigError(TashkeelError, RuntimeError):
    """Raised when a run config fails verification"""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__(
            f"{len(self.errors)} errors found in config:{chr(10)}{chr(9)}"
            f"{f'{chr(10)}{chr(9)}'.join(self.errors)}"
        )
