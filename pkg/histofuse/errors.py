from __future__ import annotations


EXIT_OK = 0
EXIT_USER_ERROR = 2
EXIT_NUMERIC_ERROR = 3


class HistofuseError(Exception):
    exit_code = EXIT_USER_ERROR


class ShapeError(HistofuseError):
    pass


class ConfigError(HistofuseError):
    pass


class ParseError(HistofuseError):
    """Filename does not follow the BreaKHis grammar; ``segment`` names the bad part."""

    def __init__(self, message: str, segment: str = "") -> None:
        super().__init__(message)
        self.segment = segment


class TaxonomyError(ParseError):
    pass


class ImageFormatError(HistofuseError):
    pass


class WeightsFormatError(HistofuseError):
    def __init__(self, message: str, offset: int) -> None:
        super().__init__(f"{message} (offset {offset})")
        self.offset = offset


class NumericError(HistofuseError):
    exit_code = EXIT_NUMERIC_ERROR

    def __init__(self, message: str, epoch: int = 0, batch: int = 0) -> None:
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch


class UndefinedMetricError(HistofuseError):
    pass


class ReportInputError(HistofuseError):
    """Malformed CSV input; ``line`` is 1-based."""

    def __init__(self, message: str, line: int) -> None:
        super().__init__(f"line {line}: {message}")
        self.line = line


class LabelError(HistofuseError):
    """Targets are not valid class labels (out of range, or not one-hot)."""
