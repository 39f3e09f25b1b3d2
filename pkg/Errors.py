"""Exception types shared by the extraction pipeline."""

from typing import Optional


class SibfError(Exception):
    """Base error. `stage` names the pipeline step that failed, if known."""

    def __init__(self, message: str, stage: Optional[str] = None) -> None:
        super().__init__(message)
        self.message = message
        self.stage = stage

    def __str__(self) -> str:
        if self.stage:
            return f"[{self.stage}] {self.message}"
        return self.message


class ConfigError(SibfError):
    """Invalid parameter or argument; the CLI maps it to exit code 2."""


class DimensionError(SibfError):
    pass


class AudioError(SibfError):
    pass


class AudioFileNotFoundError(AudioError):
    pass


class UnsupportedAudioFormatError(AudioError):
    pass


class TruncatedChunkError(AudioError):
    pass


class NonFiniteSampleError(AudioError):
    pass


class MatrixFormatError(SibfError):
    pass


class BadMagicError(MatrixFormatError):
    pass


class MatrixSizeError(MatrixFormatError):
    pass


class NegativeValueError(MatrixFormatError):
    pass


class LinalgError(SibfError):
    pass


class WhiteningError(SibfError):
    """Raised when a frequency bin cannot be whitened."""

    def __init__(self, message: str, freq_bin: Optional[int] = None, stage: Optional[str] = None) -> None:
        super().__init__(message, stage)
        self.freq_bin = freq_bin


class ReferenceMagnitudeError(SibfError):
    pass


class SimulationError(SibfError):
    pass
