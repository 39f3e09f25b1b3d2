"""Short-time Fourier transform with exact overlap-add reconstruction."""

from dataclasses import dataclass
from enum import Enum

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.signal import get_window

from AudioIO import MultichannelWave
from Errors import ConfigError, DimensionError


class WindowKind(str, Enum):
    HANN = "hann"


@dataclass(frozen=True)
class StftParams:
    fft_size: int = 1024
    hop: int = 256
    window: WindowKind = WindowKind.HANN

    def __post_init__(self) -> None:
        fft_size, hop = int(self.fft_size), int(self.hop)
        if fft_size < 2 or fft_size & (fft_size - 1):
            raise ConfigError(f"fft_size must be a power of two, got {self.fft_size}")
        if hop < 1 or hop >= fft_size:
            raise ConfigError(f"hop must satisfy 1 <= hop < fft_size, got {self.hop}")
        if fft_size % hop:
            raise ConfigError(f"hop {hop} must divide fft_size {fft_size}")
        object.__setattr__(self, "window", WindowKind(self.window))

    @property
    def num_freqs(self) -> int:
        return self.fft_size // 2 + 1

    @property
    def padding(self) -> int:
        return self.fft_size - self.hop

    def num_frames(self, num_samples: int) -> int:
        return -(-(num_samples + self.padding) // self.hop)

    def analysis_window(self) -> np.ndarray:
        # fftbins=True gives the periodic window
        return get_window(self.window.value, self.fft_size, fftbins=True)


@dataclass(frozen=True)
class ComplexSpectrogram:
    """Complex values shaped channels x freqs x frames."""

    values: np.ndarray

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=np.complex128)
        if values.ndim == 2:
            values = values[None]
        if values.ndim != 3:
            raise DimensionError(f"spectrogram must be N x F x T, got shape {values.shape}")
        object.__setattr__(self, "values", values)

    @property
    def num_channels(self) -> int:
        return self.values.shape[0]

    @property
    def num_freqs(self) -> int:
        return self.values.shape[1]

    @property
    def num_frames(self) -> int:
        return self.values.shape[2]

    def channel(self, index: int) -> np.ndarray:
        return self.values[index]


def stft(wave: MultichannelWave, params: StftParams = StftParams()) -> ComplexSpectrogram:
    """One-sided STFT; the signal is zero-padded by fft_size - hop on both sides."""
    num_samples = wave.num_samples
    if num_samples < 1:
        raise DimensionError("cannot transform an empty wave")
    num_frames = params.num_frames(num_samples)
    total = (num_frames - 1) * params.hop + params.fft_size

    padded = np.zeros((wave.num_channels, total))
    padded[:, params.padding : params.padding + num_samples] = wave.data
    frames = sliding_window_view(padded, params.fft_size, axis=-1)[:, :: params.hop]
    spectra = np.fft.rfft(frames * params.analysis_window(), axis=-1)
    return ComplexSpectrogram(spectra.transpose(0, 2, 1))


def istft(
    spectrogram: ComplexSpectrogram, params: StftParams = StftParams(), out_len: int = 0, sample_rate: int = 16000
) -> MultichannelWave:
    """Weighted overlap-add normalised by the summed squared window."""
    if spectrogram.num_freqs != params.num_freqs:
        raise DimensionError(f"spectrogram has {spectrogram.num_freqs} bins, params expect {params.num_freqs}")
    if out_len < 0:
        raise DimensionError(f"out_len must be nonnegative, got {out_len}")
    window = params.analysis_window()
    num_frames = spectrogram.num_frames
    total = (num_frames - 1) * params.hop + params.fft_size

    frames = np.fft.irfft(spectrogram.values.transpose(0, 2, 1), n=params.fft_size, axis=-1) * window
    index = np.arange(num_frames)[:, None] * params.hop + np.arange(params.fft_size)[None, :]
    signal = np.zeros((spectrogram.num_channels, total))
    norm = np.zeros(total)
    for t in range(num_frames):
        signal[:, index[t]] += frames[:, t]
        norm[index[t]] += window ** 2
    covered = norm > 1e-10
    signal[:, covered] /= norm[covered]
    signal[:, ~covered] = 0.0

    body = signal[:, params.padding :]
    out = np.zeros((spectrogram.num_channels, out_len))
    keep = min(out_len, body.shape[1])
    out[:, :keep] = body[:, :keep]
    return MultichannelWave(sample_rate, out)
