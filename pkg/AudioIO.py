from __future__ import annotations

"""
Чтение и запись звука (RIFF/WAVE) и матриц опорного спектра (SIBFMAT).
Модуль не зависит от численного ядра и тестируется отдельно.
"""

import os
import struct
import tempfile
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path
from typing import Final, Iterator, Union

import numpy as np
import soundfile as sf
from loguru import logger

from Errors import (
    AudioError,
    AudioFileNotFoundError,
    BadMagicError,
    MatrixFormatError,
    MatrixSizeError,
    NegativeValueError,
    NonFiniteSampleError,
    TruncatedChunkError,
    UnsupportedAudioFormatError,
)

PathLike = Union[str, os.PathLike]

PCM16_SCALE: Final[float] = 32768.0
PCM16_MAX: Final[float] = 1.0 - 2.0 ** -15
MATRIX_MAGIC: Final[bytes] = b"SIBFMAT1"
MATRIX_HEADER_SIZE: Final[int] = len(MATRIX_MAGIC) + 8

BIT_DEPTHS: Final[dict] = {16: "PCM_16", 32: "FLOAT"}


@dataclass(frozen=True)
class MultichannelWave:
    """Time-domain audio, `data` is channels x samples (float64)."""

    sample_rate: int
    data: np.ndarray

    def __post_init__(self) -> None:
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim == 1:
            data = data[None, :]
        if data.ndim != 2:
            raise AudioError(f"wave data must be channels x samples, got shape {data.shape}")
        if data.shape[0] < 1:
            raise AudioError("wave must have at least one channel")
        if int(self.sample_rate) <= 0:
            raise AudioError(f"sample rate must be positive, got {self.sample_rate}")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    @property
    def num_channels(self) -> int:
        return self.data.shape[0]

    @property
    def num_samples(self) -> int:
        return self.data.shape[1]

    def channel(self, index: int) -> np.ndarray:
        return self.data[index]


@dataclass(frozen=True)
class MagnitudeMatrix:
    """F x T nonnegative real matrix, frequency-major."""

    values: np.ndarray

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2 or values.shape[0] == 0 or values.shape[1] == 0:
            raise MatrixSizeError(f"magnitude matrix must be a nonempty F x T array, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise MatrixFormatError("magnitude matrix contains non-finite values")
        if np.any(values < 0):
            raise NegativeValueError("magnitude matrix contains negative values")
        object.__setattr__(self, "values", values)

    @property
    def num_freqs(self) -> int:
        return self.values.shape[0]

    @property
    def num_frames(self) -> int:
        return self.values.shape[1]


@contextmanager
def atomic_output(path: PathLike, suffix: str = ".tmp") -> Iterator[Path]:
    """Yield a temporary path next to `path`; it replaces `path` only on success."""
    target = Path(path)
    fd, tmp_name = tempfile.mkstemp(prefix=f".{target.name}.", suffix=suffix, dir=str(target.parent))
    os.close(fd)
    tmp = Path(tmp_name)
    try:
        yield tmp
        os.replace(tmp, target)
    except BaseException:
        if tmp.exists():
            tmp.unlink()
        raise


def _check_riff_chunks(path: Path) -> None:
    """Walk the RIFF chunk headers and fail on a chunk that runs past the end of file."""
    file_size = path.stat().st_size
    with open(path, "rb") as fh:
        head = fh.read(12)
        if len(head) < 12 or head[:4] != b"RIFF" or head[8:12] != b"WAVE":
            raise UnsupportedAudioFormatError(f"{path}: not a RIFF/WAVE file")
        offset = 12
        seen_fmt = False
        while offset < file_size:
            header = fh.read(8)
            if len(header) < 8:
                raise TruncatedChunkError(f"{path}: truncated chunk header at byte {offset}")
            chunk_id, chunk_size = struct.unpack("<4sI", header)
            body_start = offset + 8
            if body_start + chunk_size > file_size:
                raise TruncatedChunkError(
                    f"{path}: chunk {chunk_id!r} declares {chunk_size} bytes, "
                    f"only {file_size - body_start} available"
                )
            if chunk_id == b"fmt ":
                seen_fmt = True
            elif chunk_id == b"data":
                if not seen_fmt:
                    raise UnsupportedAudioFormatError(f"{path}: data chunk precedes fmt chunk")
                return
            # chunks are word aligned
            offset = body_start + chunk_size + (chunk_size & 1)
            fh.seek(offset)
    raise TruncatedChunkError(f"{path}: no data chunk")


def read_wav(path: PathLike) -> MultichannelWave:
    """Read a PCM 16-bit or IEEE float WAV file; 16-bit samples map to v/32768."""
    path = Path(path)
    if not path.is_file():
        raise AudioFileNotFoundError(f"{path}: no such file")
    _check_riff_chunks(path)
    try:
        info = sf.info(str(path))
    except RuntimeError as exc:
        raise UnsupportedAudioFormatError(f"{path}: {exc}") from exc
    if info.format not in ("WAV", "WAVEX") or info.subtype not in BIT_DEPTHS.values():
        raise UnsupportedAudioFormatError(
            f"{path}: unsupported encoding {info.format}/{info.subtype} (PCM_16 or FLOAT expected)"
        )

    if info.subtype == "PCM_16":
        raw, sample_rate = sf.read(str(path), dtype="int16", always_2d=True)
        data = raw.T.astype(np.float64) / PCM16_SCALE
    else:
        raw, sample_rate = sf.read(str(path), dtype="float32", always_2d=True)
        data = raw.T.astype(np.float64)
        if not np.all(np.isfinite(data)):
            raise NonFiniteSampleError(f"{path}: non-finite samples")
    logger.info("read {} ({} ch, {} samples, {} Hz)", path, data.shape[0], data.shape[1], sample_rate)
    return MultichannelWave(sample_rate, data)


def quantize_pcm16(data: np.ndarray) -> np.ndarray:
    """Clamp to [-1, 1 - 2^-15] and round to the nearest 16-bit code."""
    clipped = np.clip(data, -1.0, PCM16_MAX)
    return np.rint(clipped * PCM16_SCALE).astype(np.int16)


def write_wav(wave: MultichannelWave, path: PathLike, bit_depth: int = 32) -> None:
    if bit_depth not in BIT_DEPTHS:
        raise UnsupportedAudioFormatError(f"bit depth must be 16 or 32, got {bit_depth}")
    if wave.num_samples == 0:
        raise AudioError("refusing to write an empty wave")
    if not np.all(np.isfinite(wave.data)):
        raise NonFiniteSampleError("wave contains non-finite samples")

    frames = wave.data.T
    if bit_depth == 16:
        payload = quantize_pcm16(frames)
    else:
        payload = frames.astype(np.float32)
    with atomic_output(path, suffix=".wav") as tmp:
        sf.write(str(tmp), payload, wave.sample_rate, subtype=BIT_DEPTHS[bit_depth], format="WAV")
    logger.info("wrote {} ({}-bit, {} ch)", path, bit_depth, wave.num_channels)


def read_matrix(path: PathLike) -> MagnitudeMatrix:
    """Read a SIBFMAT file: magic, F and T as u32 LE, then F*T f32 LE, frequency-major."""
    path = Path(path)
    if not path.is_file():
        raise AudioFileNotFoundError(f"{path}: no such file")
    blob = path.read_bytes()
    if blob[: len(MATRIX_MAGIC)] != MATRIX_MAGIC:
        raise BadMagicError(f"{path}: missing {MATRIX_MAGIC.decode()} magic")
    if len(blob) < MATRIX_HEADER_SIZE:
        raise MatrixSizeError(f"{path}: truncated header")
    num_freqs, num_frames = np.frombuffer(blob, dtype="<u4", count=2, offset=len(MATRIX_MAGIC))
    num_freqs, num_frames = int(num_freqs), int(num_frames)
    expected = 4 * num_freqs * num_frames
    payload = blob[MATRIX_HEADER_SIZE:]
    if num_freqs == 0 or num_frames == 0 or len(payload) != expected:
        raise MatrixSizeError(
            f"{path}: header says {num_freqs}x{num_frames} ({expected} bytes), payload has {len(payload)} bytes"
        )
    values = np.frombuffer(payload, dtype="<f4").reshape(num_freqs, num_frames)
    if not np.all(np.isfinite(values)):
        raise MatrixFormatError(f"{path}: non-finite value in payload")
    if np.any(values < 0):
        raise NegativeValueError(f"{path}: negative value in payload")
    return MagnitudeMatrix(values.astype(np.float64))


def write_matrix(m: MagnitudeMatrix, path: PathLike) -> None:
    header = MATRIX_MAGIC + np.array([m.num_freqs, m.num_frames], dtype="<u4").tobytes()
    with atomic_output(path) as tmp:
        tmp.write_bytes(header + m.values.astype("<f4").tobytes())
    logger.info("wrote {} ({}x{})", path, m.num_freqs, m.num_frames)
