"""Synthetic scenes: anechoic delay-and-gain mixtures and magnitude references."""

from dataclasses import dataclass
from typing import Final, Optional, Sequence, Tuple

import numpy as np
from loguru import logger

from AudioIO import MagnitudeMatrix, MultichannelWave
from Errors import DimensionError, SimulationError
from Stft import ComplexSpectrogram, StftParams, stft

SOURCE_RMS: Final[float] = 0.1
RAMP_SECONDS: Final[float] = 0.01
COLOR_TAPS: Final[int] = 16


@dataclass(frozen=True)
class MixingScenario:
    """Gains and integer delays are indexed [source, channel].

    `num_samples` and `sample_rate` only matter when sources are synthesised.
    """

    gains: np.ndarray
    delays: np.ndarray
    noise_level: float = 0.0
    seed: int = 0
    max_delay: int = 256
    sample_rate: int = 16000
    num_samples: int = 32000

    def __post_init__(self) -> None:
        gains = np.atleast_2d(np.asarray(self.gains, dtype=np.float64))
        delays = np.atleast_2d(np.asarray(self.delays))
        if gains.shape[0] < 1 or gains.shape[1] < 1:
            raise SimulationError("scenario needs at least one source and one channel")
        if delays.shape != gains.shape:
            raise SimulationError(f"delays shape {delays.shape} does not match gains {gains.shape}")
        if not np.all(np.isfinite(gains)):
            raise SimulationError("gains must be finite")
        if np.any(delays != np.round(delays)) or np.any(delays < 0):
            raise SimulationError("delays must be nonnegative integers")
        if not self.noise_level >= 0:
            raise SimulationError(f"noise level must be >= 0, got {self.noise_level}")
        object.__setattr__(self, "gains", gains)
        object.__setattr__(self, "delays", delays.astype(np.int64))

    @property
    def num_sources(self) -> int:
        return self.gains.shape[0]

    @property
    def num_channels(self) -> int:
        return self.gains.shape[1]


@dataclass(frozen=True)
class Scene:
    """Dry sources, their images at every microphone and the noisy mixture."""

    scenario: MixingScenario
    sources: Tuple[MultichannelWave, ...]
    images: np.ndarray
    mixture: MultichannelWave

    @property
    def target(self) -> MultichannelWave:
        return self.sources[0]

    @property
    def interference(self) -> MultichannelWave:
        dry = sum((s.channel(0) for s in self.sources[1:]), np.zeros(self.mixture.num_samples))
        return MultichannelWave(self.mixture.sample_rate, dry)

    def target_image(self, channel: int) -> np.ndarray:
        return self.images[0, channel]


def _streams(seed: int):
    """Independent generators for sources, geometry and sensor noise."""
    children = np.random.SeedSequence(seed).spawn(3)
    return [np.random.Generator(np.random.PCG64(child)) for child in children]


def mix_instantaneous(sources, mixing: np.ndarray) -> ComplexSpectrogram:
    """x(f, t) = A(f) s(f, t); sources is K x F x T, mixing F x N x K."""
    values = sources.values if isinstance(sources, ComplexSpectrogram) else np.asarray(sources, dtype=np.complex128)
    mixing = np.asarray(mixing, dtype=np.complex128)
    if values.ndim != 3 or mixing.ndim != 3:
        raise DimensionError("sources must be K x F x T and mixing F x N x K")
    num_sources, num_freqs, _ = values.shape
    if mixing.shape[0] != num_freqs or mixing.shape[2] != num_sources:
        raise DimensionError(f"mixing shape {mixing.shape} does not fit sources {values.shape}")
    if num_sources > mixing.shape[1]:
        raise DimensionError(f"{num_sources} sources exceed {mixing.shape[1]} channels")
    return ComplexSpectrogram(np.einsum("fnk,kft->nft", mixing, values))


def delay_signal(signal: np.ndarray, delay: int) -> np.ndarray:
    """Shift right by `delay` samples, keeping the length."""
    out = np.zeros_like(signal)
    if delay < signal.shape[-1]:
        out[..., delay:] = signal[..., : signal.shape[-1] - delay]
    return out


def source_images(source_waves: Sequence[MultichannelWave], scenario: MixingScenario) -> np.ndarray:
    """Images of every source at every channel, K x N x L."""
    if len(source_waves) != scenario.num_sources:
        raise SimulationError(f"scenario has {scenario.num_sources} sources, got {len(source_waves)} waves")
    lengths = {w.num_samples for w in source_waves}
    if len(lengths) != 1:
        raise SimulationError(f"sources must have equal length, got {sorted(lengths)}")
    if scenario.delays.max() > scenario.max_delay:
        raise SimulationError(
            f"delay {scenario.delays.max()} exceeds the maximum {scenario.max_delay} "
            "for the instantaneous mixing approximation"
        )
    length = lengths.pop()
    images = np.zeros((scenario.num_sources, scenario.num_channels, length))
    for k, wave in enumerate(source_waves):
        dry = wave.channel(0)
        for n in range(scenario.num_channels):
            images[k, n] = scenario.gains[k, n] * delay_signal(dry, int(scenario.delays[k, n]))
    return images


def sensor_noise(scenario: MixingScenario, length: int) -> np.ndarray:
    _, _, noise_rng = _streams(scenario.seed)
    return scenario.noise_level * noise_rng.standard_normal((scenario.num_channels, length))


def mix_images(images: np.ndarray, scenario: MixingScenario) -> np.ndarray:
    """Channel signals N x L: the source images summed, plus sensor noise."""
    return images.sum(axis=0) + sensor_noise(scenario, images.shape[-1])


def simulate_anechoic(source_waves: Sequence[MultichannelWave], scenario: MixingScenario) -> MultichannelWave:
    """Sum of delayed, scaled sources plus seeded white noise (PCG64 stream)."""
    images = source_images(source_waves, scenario)
    mixture = mix_images(images, scenario)
    return MultichannelWave(source_waves[0].sample_rate, mixture)


def random_geometry(num_sources: int, num_channels: int, seed: int, max_delay: int = 8):
    """Gains uniform in [0.5, 1.5] and integer delays in [0, max_delay]."""
    _, geometry_rng, _ = _streams(seed)
    gains = geometry_rng.uniform(0.5, 1.5, size=(num_sources, num_channels))
    delays = geometry_rng.integers(0, max_delay + 1, size=(num_sources, num_channels))
    return gains, delays


def _coloured_noise(rng: np.random.Generator, length: int) -> np.ndarray:
    taps = rng.standard_normal(COLOR_TAPS) * np.exp(-np.arange(COLOR_TAPS) / 4.0)
    return np.convolve(rng.standard_normal(length), taps, mode="same")


def _burst_envelope(rng: np.random.Generator, length: int, sample_rate: int) -> np.ndarray:
    """Alternating silent/active segments of 0.1-0.35 s with raised-cosine ramps."""
    envelope = np.zeros(length)
    ramp = max(1, int(RAMP_SECONDS * sample_rate))
    fade = 0.5 - 0.5 * np.cos(np.pi * np.arange(ramp) / ramp)
    position, active = 0, False
    while position < length:
        span = int(rng.uniform(0.1, 0.35) * sample_rate)
        end = min(length, position + span)
        if active:
            segment = np.ones(end - position)
            edge = min(ramp, segment.size // 2)
            if edge:
                segment[:edge] = fade[:edge]
                segment[-edge:] = fade[:edge][::-1]
            envelope[position:end] = segment
        position, active = end, not active
    return envelope


def synthesize_sources(num_sources: int, num_samples: int, sample_rate: int, seed: int) -> Tuple[MultichannelWave, ...]:
    """Source 0 is a bursty speech-like target, the rest are continuous modulated noise."""
    if num_sources < 1 or num_samples < 1:
        raise SimulationError("need at least one source and one sample")
    source_rng, _, _ = _streams(seed)
    t = np.arange(num_samples) / sample_rate
    waves = []
    for k in range(num_sources):
        signal = _coloured_noise(source_rng, num_samples)
        if k == 0:
            signal *= _burst_envelope(source_rng, num_samples, sample_rate)
        else:
            rate, phase = source_rng.uniform(0.5, 3.0), source_rng.uniform(0, 2 * np.pi)
            signal *= 1.0 + 0.5 * np.sin(2 * np.pi * rate * t + phase)
        rms = np.sqrt(np.mean(signal ** 2))
        if rms > 0:
            signal *= SOURCE_RMS / rms
        waves.append(MultichannelWave(sample_rate, signal))
    return tuple(waves)


def build_scene(scenario: MixingScenario, sources: Optional[Sequence[MultichannelWave]] = None) -> Scene:
    if sources is None:
        sources = synthesize_sources(scenario.num_sources, scenario.num_samples, scenario.sample_rate, scenario.seed)
    images = source_images(sources, scenario)
    mixture = mix_images(images, scenario)
    logger.debug(
        "scene: {} sources, {} channels, {} samples, seed {}",
        scenario.num_sources,
        scenario.num_channels,
        images.shape[-1],
        scenario.seed,
    )
    return Scene(scenario, tuple(sources), images, MultichannelWave(sources[0].sample_rate, mixture))


def oracle_reference(s1: MultichannelWave, params: StftParams = StftParams()) -> MagnitudeMatrix:
    """Magnitude spectrogram of the clean target."""
    return MagnitudeMatrix(np.abs(stft(MultichannelWave(s1.sample_rate, s1.data[:1]), params).channel(0)))


def degrade_reference(
    s1: MultichannelWave, interference: MultichannelWave, level: float, params: StftParams = StftParams()
) -> MagnitudeMatrix:
    """Magnitude spectrogram of the target contaminated by `level` times the interference."""
    if not level >= 0:
        raise SimulationError(f"degradation level must be >= 0, got {level}")
    if s1.num_samples != interference.num_samples:
        raise SimulationError(
            f"target has {s1.num_samples} samples, interference has {interference.num_samples}"
        )
    contaminated = s1.channel(0) + level * interference.channel(0)
    return oracle_reference(MultichannelWave(s1.sample_rate, contaminated), params)
