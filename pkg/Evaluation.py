"""SI-SDR scoring and parameter sweeps over synthetic scenes."""

import csv
import io
from dataclasses import dataclass
from typing import Dict, Final, List, Optional, Sequence, Tuple

import numpy as np
from loguru import logger

from AudioIO import MagnitudeMatrix, MultichannelWave, PathLike, atomic_output
from Errors import ConfigError, DimensionError, SibfError
from Sibf import (
    ExtractionFilter,
    apply_filter,
    apply_whitening,
    compute_whitening,
    estimate_filter_bs,
    estimate_filter_tv,
    normalize_reference,
    pipeline_stage,
    rescale,
)
from Simulation import MixingScenario, Scene, build_scene, degrade_reference
from SourceModel import BsLaplacianConfig, SourceModelConfig, TvGaussianConfig
from Stft import ComplexSpectrogram, StftParams, istft, stft

SI_SDR_CAP: Final[float] = 100.0
CSV_HEADER: Final[Tuple[str, ...]] = (
    "model",
    "param",
    "iterations",
    "degradation",
    "si_sdr_out",
    "si_sdr_best_input",
    "improvement",
)
REFERENCE_ROW_MODEL: Final[str] = "reference"


def _as_signal(x) -> np.ndarray:
    if isinstance(x, MultichannelWave):
        return x.channel(0)
    return np.asarray(x, dtype=np.float64).ravel()


def si_sdr(estimate, target) -> float:
    """Scale-invariant SDR in dB, capped at +100 and floored at -100."""
    estimate, target = _as_signal(estimate), _as_signal(target)
    if estimate.shape != target.shape:
        raise DimensionError(f"estimate has {estimate.size} samples, target has {target.size}")
    target_energy = float(np.dot(target, target))
    if target_energy == 0:
        raise SibfError("target signal is all zeros")
    projection = np.dot(estimate, target) / target_energy * target
    residual = estimate - projection
    signal_energy = float(np.dot(projection, projection))
    error_energy = float(np.dot(residual, residual))
    if signal_energy == 0:
        return -SI_SDR_CAP
    if error_energy <= 1e-20 * signal_energy:
        return SI_SDR_CAP
    return float(min(SI_SDR_CAP, max(-SI_SDR_CAP, 10.0 * np.log10(signal_energy / error_energy))))


@dataclass(frozen=True)
class SweepRow:
    model: str
    param: float
    iterations: int
    degradation: float
    si_sdr_out: float
    si_sdr_best_input: float

    @property
    def improvement(self) -> float:
        return self.si_sdr_out - self.si_sdr_best_input

    def as_csv(self) -> List[str]:
        return [
            self.model,
            f"{self.param:.6f}",
            str(self.iterations),
            f"{self.degradation:.6f}",
            f"{self.si_sdr_out:.6f}",
            f"{self.si_sdr_best_input:.6f}",
            f"{self.improvement:.6f}",
        ]


@dataclass(frozen=True)
class MetricsReport:
    rows: Tuple[SweepRow, ...]

    def __len__(self) -> int:
        return len(self.rows)

    def to_csv(self) -> str:
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for row in self.rows:
            writer.writerow(row.as_csv())
        return buffer.getvalue()

    def write_csv(self, path: PathLike) -> None:
        with atomic_output(path, suffix=".csv") as tmp:
            tmp.write_text(self.to_csv(), encoding="utf-8")
        logger.info("wrote {} ({} rows)", path, len(self.rows))


def best_input_si_sdr(scene: Scene) -> float:
    """Best SI-SDR over raw channels, each scored against the target image at that channel."""
    return max(
        si_sdr(scene.mixture.channel(n), scene.target_image(n)) for n in range(scene.mixture.num_channels)
    )


def reference_si_sdr(
    reference: MagnitudeMatrix, x_m: np.ndarray, target: np.ndarray, params: StftParams, sample_rate: int
) -> float:
    """Score the reference magnitude itself, with the reference microphone's phase."""
    spectrum = reference.values * np.exp(1j * np.angle(x_m))
    wave = istft(ComplexSpectrogram(spectrum[None]), params, target.size, sample_rate)
    return si_sdr(wave, target)


class _FilterCache:
    """BS runs keyed by (level, alpha); a k-iteration filter is read from a longer run."""

    def __init__(self, grid: Sequence[SourceModelConfig]) -> None:
        self._depth: Dict[float, int] = {}
        for config in grid:
            if isinstance(config, BsLaplacianConfig) and config.early_stop_tol == 0:
                self._depth[config.alpha] = max(self._depth.get(config.alpha, 0), config.iterations)
        self._runs: Dict[Tuple[int, float], Tuple[ExtractionFilter, ...]] = {}

    def filter_for(self, level_index: int, u, ref, config: SourceModelConfig) -> ExtractionFilter:
        if isinstance(config, TvGaussianConfig):
            return estimate_filter_tv(u, ref, config.beta)
        if config.early_stop_tol > 0:
            return estimate_filter_bs(u, ref, config.alpha, config.iterations, config.early_stop_tol)[0]
        key = (level_index, config.alpha)
        if key not in self._runs:
            _, trace = estimate_filter_bs(u, ref, config.alpha, self._depth[config.alpha], retain_history=True)
            self._runs[key] = trace.history
        return self._runs[key][config.iterations - 1]


def run_sweep(
    scenario: MixingScenario,
    grid: Sequence[SourceModelConfig],
    levels: Sequence[float] = (0.0,),
    params: StftParams = StftParams(),
    ref_mic: int = 0,
    sources: Optional[Sequence[MultichannelWave]] = None,
    include_reference: bool = False,
) -> MetricsReport:
    """One row per (config, level) in grid order, then optional reference rows per level."""
    if not grid:
        raise ConfigError("sweep grid is empty")
    if not levels:
        raise ConfigError("no degradation levels given")
    if not 0 <= ref_mic < scenario.num_channels:
        raise ConfigError(f"ref_mic {ref_mic} out of range for {scenario.num_channels} channels")

    with pipeline_stage("scene"):
        scene = build_scene(scenario, sources)
        x = stft(scene.mixture, params)
        target = scene.target_image(ref_mic)
        baseline = best_input_si_sdr(scene)
    with pipeline_stage("whitening"):
        u = apply_whitening(compute_whitening(x), x)

    references: List[MagnitudeMatrix] = []
    with pipeline_stage("reference"):
        for level in levels:
            references.append(degrade_reference(scene.target, scene.interference, level, params))
        normalized = [normalize_reference(r) for r in references]

    cache = _FilterCache(grid)
    x_m = x.channel(ref_mic)
    rows: List[SweepRow] = []
    for config in grid:
        for level_index, level in enumerate(levels):
            stage = f"sweep row {len(rows)}: {config.model.value} {config.param:g} x{config.iterations}, level {level:g}"
            with pipeline_stage(stage):
                w = cache.filter_for(level_index, u, normalized[level_index], config)
                y = rescale(apply_filter(w, u), x_m)
                estimate = istft(ComplexSpectrogram(y[None]), params, scene.mixture.num_samples)
                score = si_sdr(estimate, target)
            rows.append(SweepRow(config.model.value, config.param, config.iterations, level, score, baseline))
            logger.info("{} -> {:.3f} dB (best input {:.3f} dB)", stage, score, baseline)

    if include_reference:
        for level, reference in zip(levels, references):
            score = reference_si_sdr(reference, x_m, target, params, scene.mixture.sample_rate)
            rows.append(SweepRow(REFERENCE_ROW_MODEL, 0.0, 0, level, score, baseline))
    return MetricsReport(tuple(rows))
