"""Reference-guided target extraction.

Pipeline per frequency bin: whitening of the observations, estimation of a
unit-norm extraction filter from a magnitude reference under a source model,
application of the filter and projection back onto a reference microphone.
Every stage is vectorised over frequency bins; bins never interact.
"""

from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Final, Iterator, List, Optional, Tuple, Union

import numpy as np
from loguru import logger
from scipy.special import logsumexp

from AudioIO import MagnitudeMatrix
from Errors import DimensionError, ReferenceMagnitudeError, SibfError, WhiteningError
from HermitianLinalg import HermitianMatrix, hermitian_eig, min_eigvec_row, scaled_covariance, weighted_covariance
from SourceModel import BsLaplacianConfig, SourceModelConfig, TvGaussianConfig
from Stft import ComplexSpectrogram

EIGEN_FLOOR: Final[float] = 1e-9
REFERENCE_FLOOR: Final[float] = 1e-5
SILENT_POWER: Final[float] = 1e-30


@dataclass(frozen=True)
class WhiteningTransform:
    """Per-bin matrices P(f), shape F x N x N."""

    matrices: np.ndarray
    eigen_floor: float = EIGEN_FLOOR
    floored: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))

    @property
    def num_freqs(self) -> int:
        return self.matrices.shape[0]

    @property
    def num_channels(self) -> int:
        return self.matrices.shape[-1]


@dataclass(frozen=True)
class ReferenceMagnitude:
    values: np.ndarray
    normalized: bool = False
    floor: float = REFERENCE_FLOOR

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise ReferenceMagnitudeError(f"reference must be F x T, got shape {values.shape}")
        if not np.all(np.isfinite(values)) or np.any(values < 0):
            raise ReferenceMagnitudeError("reference must be finite and nonnegative")
        if not self.floor > 0:
            raise ReferenceMagnitudeError(f"reference floor must be positive, got {self.floor}")
        object.__setattr__(self, "values", values)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.values.shape

    def floored_values(self) -> np.ndarray:
        return np.maximum(self.values, self.floor)


@dataclass(frozen=True)
class ExtractionFilter:
    """Unit-norm rows w1(f), shape F x N."""

    rows: np.ndarray

    @property
    def num_freqs(self) -> int:
        return self.rows.shape[0]

    @property
    def num_channels(self) -> int:
        return self.rows.shape[1]


@dataclass(frozen=True)
class BsIterationTrace:
    objectives: Tuple[float, ...]
    aux: Optional[np.ndarray] = None
    history: Tuple[ExtractionFilter, ...] = ()

    @property
    def iterations(self) -> int:
        return len(self.objectives)


@dataclass(frozen=True)
class ExtractionResult:
    output: np.ndarray
    filter: ExtractionFilter
    objective: float
    trace: Optional[BsIterationTrace] = None


@contextmanager
def pipeline_stage(name: str) -> Iterator[None]:
    """Tag a SibfError raised inside the block with the stage name."""
    try:
        yield
    except SibfError as exc:
        if exc.stage is None:
            exc.stage = name
        raise


def _frames_by_bin(u: ComplexSpectrogram) -> np.ndarray:
    # N x F x T -> F x T x N
    return u.values.transpose(1, 2, 0)


def compute_whitening(x: ComplexSpectrogram) -> WhiteningTransform:
    """PCA whitening P(f) = D^{-1/2} E^H of the per-bin covariance."""
    if not np.all(np.isfinite(x.values)):
        raise WhiteningError("observation contains non-finite values")
    if x.num_frames < x.num_channels:
        raise WhiteningError(f"need at least as many frames ({x.num_frames}) as channels ({x.num_channels})")

    frames = _frames_by_bin(x)
    cov = weighted_covariance(frames, np.ones(frames.shape[:-1]))
    decomposition = hermitian_eig(cov)
    eigenvalues = decomposition.eigenvalues
    top = eigenvalues[:, 0]
    silent = np.flatnonzero(top <= 0)
    if silent.size:
        raise WhiteningError(f"frequency bin {silent[0]} has zero power", freq_bin=int(silent[0]))

    limit = EIGEN_FLOOR * top[:, None]
    floored_mask = eigenvalues < limit
    floored = floored_mask.any(axis=1)
    if floored.any():
        logger.warning("whitening floored eigenvalues in {} of {} bins", int(floored.sum()), x.num_freqs)
    eigenvalues = np.maximum(eigenvalues, limit)

    basis_h = np.conj(np.swapaxes(decomposition.eigenvectors, -1, -2))
    matrices = basis_h / np.sqrt(eigenvalues)[:, :, None]
    return WhiteningTransform(matrices, EIGEN_FLOOR, floored)


def apply_whitening(p: WhiteningTransform, x: ComplexSpectrogram) -> ComplexSpectrogram:
    if p.num_freqs != x.num_freqs or p.num_channels != x.num_channels:
        raise DimensionError(
            f"whitening is {p.num_freqs} bins x {p.num_channels} ch, observation is "
            f"{x.num_freqs} bins x {x.num_channels} ch"
        )
    return ComplexSpectrogram(np.einsum("fnm,mft->nft", p.matrices, x.values))


def normalize_reference(
    r: Union[MagnitudeMatrix, np.ndarray], floor: float = REFERENCE_FLOOR
) -> ReferenceMagnitude:
    """Scale each frequency row to unit mean square, then clamp to `floor`."""
    values = r.values if isinstance(r, MagnitudeMatrix) else np.asarray(r, dtype=np.float64)
    if not np.all(np.isfinite(values)) or np.any(values < 0):
        raise ReferenceMagnitudeError("reference must be finite and nonnegative")
    rms = np.sqrt(np.mean(values ** 2, axis=1))
    scale = np.where(rms > 0, rms, 1.0)
    normalized = values / scale[:, None]
    if np.any(rms == 0):
        logger.warning("reference has {} all-zero rows, floored to {}", int(np.sum(rms == 0)), floor)
    return ReferenceMagnitude(np.maximum(normalized, floor), normalized=True, floor=floor)


def _check_pair(y: np.ndarray, r: ReferenceMagnitude) -> np.ndarray:
    y = np.asarray(y, dtype=np.complex128)
    if y.shape != r.shape:
        raise DimensionError(f"signal shape {y.shape} does not match reference {r.shape}")
    if not np.all(np.isfinite(y)):
        raise SibfError("signal contains non-finite values")
    return y


def tv_objective(y1: np.ndarray, r: ReferenceMagnitude, beta: float) -> float:
    """Sum over bins of the time average of |y1|^2 / r^beta.

    Accumulated in the log domain; the result is inf once it leaves the float range.
    """
    y1 = _check_pair(y1, r)
    power = np.real(y1 * np.conj(y1))
    log_means = logsumexp(-beta * np.log(r.floored_values()), b=power, axis=1) - np.log(r.shape[1])
    with np.errstate(over="ignore"):
        return float(np.sum(np.exp(log_means)))


def bs_objective(y1: np.ndarray, r: ReferenceMagnitude, alpha: float) -> float:
    """Sum over bins of the time average of sqrt(alpha r^2 + |y1|^2)."""
    y1 = _check_pair(y1, r)
    power = np.real(y1 * np.conj(y1))
    return float(np.sum(np.mean(np.sqrt(alpha * r.floored_values() ** 2 + power), axis=1)))


def majorizer_gap(
    y: Union[complex, np.ndarray],
    r: Union[float, np.ndarray],
    alpha: float,
    b: Union[float, np.ndarray],
) -> Union[float, np.ndarray]:
    """Upper bound minus the square-root term; zero iff b = sqrt(alpha r^2 + |y|^2).

    Written as (b - s)^2 / (2b) with s the square root, which equals
    (alpha r^2 + |y|^2) / (2b) + b / 2 - s and cannot round below zero.
    """
    b = np.asarray(b, dtype=np.float64)
    if np.any(b <= 0):
        raise SibfError("auxiliary variable must be positive")
    s = np.sqrt(alpha * np.asarray(r, dtype=np.float64) ** 2 + np.abs(y) ** 2)
    gap = (b - s) ** 2 / (2.0 * b)
    return float(gap) if gap.ndim == 0 else gap


def _check_filter_inputs(u: ComplexSpectrogram, r: ReferenceMagnitude) -> None:
    if r.shape != (u.num_freqs, u.num_frames):
        raise DimensionError(f"reference {r.shape} does not match spectrogram {(u.num_freqs, u.num_frames)}")


def _covariance_from_log_weights(frames: np.ndarray, log_weights: np.ndarray) -> HermitianMatrix:
    """<u u^H / exp(log_weights)>_t with each bin rescaled so its largest gain is 1.

    A positive per-bin scale leaves the eigenvectors unchanged, and the gains
    stay in [0, 1] however large the exponent.
    """
    shift = log_weights.min(axis=-1, keepdims=True)
    return scaled_covariance(frames, np.exp(shift - log_weights))


def estimate_filter_tv(u: ComplexSpectrogram, r: ReferenceMagnitude, beta: float) -> ExtractionFilter:
    """Closed form: minor eigenvector of <u u^H / r^beta>_t per bin."""
    _check_filter_inputs(u, r)
    cov = _covariance_from_log_weights(_frames_by_bin(u), beta * np.log(r.floored_values()))
    return ExtractionFilter(min_eigvec_row(cov))


def apply_filter(w: ExtractionFilter, u: ComplexSpectrogram) -> np.ndarray:
    """y1(f, t) = w1(f) u(f, t)."""
    if w.num_freqs != u.num_freqs or w.num_channels != u.num_channels:
        raise DimensionError(
            f"filter is {w.num_freqs} bins x {w.num_channels} ch, spectrogram is "
            f"{u.num_freqs} bins x {u.num_channels} ch"
        )
    return np.einsum("fn,nft->ft", w.rows, u.values)


def estimate_filter_bs(
    u: ComplexSpectrogram,
    r: ReferenceMagnitude,
    alpha: float,
    iterations: int,
    early_stop_tol: float = 0.0,
    retain_aux: bool = False,
    retain_history: bool = False,
) -> Tuple[ExtractionFilter, BsIterationTrace]:
    """Auxiliary-function iterations for the bivariate spherical Laplacian model.

    The first pass uses b = r, later passes b = sqrt(alpha r^2 + |w1 u|^2).
    """
    _check_filter_inputs(u, r)
    if iterations < 1:
        raise SibfError(f"iterations must be >= 1, got {iterations}")
    frames = _frames_by_bin(u)
    ref = r.floored_values()

    objectives: List[float] = []
    history: List[ExtractionFilter] = []
    aux = ref
    w: Optional[ExtractionFilter] = None
    y: Optional[np.ndarray] = None
    for iteration in range(iterations):
        if w is not None:
            power = np.real(y * np.conj(y))
            aux = np.maximum(np.sqrt(alpha * ref ** 2 + power), r.floor)
        w = ExtractionFilter(min_eigvec_row(_covariance_from_log_weights(frames, np.log(aux))))
        y = apply_filter(w, u)
        objectives.append(bs_objective(y, r, alpha))
        if retain_history:
            history.append(w)
        logger.debug("bs iteration {}: objective {:.9g}", iteration + 1, objectives[-1])
        if early_stop_tol > 0 and len(objectives) > 1:
            previous = objectives[-2]
            change = abs(previous - objectives[-1]) / max(abs(previous), np.finfo(float).tiny)
            if change < early_stop_tol:
                logger.debug("bs early stop after {} iterations", iteration + 1)
                break

    trace = BsIterationTrace(tuple(objectives), aux if retain_aux else None, tuple(history))
    return w, trace


def rescale(y1: np.ndarray, x_m: np.ndarray) -> np.ndarray:
    """Projection back: least-squares complex gain per bin onto the reference channel."""
    y1 = np.asarray(y1, dtype=np.complex128)
    x_m = np.asarray(x_m, dtype=np.complex128)
    if y1.shape != x_m.shape:
        raise DimensionError(f"signal shape {y1.shape} does not match reference channel {x_m.shape}")
    numerator = np.mean(x_m * np.conj(y1), axis=1)
    power = np.mean(np.real(y1 * np.conj(y1)), axis=1)
    active = power > SILENT_POWER
    gain = np.where(active, numerator / np.where(active, power, 1.0), 0.0)
    return gain[:, None] * y1


def estimate_filter(
    u: ComplexSpectrogram, r: ReferenceMagnitude, model: SourceModelConfig, retain_history: bool = False
) -> Tuple[ExtractionFilter, Optional[BsIterationTrace]]:
    if isinstance(model, TvGaussianConfig):
        return estimate_filter_tv(u, r, model.beta), None
    if isinstance(model, BsLaplacianConfig):
        return estimate_filter_bs(
            u, r, model.alpha, model.iterations, model.early_stop_tol, retain_history=retain_history
        )
    raise SibfError(f"unsupported source model config {model!r}")


def model_objective(y1: np.ndarray, r: ReferenceMagnitude, model: SourceModelConfig) -> float:
    if isinstance(model, TvGaussianConfig):
        return tv_objective(y1, r, model.beta)
    return bs_objective(y1, r, model.alpha)


def extract(
    x: ComplexSpectrogram,
    r: Union[MagnitudeMatrix, np.ndarray],
    model: SourceModelConfig,
    ref_mic: int = 0,
) -> ExtractionResult:
    """Whiten, estimate the filter, apply it and rescale against channel `ref_mic`."""
    with pipeline_stage("input"):
        r_values = r.values if isinstance(r, MagnitudeMatrix) else np.asarray(r, dtype=np.float64)
        if r_values.shape != (x.num_freqs, x.num_frames):
            raise DimensionError(
                f"reference is {r_values.shape[0]}x{r_values.shape[1]}, "
                f"observation is {x.num_freqs}x{x.num_frames}"
            )
        if not 0 <= ref_mic < x.num_channels:
            raise DimensionError(f"ref_mic {ref_mic} out of range for {x.num_channels} channels")
    logger.debug("extract: {} ch, {} bins, {} frames, model {}", x.num_channels, x.num_freqs, x.num_frames, model)

    with pipeline_stage("whitening"):
        p = compute_whitening(x)
        u = apply_whitening(p, x)
    with pipeline_stage("reference"):
        ref = normalize_reference(r_values)
    with pipeline_stage("filter"):
        w, trace = estimate_filter(u, ref, model)
        y1 = apply_filter(w, u)
        objective = trace.objectives[-1] if trace is not None else model_objective(y1, ref, model)
    with pipeline_stage("rescale"):
        output = rescale(y1, x.channel(ref_mic))
    return ExtractionResult(output, w, objective, trace)
