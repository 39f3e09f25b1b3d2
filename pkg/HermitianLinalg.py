"""Complex Hermitian primitives: weighted covariance and cyclic Jacobi eigensolver.

All functions accept a single N x N matrix or a stack shaped (..., N, N);
the frequency bins of a spectrogram are solved as one stack.
"""

from dataclasses import dataclass
from typing import Final, Union

import numpy as np

from Errors import DimensionError, LinalgError

HERMITIAN_TOL: Final[float] = 1e-12
OFFDIAG_TOL: Final[float] = 1e-14
MAX_SWEEPS: Final[int] = 100
# entries within this relative margin of the largest magnitude count as ties
PHASE_TIE_TOL: Final[float] = 1e-9


@dataclass(frozen=True)
class HermitianMatrix:
    entries: np.ndarray

    def __post_init__(self) -> None:
        entries = np.asarray(self.entries, dtype=np.complex128)
        if entries.ndim < 2 or entries.shape[-1] != entries.shape[-2]:
            raise DimensionError(f"expected (..., N, N) entries, got shape {entries.shape}")
        if not np.all(np.isfinite(entries)):
            raise LinalgError("matrix has non-finite entries")
        if np.max(np.abs(entries - np.conj(np.swapaxes(entries, -1, -2))), initial=0.0) > HERMITIAN_TOL * max(
            1.0, float(np.max(np.abs(entries), initial=0.0))
        ):
            raise LinalgError("matrix is not Hermitian")
        object.__setattr__(self, "entries", entries)

    @property
    def dim(self) -> int:
        return self.entries.shape[-1]


@dataclass(frozen=True)
class EigenDecomposition:
    """Eigenvalues sorted descending; eigenvectors are the columns of `eigenvectors`."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray


def _as_entries(m: Union[HermitianMatrix, np.ndarray]) -> np.ndarray:
    if isinstance(m, HermitianMatrix):
        return m.entries
    return HermitianMatrix(m).entries


def weighted_covariance(frames: np.ndarray, weights: np.ndarray) -> HermitianMatrix:
    """(1/T) * sum_t frames[t] frames[t]^H / weights[t].

    frames is (..., T, N) and weights (..., T).
    """
    weights = np.asarray(weights, dtype=np.float64)
    if not np.all(np.isfinite(weights)) or np.any(weights <= 0):
        raise LinalgError("weights must be positive and finite")
    with np.errstate(over="ignore"):
        gains = 1.0 / weights
    if not np.all(np.isfinite(gains)):
        raise LinalgError("weights too small to invert")
    return scaled_covariance(frames, gains)


def scaled_covariance(frames: np.ndarray, gains: np.ndarray) -> HermitianMatrix:
    """(1/T) * sum_t gains[t] frames[t] frames[t]^H, gains finite and nonnegative."""
    frames = np.asarray(frames, dtype=np.complex128)
    gains = np.asarray(gains, dtype=np.float64)
    if frames.ndim < 2:
        raise DimensionError(f"frames must be (..., T, N), got shape {frames.shape}")
    if gains.shape != frames.shape[:-1]:
        raise DimensionError(f"weights shape {gains.shape} does not match frames {frames.shape[:-1]}")
    num_frames = frames.shape[-2]
    if num_frames == 0:
        raise DimensionError("weighted covariance of zero frames")
    if not np.all(np.isfinite(gains)) or np.any(gains < 0):
        raise LinalgError("gains must be nonnegative and finite")

    scaled = frames * gains[..., None]
    cov = np.einsum("...tn,...tm->...nm", scaled, np.conj(frames)) / num_frames
    upper = np.triu(cov, 1)
    diag = np.real(np.diagonal(cov, axis1=-2, axis2=-1))
    cov = upper + np.conj(np.swapaxes(upper, -1, -2))
    cov = cov + diag[..., None] * np.eye(cov.shape[-1])
    return HermitianMatrix(cov)


def _jacobi_rotate(a: np.ndarray, v: np.ndarray, p: int, q: int, tol: np.ndarray) -> None:
    """Zero a[..., p, q] in place with a complex Givens rotation; accumulate into v."""
    apq = a[..., p, q]
    mag = np.abs(apq)
    active = mag > tol
    if not np.any(active):
        return
    safe_mag = np.where(active, mag, 1.0)
    phase = np.where(active, apq / safe_mag, 1.0)
    theta = (np.real(a[..., q, q]) - np.real(a[..., p, p])) / (2.0 * safe_mag)
    t = np.where(theta >= 0, 1.0, -1.0) / (np.abs(theta) + np.hypot(1.0, theta))
    t = np.where(active, t, 0.0)
    c = 1.0 / np.sqrt(1.0 + t * t)
    s = t * c
    # G = [[c, s e^{i phi}], [-s e^{-i phi}, c]] restricted to (p, q)
    gpq = s * phase
    gqp = -s * np.conj(phase)

    col_p = a[..., :, p].copy()
    col_q = a[..., :, q].copy()
    a[..., :, p] = col_p * c[..., None] + col_q * gqp[..., None]
    a[..., :, q] = col_p * gpq[..., None] + col_q * c[..., None]
    row_p = a[..., p, :].copy()
    row_q = a[..., q, :].copy()
    a[..., p, :] = row_p * c[..., None] + row_q * np.conj(gqp)[..., None]
    a[..., q, :] = row_p * np.conj(gpq)[..., None] + row_q * c[..., None]
    a[..., p, q] = np.where(active, 0.0, a[..., p, q])
    a[..., q, p] = np.where(active, 0.0, a[..., q, p])
    a[..., p, p] = np.real(a[..., p, p])
    a[..., q, q] = np.real(a[..., q, q])

    vp = v[..., :, p].copy()
    vq = v[..., :, q].copy()
    v[..., :, p] = vp * c[..., None] + vq * gqp[..., None]
    v[..., :, q] = vp * gpq[..., None] + vq * c[..., None]


def _off_diagonal_max(a: np.ndarray) -> np.ndarray:
    off = np.abs(a - np.diagonal(a, axis1=-2, axis2=-1)[..., None] * np.eye(a.shape[-1]))
    return off.max(axis=(-2, -1))


def _fix_phase(vectors: np.ndarray) -> np.ndarray:
    """Rotate each column so its lead entry is real and nonnegative.

    The lead is the first entry within PHASE_TIE_TOL (relative) of the column maximum.
    """
    mags = np.abs(vectors)
    peak = mags.max(axis=-2, keepdims=True)
    lead = np.argmax(mags >= peak * (1.0 - PHASE_TIE_TOL), axis=-2)
    lead_values = np.take_along_axis(vectors, lead[..., None, :], axis=-2)
    lead_mags = np.abs(lead_values)
    rotation = np.where(lead_mags > 0, np.conj(lead_values) / np.where(lead_mags > 0, lead_mags, 1.0), 1.0)
    fixed = vectors * rotation
    np.put_along_axis(fixed, lead[..., None, :], lead_mags.astype(np.complex128), axis=-2)
    return fixed


def hermitian_eig(m: Union[HermitianMatrix, np.ndarray]) -> EigenDecomposition:
    """Full eigendecomposition by cyclic Jacobi sweeps.

    Output is deterministic: eigenvalues descending (stable on ties),
    eigenvector phase fixed by `_fix_phase`.
    """
    a = _as_entries(m).copy()
    n = a.shape[-1]
    v = np.broadcast_to(np.eye(n, dtype=np.complex128), a.shape).copy()
    scale = np.maximum(np.linalg.norm(a, axis=(-2, -1)), np.finfo(float).tiny)
    tol = OFFDIAG_TOL * scale

    for _ in range(MAX_SWEEPS):
        if np.all(_off_diagonal_max(a) < tol):
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                _jacobi_rotate(a, v, p, q, tol)
    else:
        if not np.all(_off_diagonal_max(a) < tol):
            raise LinalgError(f"Jacobi iteration did not converge in {MAX_SWEEPS} sweeps")

    eigenvalues = np.real(np.diagonal(a, axis1=-2, axis2=-1))
    order = np.argsort(-eigenvalues, axis=-1, kind="stable")
    eigenvalues = np.take_along_axis(eigenvalues, order, axis=-1)
    eigenvectors = np.take_along_axis(v, order[..., None, :], axis=-1)
    return EigenDecomposition(eigenvalues, _fix_phase(eigenvectors))


def min_eigvec_row(m: Union[HermitianMatrix, np.ndarray]) -> np.ndarray:
    """Conjugate-transposed eigenvector of the smallest eigenvalue, shaped (..., N)."""
    decomposition = hermitian_eig(m)
    return np.conj(decomposition.eigenvectors[..., :, -1])
