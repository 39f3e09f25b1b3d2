import numpy as np
import pytest

from AudioIO import MagnitudeMatrix
from Errors import DimensionError, ReferenceMagnitudeError, SibfError, WhiteningError
from Sibf import (
    ExtractionFilter,
    ReferenceMagnitude,
    WhiteningTransform,
    apply_filter,
    apply_whitening,
    bs_objective,
    compute_whitening,
    estimate_filter_bs,
    estimate_filter_tv,
    extract,
    majorizer_gap,
    normalize_reference,
    pipeline_stage,
    rescale,
    tv_objective,
)
from SourceModel import BsLaplacianConfig, TvGaussianConfig
from Stft import ComplexSpectrogram


def _random_stft(rng: np.random.Generator, channels: int, freqs: int, frames: int) -> ComplexSpectrogram:
    shape = (channels, freqs, frames)
    return ComplexSpectrogram(rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def _random_reference(rng: np.random.Generator, freqs: int, frames: int, low: float = 0.1) -> ReferenceMagnitude:
    return normalize_reference(rng.uniform(low, 2.0, size=(freqs, frames)))


def _unit_norm(w: ExtractionFilter) -> np.ndarray:
    return np.sum(np.abs(w.rows) ** 2, axis=1)


# ---------------------------------------------------------------- whitening


@pytest.mark.parametrize("channels", [2, 3, 4])
@pytest.mark.parametrize("frames", [64, 256])
def test_whitening_identity(channels: int, frames: int) -> None:
    """После отбеливания <u u^H>_t = I в каждом бине."""
    for seed in range(9):
        rng = np.random.default_rng(seed * 10 + channels)
        mixing = rng.standard_normal((channels, channels)) + 1j * rng.standard_normal((channels, channels))
        x = _random_stft(rng, channels, 5, frames)
        x = ComplexSpectrogram(np.einsum("nm,mft->nft", mixing, x.values))
        u = apply_whitening(compute_whitening(x), x).values
        cov = np.einsum("nft,mft->fnm", u, u.conj()) / frames
        assert np.max(np.abs(cov - np.eye(channels))) <= 1e-6


def test_whitening_of_diagonal_covariance() -> None:
    # <x x^H> = diag(4, 1) в единственном бине
    x = ComplexSpectrogram(np.array([[[2, -2, 2, -2]], [[1, 1, -1, -1]]], dtype=complex))
    p = compute_whitening(x)
    np.testing.assert_allclose(p.matrices[0], np.diag([0.5, 1.0]), atol=1e-12)
    assert not p.floored.any()


def test_whitening_single_channel_scalar() -> None:
    x = ComplexSpectrogram(np.full((1, 2, 4), 3.0 + 0j))
    p = compute_whitening(x)
    np.testing.assert_allclose(p.matrices[:, 0, 0], [1 / 3, 1 / 3])


def test_whitening_of_white_input_stays_white() -> None:
    # столбцы ортогональны, <x x^H> = I
    x = ComplexSpectrogram(np.array([[[1, 1, 1, 1]], [[1, -1, 1, -1]]], dtype=complex))
    u = apply_whitening(compute_whitening(x), x).values[:, 0]
    np.testing.assert_allclose(u @ u.conj().T / 4, np.eye(2), atol=1e-12)


def test_whitening_errors_name_the_silent_bin() -> None:
    rng = np.random.default_rng(0)
    values = _random_stft(rng, 2, 4, 10).values
    values[:, 2] = 0
    with pytest.raises(WhiteningError) as info:
        compute_whitening(ComplexSpectrogram(values))
    assert info.value.freq_bin == 2
    assert "2" in str(info.value)


def test_whitening_needs_enough_frames() -> None:
    rng = np.random.default_rng(1)
    with pytest.raises(WhiteningError):
        compute_whitening(_random_stft(rng, 3, 2, 2))


def test_whitening_floors_rank_deficient_bins() -> None:
    rng = np.random.default_rng(2)
    source = rng.standard_normal((1, 3, 20)) + 0j
    x = ComplexSpectrogram(np.concatenate([source, source]))
    p = compute_whitening(x)
    assert p.floored.all()
    assert np.all(np.isfinite(p.matrices))


def test_apply_whitening_identity_and_zero() -> None:
    rng = np.random.default_rng(3)
    x = _random_stft(rng, 2, 3, 5)
    eye = WhiteningTransform(np.broadcast_to(np.eye(2, dtype=complex), (3, 2, 2)).copy())
    np.testing.assert_array_equal(apply_whitening(eye, x).values, x.values)
    zero = ComplexSpectrogram(np.zeros((2, 3, 5)))
    assert not np.any(apply_whitening(eye, zero).values)
    with pytest.raises(DimensionError):
        apply_whitening(eye, _random_stft(rng, 3, 3, 5))


# ---------------------------------------------------------------- reference


def test_normalize_reference_examples() -> None:
    r = normalize_reference(np.array([[2.0, 2.0, 2.0, 2.0], [1.0, 3.0, 0.0, 0.0], [0.0, 0.0, 0.0, 0.0]]))
    np.testing.assert_allclose(r.values[0], [1, 1, 1, 1])
    np.testing.assert_allclose(r.values[1], [np.sqrt(0.4), 3 * np.sqrt(0.4), 1e-5, 1e-5])
    np.testing.assert_array_equal(r.values[2], [1e-5] * 4)
    assert r.normalized


def test_normalize_reference_two_frames() -> None:
    r = normalize_reference(MagnitudeMatrix(np.array([[1.0, 3.0]])))
    np.testing.assert_allclose(r.values[0], [1 / np.sqrt(5), 3 / np.sqrt(5)])
    assert np.mean(r.values ** 2) == pytest.approx(1.0, abs=1e-9)


def test_normalize_reference_rejects_bad_input() -> None:
    with pytest.raises(ReferenceMagnitudeError):
        normalize_reference(np.array([[1.0, -1.0]]))
    with pytest.raises(ReferenceMagnitudeError):
        normalize_reference(np.array([[1.0, np.nan]]))


# ---------------------------------------------------------------- objectives


def test_tv_objective_examples() -> None:
    y = np.array([[1 + 0j, 2j]])
    assert tv_objective(y, ReferenceMagnitude(np.array([[1.0, 2.0]])), 1.0) == pytest.approx(1.5)
    assert tv_objective(y, ReferenceMagnitude(np.ones((1, 2))), 3.0) == pytest.approx(2.5)
    assert tv_objective(y, ReferenceMagnitude(np.array([[5.0, 0.1]])), 0.0) == pytest.approx(2.5)


def test_bs_objective_examples() -> None:
    assert bs_objective(np.array([[3 + 4j]]), ReferenceMagnitude(np.ones((1, 1))), 11.0) == pytest.approx(6.0)
    r = ReferenceMagnitude(np.array([[1.0, 3.0]]))
    assert bs_objective(np.zeros((1, 2)), r, 4.0) == pytest.approx(4.0)
    assert bs_objective(np.array([[3j, -4.0]]), r, 0.0) == pytest.approx(3.5)


def test_objectives_check_shapes_and_finiteness() -> None:
    r = ReferenceMagnitude(np.ones((1, 2)))
    with pytest.raises(DimensionError):
        tv_objective(np.zeros((2, 2)), r, 1.0)
    with pytest.raises(SibfError):
        bs_objective(np.array([[np.inf, 0]]), r, 1.0)


def test_majorizer_gap_examples() -> None:
    assert majorizer_gap(0, 1.0, 4.0, 1.0) == pytest.approx(0.5)
    assert majorizer_gap(3 + 4j, 1.0, 11.0, 6.0) == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(SibfError):
        majorizer_gap(1.0, 1.0, 1.0, 0.0)


def test_majorizer_gap_sampled() -> None:
    rng = np.random.default_rng(0)
    size = 100_000
    y = rng.standard_normal(size) * 10 + 1j * rng.standard_normal(size) * 10
    r = rng.uniform(0, 3, size)
    alpha = 10.0 ** rng.uniform(-3, 4, size)
    b = 10.0 ** rng.uniform(-4, 3, size)
    assert np.all(majorizer_gap(y, r, alpha, b) >= -1e-12)
    tight = np.sqrt(alpha * r ** 2 + np.abs(y) ** 2)
    assert np.max(np.abs(majorizer_gap(y, r, alpha, tight))) <= 1e-12


# ---------------------------------------------------------------- filters


def test_tv_filter_single_channel_is_one() -> None:
    rng = np.random.default_rng(4)
    u = _random_stft(rng, 1, 6, 20)
    w = estimate_filter_tv(u, _random_reference(rng, 6, 20), 8.0)
    np.testing.assert_allclose(w.rows, np.ones((6, 1)), atol=1e-15)


@pytest.mark.parametrize("seed", range(20))
def test_tv_filter_beats_grid_search(seed: int) -> None:
    """Замкнутое решение не хуже перебора по сетке 720 x 720 на сфере фильтров."""
    rng = np.random.default_rng(seed)
    u = _random_stft(rng, 2, 1, 24)
    r = _random_reference(rng, 1, 24, low=0.05)
    beta = 2.0
    w = estimate_filter_tv(u, r, beta)
    best = tv_objective(apply_filter(w, u), r, beta)

    frames = u.values[:, 0, :]
    weights = r.floored_values()[0] ** beta
    thetas = np.linspace(0, np.pi / 2, 720)
    phis = np.arange(720) * 2 * np.pi / 720
    grid_min = np.inf
    for theta in thetas:
        y = np.cos(theta) * frames[0][None, :] + np.sin(theta) * np.exp(1j * phis)[:, None] * frames[1][None, :]
        grid_min = min(grid_min, float(np.min(np.mean(np.abs(y) ** 2 / weights, axis=1))))
    assert best <= grid_min + 1e-3


def test_tv_filter_is_unit_norm_eigenvector() -> None:
    rng = np.random.default_rng(5)
    u = _random_stft(rng, 3, 4, 40)
    r = _random_reference(rng, 4, 40)
    w = estimate_filter_tv(u, r, 2.0)
    np.testing.assert_allclose(_unit_norm(w), 1.0, atol=1e-10)
    weights = r.floored_values() ** 2.0
    for f in range(4):
        frames = u.values[:, f, :]
        cov = (frames / weights[f]) @ frames.conj().T / 40
        lam = np.linalg.eigvalsh(cov)[0]
        column = w.rows[f].conj()
        assert np.linalg.norm(cov @ column - lam * column) <= 1e-9 * max(1.0, np.linalg.norm(cov))


@pytest.mark.parametrize("beta", [64.0, 100.0])
def test_tv_filter_with_large_beta_stays_finite(beta: float) -> None:
    """Нулевой столбец опоры даёт r = 1e-5, а r^beta уходит в ноль."""
    rng = np.random.default_rng(11)
    u = _random_stft(rng, 2, 4, 30)
    raw = rng.uniform(0.1, 2.0, size=(4, 30))
    raw[:, 5] = 0.0
    r = normalize_reference(raw)
    w = estimate_filter_tv(u, r, beta)
    assert np.all(np.isfinite(w.rows))
    np.testing.assert_allclose(_unit_norm(w), 1.0, atol=1e-10)

    log_weights = beta * np.log(r.floored_values())
    gains = np.exp(log_weights.min(axis=1, keepdims=True) - log_weights)
    for f in range(4):
        frames = u.values[:, f, :]
        cov = (frames * gains[f]) @ frames.conj().T / 30
        lam = np.linalg.eigvalsh(cov)[0]
        column = w.rows[f].conj()
        assert np.linalg.norm(cov @ column - lam * column) <= 1e-9 * max(1.0, np.linalg.norm(cov))

    assert tv_objective(np.zeros((4, 30)), r, beta) == 0.0
    assert tv_objective(apply_filter(w, u), r, beta) > 0


def test_extract_with_large_beta() -> None:
    rng = np.random.default_rng(12)
    x = _random_stft(rng, 3, 5, 40)
    reference = np.abs(x.values[0])
    reference[:, 0] = 0.0
    result = extract(x, reference, TvGaussianConfig(100.0))
    assert np.all(np.isfinite(result.output))
    assert result.objective > 0


def test_tv_filter_invariant_to_reference_row_scaling() -> None:
    rng = np.random.default_rng(6)
    u = _random_stft(rng, 3, 5, 50)
    raw = rng.uniform(0.1, 2.0, size=(5, 50))
    scaled = raw * rng.uniform(0.01, 100.0, size=(5, 1))
    w1 = estimate_filter_tv(u, normalize_reference(raw), 4.0)
    w2 = estimate_filter_tv(u, normalize_reference(scaled), 4.0)
    assert np.max(np.abs(w1.rows - w2.rows)) <= 1e-10


def test_bs_first_iteration_equals_tv_beta_one() -> None:
    for seed in range(20):
        rng = np.random.default_rng(seed)
        u = _random_stft(rng, 3, 4, 30)
        r = _random_reference(rng, 4, 30, low=0.0)
        w_bs, trace = estimate_filter_bs(u, r, alpha=100.0, iterations=1)
        w_tv = estimate_filter_tv(u, r, 1.0)
        assert np.max(np.abs(w_bs.rows - w_tv.rows)) <= 1e-12
        assert trace.iterations == 1


def test_bs_large_alpha_reproduces_tv_beta_one() -> None:
    rng = np.random.default_rng(7)
    u = _random_stft(rng, 2, 3, 64)
    r = normalize_reference(rng.uniform(0.5, 1.5, size=(3, 64)))
    w, trace = estimate_filter_bs(u, r, alpha=1e12, iterations=5, retain_history=True)
    assert len(trace.history) == 5
    for earlier, later in zip(trace.history, trace.history[1:]):
        assert np.max(np.abs(earlier.rows - later.rows)) < 1e-6
    assert np.max(np.abs(w.rows - estimate_filter_tv(u, r, 1.0).rows)) < 1e-6


@pytest.mark.parametrize("alpha", [0.01, 1.0, 100.0])
def test_bs_objective_is_non_increasing(alpha: float) -> None:
    """Вспомогательная функция гарантирует невозрастание целевой функции."""
    for seed in range(17):
        rng = np.random.default_rng(seed)
        u = _random_stft(rng, 2 + seed % 3, 3, 40)
        r = _random_reference(rng, 3, 40)
        w, trace = estimate_filter_bs(u, r, alpha, iterations=10)
        objectives = np.array(trace.objectives)
        assert objectives.size == 10
        assert np.all(np.diff(objectives) <= 1e-9 * np.abs(objectives[:-1]))
        np.testing.assert_allclose(_unit_norm(w), 1.0, atol=1e-10)
        assert trace.objectives[-1] == pytest.approx(bs_objective(apply_filter(w, u), r, alpha))


def test_bs_reference_scale_matches_alpha_scale() -> None:
    rng = np.random.default_rng(8)
    u = _random_stft(rng, 3, 4, 50)
    raw = rng.uniform(0.2, 2.0, size=(4, 50))
    c = 3.0
    w_scaled, _ = estimate_filter_bs(u, ReferenceMagnitude(c * raw), 2.0, iterations=6)
    w_alpha, _ = estimate_filter_bs(u, ReferenceMagnitude(raw), c * c * 2.0, iterations=6)
    assert np.max(np.abs(w_scaled.rows - w_alpha.rows)) <= 1e-9


def test_bs_retains_aux_and_stops_early() -> None:
    rng = np.random.default_rng(9)
    u = _random_stft(rng, 2, 3, 40)
    r = _random_reference(rng, 3, 40)
    _, full = estimate_filter_bs(u, r, 1.0, iterations=50, retain_aux=True)
    assert full.aux.shape == (3, 40)
    assert np.all(full.aux >= r.floor)
    _, early = estimate_filter_bs(u, r, 1.0, iterations=50, early_stop_tol=1e-3)
    assert 1 < early.iterations < 50
    assert early.objectives == full.objectives[: early.iterations]


def test_bs_rejects_zero_iterations() -> None:
    rng = np.random.default_rng(10)
    with pytest.raises(SibfError):
        estimate_filter_bs(_random_stft(rng, 2, 2, 10), _random_reference(rng, 2, 10), 1.0, iterations=0)


def test_filter_rejects_mismatched_reference() -> None:
    rng = np.random.default_rng(11)
    with pytest.raises(DimensionError):
        estimate_filter_tv(_random_stft(rng, 2, 3, 10), _random_reference(rng, 3, 9), 1.0)


# ---------------------------------------------------------------- application


def test_apply_filter_selector_zero_and_bound() -> None:
    rng = np.random.default_rng(12)
    u = _random_stft(rng, 2, 3, 8)
    selector = ExtractionFilter(np.tile([1.0 + 0j, 0.0], (3, 1)))
    np.testing.assert_array_equal(apply_filter(selector, u), u.channel(0))
    assert not np.any(apply_filter(selector, ComplexSpectrogram(np.zeros((2, 3, 8)))))

    rows = rng.standard_normal((3, 2)) + 1j * rng.standard_normal((3, 2))
    w = ExtractionFilter(rows / np.linalg.norm(rows, axis=1, keepdims=True))
    assert np.all(np.abs(apply_filter(w, u)) <= np.linalg.norm(u.values, axis=0) + 1e-12)


def test_rescale_examples() -> None:
    rng = np.random.default_rng(13)
    x_m = rng.standard_normal((4, 30)) + 1j * rng.standard_normal((4, 30))
    np.testing.assert_allclose(rescale(x_m, x_m), x_m, rtol=0, atol=1e-12)
    assert np.max(np.abs(rescale(2j * x_m, x_m) - x_m)) <= 1e-12
    for _ in range(5):
        c = complex(*rng.standard_normal(2))
        assert np.max(np.abs(rescale(c * x_m, x_m) - x_m)) <= 1e-12


def test_rescale_idempotent_and_silent_bins() -> None:
    rng = np.random.default_rng(14)
    x_m = rng.standard_normal((3, 20)) + 1j * rng.standard_normal((3, 20))
    y = rng.standard_normal((3, 20)) + 1j * rng.standard_normal((3, 20))
    y[1] = 0
    once = rescale(y, x_m)
    assert np.max(np.abs(rescale(once, x_m) - once)) <= 1e-12
    assert not np.any(once[1])


# ---------------------------------------------------------------- pipeline


@pytest.mark.parametrize("model", [TvGaussianConfig(), BsLaplacianConfig(iterations=3)])
def test_extract_single_channel_passthrough(model) -> None:
    rng = np.random.default_rng(15)
    x = _random_stft(rng, 1, 5, 30)
    result = extract(x, np.abs(x.channel(0)), model)
    assert np.max(np.abs(result.output - x.channel(0))) <= 1e-9
    assert (result.trace is None) == isinstance(model, TvGaussianConfig)


def test_extract_annotates_stage() -> None:
    rng = np.random.default_rng(16)
    values = _random_stft(rng, 2, 3, 10).values
    values[:, 1] = 0
    with pytest.raises(WhiteningError) as info:
        extract(ComplexSpectrogram(values), np.ones((3, 10)), TvGaussianConfig())
    assert info.value.stage == "whitening"
    assert str(info.value).startswith("[whitening]")


def test_extract_checks_reference_shape_and_ref_mic() -> None:
    rng = np.random.default_rng(17)
    x = _random_stft(rng, 2, 3, 10)
    with pytest.raises(DimensionError) as info:
        extract(x, np.ones((3, 9)), TvGaussianConfig())
    assert info.value.stage == "input"
    with pytest.raises(DimensionError):
        extract(x, np.ones((3, 10)), TvGaussianConfig(), ref_mic=2)


def test_pipeline_stage_keeps_inner_stage() -> None:
    with pytest.raises(SibfError) as info:
        with pipeline_stage("outer"):
            with pipeline_stage("inner"):
                raise SibfError("boom")
    assert info.value.stage == "inner"
