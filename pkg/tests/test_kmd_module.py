import numpy as np
import pytest

from core.errors import (DegenerateWindow, DimensionMismatch, InsufficientHistory, IrregularSampling, KoopWatchError,
                         NumericalFailure)
from core.kmd_module import (KoopmanEstimate, MeasurementFrame, StreamWindow, decompose_modes, decompose_snapshots,
                             estimate_koopman, predict)
from helpers import damped_oscillation, rotation, stable_symmetric_system, trajectory


def test_rotation_operator_is_recovered(rotation_window):
    estimate = estimate_koopman(rotation_window)
    assert estimate.rank == 2
    np.testing.assert_allclose(estimate.operator, rotation(0.1), atol=1e-10)


@pytest.mark.parametrize("p", [2, 3, 4])
def test_stable_linear_system_is_recovered(p):
    system, start = stable_symmetric_system(p, seed=p)
    window = StreamWindow.from_array(trajectory(system, start, 51), dt=0.1)
    estimate = estimate_koopman(window)
    assert np.linalg.norm(estimate.operator - system) <= 1e-8


def test_open_loop_prediction_follows_the_system():
    system, start = stable_symmetric_system(4, seed=7)
    states = trajectory(system, start, 61)
    window = StreamWindow.from_array(states[:51], dt=0.1)
    predicted = predict(estimate_koopman(window), window.last(), 10)
    predicted_values = np.array([frame.values for frame in predicted])
    error = np.linalg.norm(predicted_values - states[51:]) / np.linalg.norm(states[51:])
    assert error <= 1e-6


def test_prediction_times_continue_from_the_anchor(rotation_window):
    predicted = predict(estimate_koopman(rotation_window), rotation_window.last(), 3)
    last_t = rotation_window.last().t
    assert [frame.t for frame in predicted] == pytest.approx([last_t + i * rotation_window.dt for i in (1, 2, 3)])


def test_prediction_rejects_wrong_dimension(rotation_window):
    estimate = estimate_koopman(rotation_window)
    with pytest.raises(DimensionMismatch):
        predict(estimate, MeasurementFrame(0.0, [1.0, 2.0, 3.0]), 2)


def test_prediction_horizon_must_be_positive(rotation_window):
    with pytest.raises(ValueError):
        predict(estimate_koopman(rotation_window), rotation_window.last(), 0)


def test_two_frame_window_is_too_short():
    window = StreamWindow.from_array(np.ones((2, 3)), dt=1.0)
    with pytest.raises(InsufficientHistory):
        estimate_koopman(window)


def test_zero_window_gives_zero_operator_unless_strict():
    window = StreamWindow.from_array(np.zeros((6, 3)), dt=1.0)
    estimate = estimate_koopman(window)
    assert estimate.rank == 0
    assert not np.any(estimate.operator)
    with pytest.raises(DegenerateWindow):
        estimate_koopman(window, strict=True)


def test_rank_deficient_window_is_truncated():
    geometric = 0.9 ** np.arange(8)[:, np.newaxis] * np.array([1.0, 2.0])
    estimate = estimate_koopman(StreamWindow.from_array(geometric, dt=1.0))
    assert estimate.rank == 1
    np.testing.assert_allclose(estimate.operator @ np.array([1.0, 2.0]), [0.9, 1.8], atol=1e-10)


def test_window_rejects_uneven_spacing():
    frames = (MeasurementFrame(0.0, [0.0, 1.0]), MeasurementFrame(1.0, [0.0, 1.0]), MeasurementFrame(2.5, [0.0, 1.0]))
    with pytest.raises(IrregularSampling):
        StreamWindow(frames, dt=1.0)


def test_window_rejects_mixed_dimensions():
    frames = (MeasurementFrame(0.0, [0.0, 1.0]), MeasurementFrame(1.0, [0.0, 1.0, 2.0]))
    with pytest.raises(DimensionMismatch):
        StreamWindow(frames, dt=1.0)


def test_frames_are_read_only():
    frame = MeasurementFrame(0.0, [1.0, 2.0])
    with pytest.raises(ValueError):
        frame.values[0] = 5.0


def test_damped_oscillation_eigenvalues_are_recovered():
    radius, angle = 0.95, 0.3
    window = StreamWindow.from_array(damped_oscillation(radius, angle, 11), dt=1.0 / 30.0)
    modes = decompose_modes(window)
    assert modes.n_modes == 10
    expected = radius * np.exp(1j * angle)
    np.testing.assert_allclose(modes.eigenvalues[0], expected, atol=1e-8)
    np.testing.assert_allclose(modes.eigenvalues[1], np.conj(expected), atol=1e-8)
    assert not np.any(modes.modes[:, 2:])
    assert modes.residual < 1e-8


def test_conjugate_modes_have_mirrored_amplitudes():
    modes = decompose_modes(StreamWindow.from_array(damped_oscillation(0.9, 0.5, 8), dt=1.0))
    np.testing.assert_array_equal(modes.modes[:, 1], np.conj(modes.modes[:, 0]))


def test_modes_sum_to_the_anchor_frame():
    states = damped_oscillation(0.97, 0.2, 9)
    modes = decompose_modes(StreamWindow.from_array(states, dt=1.0))
    np.testing.assert_allclose(modes.modes.sum(axis=1).real, states[0], atol=1e-10)
    np.testing.assert_allclose(modes.reconstruct(9), states, atol=1e-10)


def test_noisy_oscillation_eigenvalues_stay_close():
    radius, angle = 0.95, 0.3
    rng = np.random.default_rng(3)
    states = damped_oscillation(radius, angle, 41) + 1e-4 * rng.standard_normal((41, 2))
    modes = decompose_modes(StreamWindow.from_array(states, dt=1.0))
    expected = radius * np.exp(1j * angle)
    assert abs(modes.eigenvalues[0] - expected) <= 1e-2


def test_growth_rate_and_frequency_read_the_eigenvalue():
    dt = 1.0 / 30.0
    modes = decompose_modes(StreamWindow.from_array(damped_oscillation(0.95, 0.3, 11), dt=dt))
    assert modes.growth_rates()[0] == pytest.approx(np.log(0.95) / dt, rel=1e-8)
    assert modes.frequencies()[0] == pytest.approx(0.3 / (2 * np.pi * dt), rel=1e-8)


def test_single_mode_of_geometric_decay():
    geometric = 0.9 ** np.arange(8)[:, np.newaxis] * np.array([1.0, 2.0])
    modes = decompose_modes(StreamWindow.from_array(geometric, dt=1.0))
    assert modes.eigenvalues[0] == pytest.approx(0.9)
    np.testing.assert_allclose(modes.modes[:, 0], [1.0, 2.0], atol=1e-8)


def test_anchor_moves_past_leading_zero_frames():
    decaying = 0.9 ** np.arange(7)[:, np.newaxis] * np.array([1.0, 2.0])
    snapshots = np.vstack([np.zeros((3, 2)), decaying])
    modes = decompose_snapshots(snapshots)
    assert modes.anchor == 3
    np.testing.assert_allclose(modes.modes[:, 0], [1.0, 2.0], atol=1e-8)
    assert modes.residual < 1e-8


def test_zero_window_has_zero_modes():
    modes = decompose_modes(StreamWindow.from_array(np.zeros((5, 3)), dt=1.0))
    assert modes.modes.shape == (3, 4)
    assert not np.any(modes.modes)
    assert modes.residual == 0.0


def test_uneven_spacing_is_a_koopwatch_error():
    frames = (MeasurementFrame(0.0, [0.0, 1.0]), MeasurementFrame(0.5, [0.0, 1.0]))
    with pytest.raises(KoopWatchError):
        StreamWindow(frames, dt=1.0)
    with pytest.raises(KoopWatchError):
        StreamWindow(frames, dt=-0.5)


def test_roundoff_frames_count_as_zero():
    rng = np.random.default_rng(11)
    values = 6e-16 * rng.standard_normal((108, 20))
    event = rng.standard_normal(20)
    values[-2] = 0.07 * event
    values[-1] = 0.14 * event
    estimate = estimate_koopman(StreamWindow.from_array(values, dt=1.0 / 30.0))
    assert estimate.rank == 1
    assert np.linalg.norm(estimate.operator, 2) == pytest.approx(2.0, rel=1e-8)

    predicted = np.array([frame.values for frame in predict(estimate, MeasurementFrame(0.0, values[-1]), 13)])
    assert np.all(np.isfinite(predicted))
    np.testing.assert_allclose(predicted[-1], 0.14 * 2.0 ** 13 * event, rtol=1e-8)


@pytest.mark.parametrize("scale", [1e-6, 1e6])
def test_operator_rank_does_not_depend_on_the_data_scale(scale):
    system, start = stable_symmetric_system(4, seed=2)
    states = trajectory(system, start, 40)
    base = estimate_koopman(StreamWindow.from_array(states, dt=0.1))
    scaled = estimate_koopman(StreamWindow.from_array(scale * states, dt=0.1))
    assert scaled.rank == base.rank
    np.testing.assert_allclose(scaled.operator, base.operator, atol=1e-8)


@pytest.mark.parametrize("scale", [1e-6, 1e6])
def test_modes_scale_with_the_window(scale):
    states = damped_oscillation(0.95, 0.3, 11)
    base = decompose_modes(StreamWindow.from_array(states, dt=1.0))
    scaled = decompose_modes(StreamWindow.from_array(scale * states, dt=1.0))
    np.testing.assert_allclose(scaled.eigenvalues, base.eigenvalues, atol=1e-10)
    np.testing.assert_allclose(scaled.modes / scale, base.modes, atol=1e-8)
    assert scaled.residual < 1e-8


def test_window_below_the_noise_floor_has_zero_modes():
    rng = np.random.default_rng(4)
    modes = decompose_modes(StreamWindow.from_array(1e-13 * rng.standard_normal((7, 4)), dt=1.0))
    assert not np.any(modes.modes)
    assert not np.any(modes.eigenvalues)


def test_overflowing_prediction_is_reported():
    estimate = KoopmanEstimate(1e200 * np.eye(2), 2, 0.0, 1.0)
    with pytest.raises(NumericalFailure, match="step 2 of 3"):
        predict(estimate, MeasurementFrame(0.0, [1.0, 1.0]), 3)


def test_non_finite_error_window_is_reported():
    values = np.ones((4, 2))
    values[2, 1] = np.nan
    with pytest.raises(NumericalFailure):
        decompose_snapshots(values)
