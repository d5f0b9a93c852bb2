import math

import numpy as np
import pytest
from scipy import signal as sp_signal

from magclimb.dsp import (
    FilterCoeffs,
    FilterSpec,
    NormParams,
    PreprocessSpec,
    design_butterworth,
    filter_response,
    filter_signal,
    magnitude_channel,
    minmax_normalize,
    preprocess_frame,
    window_segments,
    windows_to_csv,
    zscore_normalize,
)
from magclimb.dynamics import (ExcitationModel, SignalFrame, SimScenario,
                               simulate_response)
from magclimb.errors import ConfigurationError, DegenerateDataError


# ---------------------------------------------------------------------------
# filter design
# ---------------------------------------------------------------------------

def test_dc_gain_is_exactly_one():
    for order in (1, 2, 3, 4, 5, 8):
        coeffs = design_butterworth(FilterSpec(order, 10.0, 100.0))
        assert abs(filter_response(coeffs, 0.0, 100.0)) == pytest.approx(1.0, abs=1e-12)


def test_half_power_at_cutoff():
    coeffs = design_butterworth(FilterSpec(2, 10.0, 100.0))
    assert abs(filter_response(coeffs, 10.0, 100.0)) == pytest.approx(
        1.0 / math.sqrt(2.0), abs=1e-3)
    coeffs4 = design_butterworth(FilterSpec(4, 10.0, 100.0))
    assert abs(filter_response(coeffs4, 10.0, 100.0)) == pytest.approx(
        1.0 / math.sqrt(2.0), abs=1e-3)


def test_higher_order_rolls_off_faster():
    c2 = design_butterworth(FilterSpec(2, 10.0, 100.0))
    c4 = design_butterworth(FilterSpec(4, 10.0, 100.0))
    assert abs(filter_response(c4, 40.0, 100.0)) < abs(filter_response(c2, 40.0, 100.0))


def test_magnitude_monotone_decreasing():
    coeffs = design_butterworth(FilterSpec(4, 10.0, 100.0))
    freqs = np.linspace(0.0, 50.0, 200)
    mags = np.abs(filter_response(coeffs, freqs, 100.0))
    assert np.all(np.diff(mags) <= 1e-12)


@pytest.mark.parametrize("order,cutoff,fs", [(1, 5.0, 100.0), (2, 10.0, 100.0),
                                             (3, 12.0, 200.0), (4, 10.0, 100.0),
                                             (5, 0.3, 2.0), (6, 30.0, 100.0)])
def test_matches_reference_design(order, cutoff, fs):
    # independent oracle: scipy's Butterworth via the same bilinear route
    coeffs = design_butterworth(FilterSpec(order, cutoff, fs))
    freqs = np.linspace(0.0, fs / 2 * 0.999, 80)
    ours = np.abs(filter_response(coeffs, freqs, fs))
    sos = sp_signal.butter(order, cutoff, btype="low", fs=fs, output="sos")
    _, ref = sp_signal.sosfreqz(sos, worN=2 * np.pi * freqs / fs, fs=2 * np.pi)
    assert np.allclose(ours, np.abs(ref), atol=1e-9)


def test_sections_are_stable():
    for order in (1, 2, 4, 7, 10):
        for cutoff in (0.5, 10.0, 45.0):
            coeffs = design_butterworth(FilterSpec(order, cutoff, 100.0))
            for b0, b1, b2, a1, a2 in coeffs.sections:
                poles = np.roots([1.0, a1, a2])
                assert np.all(np.abs(poles) < 1.0)


def test_impulse_response_decays():
    coeffs = design_butterworth(FilterSpec(4, 10.0, 100.0))
    impulse = np.zeros(4000)
    impulse[0] = 1.0
    out = filter_signal(coeffs, impulse)
    assert np.all(np.abs(out[-100:]) < 1e-9)


def test_cutoff_must_be_below_nyquist():
    with pytest.raises(ConfigurationError):
        FilterSpec(4, 50.0, 100.0)
    with pytest.raises(ConfigurationError):
        FilterSpec(0, 10.0, 100.0)


def test_coeffs_json_round_trip():
    coeffs = design_butterworth(FilterSpec(5, 12.0, 100.0))
    back = FilterCoeffs.from_json(coeffs.to_json())
    assert back == coeffs


# ---------------------------------------------------------------------------
# filtering
# ---------------------------------------------------------------------------

def test_constant_input_settles_to_constant():
    coeffs = design_butterworth(FilterSpec(4, 10.0, 100.0))
    out = filter_signal(coeffs, np.full(600, 3.7))
    assert out[-1] == pytest.approx(3.7, rel=1e-9)


def test_zero_input_zero_output():
    coeffs = design_butterworth(FilterSpec(3, 10.0, 100.0))
    assert np.array_equal(filter_signal(coeffs, np.zeros(100)), np.zeros(100))


def test_filtering_preserves_length():
    coeffs = design_butterworth(FilterSpec(4, 10.0, 100.0))
    assert filter_signal(coeffs, np.ones(313)).shape == (313,)


def test_steady_state_sine_gain_matches_response():
    coeffs = design_butterworth(FilterSpec(4, 10.0, 100.0))
    fs = 100.0
    for freq in (2.0, 8.0, 10.0, 15.0, 25.0):
        n = 3000
        t = np.arange(n) / fs
        out = filter_signal(coeffs, np.sin(2 * np.pi * freq * t))
        tail = out[n // 2:]
        t_tail = t[n // 2:]
        amp = 2.0 * math.hypot(
            float(np.mean(tail * np.sin(2 * np.pi * freq * t_tail))),
            float(np.mean(tail * np.cos(2 * np.pi * freq * t_tail))))
        expected = abs(filter_response(coeffs, freq, fs))
        assert amp == pytest.approx(expected, rel=0.01)


def test_filtering_is_linear():
    coeffs = design_butterworth(FilterSpec(4, 10.0, 100.0))
    rng = np.random.default_rng(0)
    x = rng.standard_normal(400)
    y = rng.standard_normal(400)
    combined = filter_signal(coeffs, 2.5 * x - 1.3 * y)
    separate = 2.5 * filter_signal(coeffs, x) - 1.3 * filter_signal(coeffs, y)
    assert np.allclose(combined, separate, rtol=1e-9, atol=1e-12)


def test_matches_reference_filter_output():
    coeffs = design_butterworth(FilterSpec(4, 10.0, 100.0))
    rng = np.random.default_rng(1)
    x = rng.standard_normal(500)
    sos = sp_signal.butter(4, 10.0, btype="low", fs=100.0, output="sos")
    assert np.allclose(filter_signal(coeffs, x), sp_signal.sosfilt(sos, x),
                       atol=1e-10)


# ---------------------------------------------------------------------------
# normalization
# ---------------------------------------------------------------------------

def test_minmax_basic():
    out, params = minmax_normalize([2.0, 4.0, 6.0])
    assert np.allclose(out, [0.0, 0.5, 1.0])
    assert (params.x_min, params.x_max) == (2.0, 6.0)
    assert not params.degenerate


def test_minmax_degenerate_flag():
    out, params = minmax_normalize([5.0, 5.0, 5.0])
    assert np.array_equal(out, np.zeros(3))
    assert params.degenerate


def test_minmax_negative_values():
    out, _ = minmax_normalize([-1.0, 0.0, 3.0])
    assert np.allclose(out, [0.0, 0.25, 1.0])


def test_minmax_inverts_exactly():
    rng = np.random.default_rng(2)
    x = rng.uniform(-40, 25, size=300)
    out, params = minmax_normalize(x)
    recovered = out * (params.x_max - params.x_min) + params.x_min
    assert np.allclose(recovered, x, rtol=1e-12, atol=1e-12)


def test_minmax_reuses_params():
    _, params = minmax_normalize([0.0, 10.0])
    out, _ = minmax_normalize([5.0, 20.0], params)
    assert np.allclose(out, [0.5, 2.0])


def test_zscore_fit():
    out, params = zscore_normalize([1.0, 2.0, 3.0])
    assert np.allclose(out, [-1.224745, 0.0, 1.224745], atol=1e-6)
    assert params.std == pytest.approx(0.816497, abs=1e-6)
    assert abs(np.mean(out)) < 1e-12
    assert np.std(out) == pytest.approx(1.0, abs=1e-12)


def test_zscore_degenerate():
    out, params = zscore_normalize([4.0, 4.0])
    assert np.array_equal(out, np.zeros(2))
    assert params.degenerate


def test_zscore_identity_params():
    params = NormParams(mode="zscore", mean=0.0, std=1.0)
    x = np.array([3.0, -1.0, 0.5])
    out, _ = zscore_normalize(x, params)
    assert np.array_equal(out, x)


def test_normalize_rejects_empty():
    with pytest.raises(DegenerateDataError):
        minmax_normalize([])
    with pytest.raises(DegenerateDataError):
        zscore_normalize([])


# ---------------------------------------------------------------------------
# magnitude channel
# ---------------------------------------------------------------------------

def _frame(channels):
    n = len(next(iter(channels.values())))
    return SignalFrame(sample_rate_hz=10.0, timestamps=np.arange(n) / 10.0,
                       channels={k: np.asarray(v, dtype=float)
                                 for k, v in channels.items()})


def test_magnitude_three_axes():
    frame = _frame({"x": [3.0], "y": [4.0], "z": [0.0]})
    assert magnitude_channel(frame, ("x", "y", "z")) == pytest.approx([5.0])


def test_magnitude_two_axes():
    frame = _frame({"y": [0.6], "z": [0.8]})
    assert magnitude_channel(frame, ("y", "z")) == pytest.approx([1.0])


def test_magnitude_unknown_channel():
    frame = _frame({"x": [1.0]})
    with pytest.raises(KeyError):
        magnitude_channel(frame, ("x", "nope"))


def test_magnitude_rotation_invariant():
    rng = np.random.default_rng(7)
    vecs = rng.standard_normal((3, 50))
    base = _frame({"x": vecs[0], "y": vecs[1], "z": vecs[2]})
    expected = magnitude_channel(base, ("x", "y", "z"))
    for _ in range(10):
        q, r = np.linalg.qr(rng.standard_normal((3, 3)))
        rotated = q @ np.diag(np.sign(np.diag(r))) @ vecs
        frame = _frame({"x": rotated[0], "y": rotated[1], "z": rotated[2]})
        assert np.allclose(magnitude_channel(frame, ("x", "y", "z")), expected,
                           atol=1e-9)


def test_magnitude_of_static_gravity_is_constant():
    scenario = SimScenario(excitation_level=0, sensor_noise_std=0.0,
                           duration_s=4.0, seed=5,
                           excitation=ExcitationModel(ambient_std=0.0,
                                                      amp_drift_sigma=0.0))
    frame = simulate_response(scenario)
    mag = magnitude_channel(frame, ("body_ax", "body_ay", "body_az"))
    assert np.allclose(mag[100:], 9.81, atol=1e-6)


# ---------------------------------------------------------------------------
# windowing
# ---------------------------------------------------------------------------

def test_window_count():
    windows = window_segments(np.arange(10), 4, 2)
    assert len(windows) == 4
    assert np.array_equal(windows[1], [2, 3, 4, 5])


def test_window_exact_length():
    windows = window_segments(np.arange(8), 8, 3)
    assert len(windows) == 1


def test_window_partition():
    windows = window_segments(np.arange(12), 4, 4)
    assert np.array_equal(np.concatenate(windows), np.arange(12))


def test_window_too_long_gives_empty():
    assert window_segments(np.arange(3), 5, 1) == []


def test_window_slices_are_contiguous():
    x = np.random.default_rng(0).standard_normal(57)
    length, stride = 9, 4
    windows = window_segments(x, length, stride)
    assert len(windows) == (len(x) - length) // stride + 1
    for i, w in enumerate(windows):
        assert np.array_equal(w, x[i * stride:i * stride + length])


def test_window_rejects_bad_params():
    with pytest.raises(ConfigurationError):
        window_segments(np.arange(5), 0, 1)


# ---------------------------------------------------------------------------
# preprocessing pipeline
# ---------------------------------------------------------------------------

def test_preprocess_frame_end_to_end(tmp_path):
    frame = simulate_response(SimScenario(duration_s=6.0, seed=8))
    spec = PreprocessSpec(cutoff_hz=20.0, window_len=64, stride=32)
    windows, params = preprocess_frame(frame, spec,
                                       axes=("body_ax", "body_ay", "body_az"))
    assert windows and all(len(w) == 64 for w in windows)
    assert all(np.all((w >= 0) & (w <= 1)) for w in windows)
    assert params.mode == "minmax"
    windows_to_csv(windows, tmp_path / "w.csv")
    header = (tmp_path / "w.csv").read_text().splitlines()[0]
    assert header.startswith("window_id,s0,")


def test_preprocess_requires_axes():
    frame = simulate_response(SimScenario(duration_s=2.0, seed=8))
    with pytest.raises(ConfigurationError):
        preprocess_frame(frame, PreprocessSpec())
