import numpy as np
import pytest
from hypothesis import given, strategies as st

from xsei.signal import (ARC_CLASS, NORMAL_CLASS, ArcMask, LoadProfile, Waveform, add_noise,
                         default_profiles, downsample, fft_magnitude, pure_sine, synthesize,
                         window, window_starts)

from conftest import make_window


def dft_oracle(x):
    n = len(x)
    k = np.arange(n)
    return np.exp(-2j * np.pi * np.outer(k, k) / n) @ x


# --- synthesis -----------------------------------------------------------------------------

def test_no_arc_gives_empty_mask():
    w, m = synthesize(replace_arc(default_profiles()[0], 0.0), 20000, seed=3)
    assert not m.flags.any()
    assert len(w) == len(m) == 20000


def replace_arc(p, frac):
    from dataclasses import replace
    return replace(p, arc_fraction=frac)


@pytest.mark.parametrize("profile", default_profiles(), ids=lambda p: p.name)
def test_synthesis_is_deterministic(profile):
    a = synthesize(profile, 40000, seed=11)
    b = synthesize(profile, 40000, seed=11)
    assert a[0].samples.tobytes() == b[0].samples.tobytes()
    assert a[1].flags.tobytes() == b[1].flags.tobytes()
    c = synthesize(profile, 40000, seed=12)
    assert c[0].samples.tobytes() != a[0].samples.tobytes()


def test_arc_events_change_the_waveform_only_under_the_mask():
    prof = default_profiles()[0]
    arc, mask = synthesize(prof, 100000, seed=5)
    calm, _ = synthesize(replace_arc(prof, 0.0), 100000, seed=5)
    assert mask.flags.any()
    diff = np.abs(arc.samples - calm.samples)
    assert diff[~mask.flags].max() == 0.0
    assert diff[mask.flags].max() > 0.0


def test_pure_sine_spectrum_peaks_at_mains_bin():
    w, _ = synthesize(pure_sine(3.0), 8000, seed=2)   # exactly two cycles
    spec = fft_magnitude(make_window(w.samples))
    peak = int(np.argmax(spec.magnitudes))
    assert spec.frequencies[peak] == pytest.approx(50.0)
    others = np.delete(spec.magnitudes, peak)
    assert others.max() < 1e-6 * spec.magnitudes[peak]


@pytest.mark.parametrize("field,value", [("amplitude", -1.0), ("arc_fraction", 1.5),
                                         ("arc_fraction", -0.1), ("event_rate", 2.0),
                                         ("burst_amplitude", -0.5)])
def test_invalid_profile_rejected(field, value):
    from dataclasses import replace
    with pytest.raises(ValueError, match=field):
        synthesize(replace(pure_sine(), **{field: value}), 8000, seed=0)


def test_duration_shorter_than_a_cycle_rejected():
    with pytest.raises(ValueError, match="mains cycle"):
        synthesize(pure_sine(), 3999, seed=0)


def test_profile_round_trips_through_dict():
    from dataclasses import asdict
    for p in default_profiles():
        assert LoadProfile.from_dict(asdict(p)) == p


# --- windowing -----------------------------------------------------------------------------

def test_window_count_and_starts():
    w = Waveform(np.arange(20000.0), 5e-3)
    wins = window(w, ArcMask(np.zeros(20000)), 10000, 5000)
    assert [x.start for x in wins] == [0, 5000, 10000]


def test_window_length_equal_to_record_gives_one():
    w = Waveform(np.ones(10000), 5e-3)
    assert len(window(w, ArcMask(np.zeros(10000)), 10000, 5000)) == 1


def test_window_wider_than_record_rejected():
    w = Waveform(np.ones(100), 5e-3)
    with pytest.raises(ValueError):
        window(w, ArcMask(np.zeros(100)), 200, 10)


def test_window_labels():
    flags = np.zeros(30000, dtype=bool)
    flags[12000:13500] = True       # 15% of the windows starting at 5000 and 10000
    flags[27000:27400] = True       # 4% of the last window: dropped
    w = Waveform(np.ones(30000), 5e-3)
    wins = window(w, ArcMask(flags), 10000, 5000, min_arc_fraction=0.1)
    by_start = {x.start: x.label for x in wins}
    assert by_start[0] == NORMAL_CLASS
    assert by_start[5000] == ARC_CLASS
    assert by_start[10000] == ARC_CLASS
    assert 20000 not in by_start
    every = window(w, ArcMask(flags), 10000, 5000, min_arc_fraction=None)
    assert {x.start: x.label for x in every}[20000] == ARC_CLASS


@given(length=st.integers(1, 400), width=st.integers(1, 400), step=st.integers(1, 60))
def test_window_starts_stay_in_bounds(length, width, step):
    if width > length:
        return
    starts = window_starts(length, width, step)
    assert len(starts) == (length - width) // step + 1
    assert all(0 <= s and s + width <= length for s in starts)
    assert starts == list(range(0, starts[-1] + 1, step))


# --- downsampling --------------------------------------------------------------------------

def test_downsample_examples():
    win = make_window([1.0, 2.0, 3.0, 4.0])
    assert downsample(win, 2).samples.tolist() == [1.0, 3.0]
    same = downsample(win, 1)
    assert same.samples.tolist() == win.samples.tolist() and same.sample_period == win.sample_period
    assert downsample(make_window(np.ones(10)), 5).sample_period == pytest.approx(2.5e-2)


def test_downsample_rejects_bad_factor():
    with pytest.raises(ValueError):
        downsample(make_window(np.ones(4)), 0)


@given(n=st.integers(1, 300), a=st.integers(1, 6), b=st.integers(1, 6))
def test_downsample_composes(n, a, b):
    rng = np.random.default_rng(n)
    win = make_window(rng.normal(size=n), flags=rng.random(n) < 0.3)
    two = downsample(downsample(win, a), b)
    one = downsample(win, a * b)
    assert np.array_equal(two.samples, one.samples)
    assert np.array_equal(two.arc_mask.flags, one.arc_mask.flags)
    assert two.sample_period == pytest.approx(one.sample_period)


def test_prefilter_is_optional():
    x = np.tile([1.0, -1.0], 50)
    assert np.all(downsample(make_window(x), 2).samples == 1.0)
    assert np.allclose(downsample(make_window(x), 2, prefilter=True).samples[1:-1], 0.0)


# --- noise ---------------------------------------------------------------------------------

def test_noise_power_at_zero_db():
    x = np.sin(np.linspace(0, 40 * np.pi, 20000)) * 5
    noisy = add_noise(make_window(x), 0.0, seed=9)
    measured = np.mean((noisy.samples - x) ** 2)
    assert measured == pytest.approx(np.mean(x * x), rel=0.05)


def test_noise_vanishes_at_high_snr():
    x = np.cos(np.linspace(0, 10, 5000))
    noisy = add_noise(make_window(x), 300.0, seed=1)
    assert np.sqrt(np.mean((noisy.samples - x) ** 2)) < 1e-12 * np.sqrt(np.mean(x * x))


def test_noise_is_deterministic_and_preserves_label_and_mask():
    rng = np.random.default_rng(0)
    win = make_window(rng.normal(size=500), label=1, flags=rng.random(500) < 0.2)
    a, b = add_noise(win, 3.0, 42), add_noise(win, 3.0, 42)
    assert a.samples.tobytes() == b.samples.tobytes()
    assert a.label == win.label
    assert a.arc_mask.flags.tobytes() == win.arc_mask.flags.tobytes()


def test_noise_on_silent_window_rejected():
    with pytest.raises(ValueError, match="SNR"):
        add_noise(make_window(np.zeros(100)), 5.0, 0)


# --- spectrum ------------------------------------------------------------------------------

def test_constant_signal_spectrum():
    spec = fft_magnitude(make_window(np.full(64, -2.5)))
    assert spec.magnitudes[0] == pytest.approx(64 * 2.5)
    assert np.allclose(spec.magnitudes[1:], 0.0, atol=1e-9)


def test_exact_bin_sine():
    n, k = 128, 7
    spec = fft_magnitude(make_window(np.sin(2 * np.pi * k * np.arange(n) / n)))
    assert int(np.argmax(spec.magnitudes)) == k
    assert spec.bin_width == pytest.approx(1.0 / (n * 5e-3 * 1e-3))


@given(n=st.integers(2, 64), seed=st.integers(0, 10_000))
def test_fft_matches_dft_oracle(n, seed):
    x = np.random.default_rng(seed).normal(size=n)
    spec = fft_magnitude(make_window(x))
    expected = np.abs(dft_oracle(x))[: n // 2 + 1]
    assert spec.magnitudes.shape == (n // 2 + 1,)
    assert np.all(spec.magnitudes >= 0)
    scale = max(1.0, expected.max())
    assert np.max(np.abs(spec.magnitudes - expected)) / scale < 1e-9


@given(n=st.integers(2, 64), seed=st.integers(0, 10_000))
def test_fft_is_linear_before_magnitude(n, seed):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=n), rng.normal(size=n)
    assert np.allclose(dft_oracle(a + b), dft_oracle(a) + dft_oracle(b), atol=1e-9)
    assert np.allclose(np.fft.rfft(a + b), dft_oracle(a)[: n // 2 + 1] + dft_oracle(b)[: n // 2 + 1],
                       atol=1e-9)


def test_fft_needs_two_samples():
    with pytest.raises(ValueError):
        fft_magnitude(make_window([1.0]))


def test_waveform_validation():
    with pytest.raises(ValueError):
        Waveform(np.array([1.0, np.nan]), 5e-3)
    with pytest.raises(ValueError):
        Waveform(np.ones(3), 0.0)
    with pytest.raises(ValueError):
        Waveform(np.array([]), 5e-3)


@given(st.lists(st.booleans(), max_size=80))
def test_mask_spans_round_trip(flags):
    m = ArcMask(np.array(flags, dtype=bool))
    back = ArcMask.from_spans(len(flags), m.spans())
    assert np.array_equal(back.flags, m.flags)
