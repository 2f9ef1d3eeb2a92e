"""Synthetic arc-fault current waveforms and the dataset transforms applied to them.

Waveforms are sampled at a base period of 5e-3 ms (200 kHz), so one 50 Hz
mains cycle spans 4000 samples.  Arc faults are injected as short events that
start at a current zero crossing and cover part of the following half cycle;
the returned mask flags exactly the samples of those events.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

BASE_PERIOD_MS = 5e-3
MAINS_HZ = 50.0
NORMAL_CLASS = 0
ARC_CLASS = 1
CLASS_NAMES = ("normal", "arc")
DOWNSAMPLE_FACTORS = (1, 2, 5, 10, 20)


@dataclass(frozen=True)
class Waveform:
    samples: np.ndarray
    sample_period: float
    metadata: str = ""

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1 or samples.size == 0:
            raise ValueError("waveform samples must be a nonempty 1-D sequence")
        if not np.all(np.isfinite(samples)):
            raise ValueError("waveform samples must be finite")
        if not self.sample_period > 0:
            raise ValueError(f"sample_period must be > 0, got {self.sample_period}")
        object.__setattr__(self, "samples", samples)

    def __len__(self):
        return self.samples.size


@dataclass(frozen=True)
class ArcMask:
    flags: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "flags", np.asarray(self.flags, dtype=bool).reshape(-1))

    def __len__(self):
        return self.flags.size

    def spans(self) -> list[tuple[int, int]]:
        """Run-length encode the flags as ``(start, length)`` pairs."""
        f = self.flags.astype(np.int8)
        edges = np.diff(np.concatenate(([0], f, [0])))
        starts = np.flatnonzero(edges == 1)
        ends = np.flatnonzero(edges == -1)
        return [(int(s), int(e - s)) for s, e in zip(starts, ends)]

    @classmethod
    def from_spans(cls, length: int, spans) -> "ArcMask":
        flags = np.zeros(length, dtype=bool)
        for start, run in spans:
            if start < 0 or run < 0 or start + run > length:
                raise ValueError(f"span ({start}, {run}) exceeds mask length {length}")
            flags[start:start + run] = True
        return cls(flags)


@dataclass(frozen=True)
class SignalWindow:
    samples: np.ndarray
    sample_period: float
    label: int
    arc_mask: ArcMask
    load: str = ""
    start: int = 0

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        object.__setattr__(self, "samples", samples)
        if not isinstance(self.arc_mask, ArcMask):
            object.__setattr__(self, "arc_mask", ArcMask(self.arc_mask))
        if len(self.arc_mask) != samples.size:
            raise ValueError(
                f"mask length {len(self.arc_mask)} != window length {samples.size}")
        if self.label < 0:
            raise ValueError(f"label must be >= 0, got {self.label}")
        if not self.sample_period > 0:
            raise ValueError(f"sample_period must be > 0, got {self.sample_period}")

    def __len__(self):
        return self.samples.size


@dataclass(frozen=True)
class Spectrum:
    magnitudes: np.ndarray
    bin_width: float

    @property
    def frequencies(self) -> np.ndarray:
        return np.arange(self.magnitudes.size) * self.bin_width


@dataclass(frozen=True)
class LoadProfile:
    """Phenomenological description of one load and its arc signature.

    Amplitudes are relative to ``amplitude`` (peak of the 50 Hz component).
    ``arc_fraction`` is the share of the record occupied by the arc phase;
    inside it each half cycle carries an arc event with probability
    ``event_rate``.  An event covers ``event_span`` of its half cycle.
    """

    name: str = "resistive"
    amplitude: float = 10.0
    harmonics: tuple[tuple[int, float, float], ...] = ()
    ripple: float = 0.0
    ripple_hz: float = 20e3
    arc_fraction: float = 0.0
    event_rate: float = 0.6
    event_span: float = 0.5
    shoulder: float = 0.25
    peak_distortion: float = 0.0
    spike_rate: float = 0.0
    spike_amplitude: float = 0.0
    burst_amplitude: float = 0.0
    burst_hz: float = 4e3
    burst_span: float = 1.0
    burst_noise: float = 0.5
    spike_width: int = 30
    triangle: bool = False

    def validate(self) -> None:
        problems = []
        for name in ("amplitude", "ripple", "ripple_hz", "peak_distortion", "spike_rate",
                     "spike_amplitude", "burst_amplitude", "burst_hz", "burst_noise", "spike_width"):
            if getattr(self, name) < 0:
                problems.append(f"{name} must be >= 0")
        for name in ("arc_fraction", "event_rate", "event_span", "shoulder",
                     "peak_distortion", "burst_span"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                problems.append(f"{name} must lie in [0, 1]")
        for order, rel, _ in self.harmonics:
            if order < 1 or rel < 0:
                problems.append(f"harmonic ({order}, {rel}) needs order >= 1, amplitude >= 0")
        if problems:
            raise ValueError(f"invalid load profile {self.name!r}: " + "; ".join(problems))

    @classmethod
    def from_dict(cls, d: dict) -> "LoadProfile":
        d = dict(d)
        if "harmonics" in d:
            d["harmonics"] = tuple(tuple(h) for h in d["harmonics"])
        return cls(**d)


def pure_sine(amplitude: float = 1.0) -> LoadProfile:
    return LoadProfile(name="sine", amplitude=amplitude)


def default_profiles() -> tuple[LoadProfile, LoadProfile]:
    """The two desk-scale combined loads.

    The first has switch-mode ripple and turns into a distorted periodic shape
    under arcing; the second is a smooth sine whose arc current approaches a
    triangle with transient spikes.
    """
    # sparse, short arc events; the evidence is a
    # clipped peak plus a 2 kHz burst and spikes confined to the event
    arc = dict(arc_fraction=0.8, event_rate=0.1, event_span=0.5, shoulder=0.0,
               peak_distortion=0.3, spike_amplitude=0.6, burst_amplitude=1.5,
               burst_hz=2e3, burst_noise=0.0)
    switch_mode = LoadProfile(
        name="resistive+compressor+smps",
        amplitude=8.0,
        harmonics=((3, 0.12, 0.3), (5, 0.06, 1.1)),
        ripple=0.02,
        spike_rate=1.0,
        **arc,
    )
    vacuum = LoadProfile(
        name="resistive+vacuum",
        amplitude=10.0,
        harmonics=((3, 0.03, 0.0),),
        spike_rate=1.5,
        triangle=True,
        **arc,
    )
    return switch_mode, vacuum


def _triangle(phase: np.ndarray) -> np.ndarray:
    # unit-amplitude triangle in phase with sin(phase)
    return (2.0 / np.pi) * np.arcsin(np.sin(phase))


def synthesize(profile: LoadProfile, duration: int, seed: int,
               sample_period: float = BASE_PERIOD_MS) -> tuple[Waveform, ArcMask]:
    """Generate one record of ``duration`` samples and its arc-event mask."""
    profile.validate()
    samples_per_cycle = 1.0 / (MAINS_HZ * sample_period * 1e-3)
    if duration < samples_per_cycle:
        raise ValueError(
            f"duration {duration} is shorter than one mains cycle ({samples_per_cycle:g} samples)")
    rng = np.random.default_rng(seed)
    n = int(duration)
    t = np.arange(n) * (sample_period * 1e-3)  # seconds
    phase0 = rng.uniform(0.0, 2 * np.pi)
    phase = 2 * np.pi * MAINS_HZ * t + phase0

    base = np.sin(phase)
    for order, rel, ph in profile.harmonics:
        base = base + rel * np.sin(order * phase + ph)
    if profile.ripple:
        base = base + profile.ripple * np.sin(2 * np.pi * profile.ripple_hz * t)

    mask = np.zeros(n, dtype=bool)
    shaped = base.copy()
    if profile.arc_fraction > 0:
        arc_len = int(round(profile.arc_fraction * n))
        onset = int(rng.integers(0, n - arc_len + 1))
        half = samples_per_cycle / 2.0
        # zero crossings of the fundamental, in samples
        k = np.arange(np.ceil(phase0 / np.pi), np.ceil((phase[-1] + np.pi) / np.pi))
        starts = (k * np.pi - phase0) / np.pi * half
        span = max(1, int(round(profile.event_span * half)))
        for s in starts:
            lo = int(np.ceil(s))
            if lo < onset or lo + span > onset + arc_len:
                continue
            if rng.random() >= profile.event_rate:
                continue
            hi = lo + span
            _inject_event(shaped, phase, lo, hi, half, profile, rng, t)
            mask[lo:hi] = True

    samples = profile.amplitude * shaped
    return Waveform(samples, sample_period, profile.name), ArcMask(mask)


def _inject_event(x: np.ndarray, phase: np.ndarray, lo: int, hi: int, half: float,
                  profile: LoadProfile, rng: np.random.Generator, t: np.ndarray) -> None:
    seg = slice(lo, hi)
    if profile.triangle:
        x[seg] = _triangle(phase[seg])
    if profile.peak_distortion:
        cap = 1.0 - profile.peak_distortion
        x[seg] = np.clip(x[seg], -cap, cap) * (1.0 + 0.5 * profile.peak_distortion)
    if profile.shoulder:
        # flat spot after the zero crossing
        flat = min(hi - lo, max(1, int(profile.shoulder * half)))
        x[lo:lo + flat] = 0.0
    # re-ignition: the high-frequency content sits right after the flat spot
    # and lasts burst_span of the event
    b0 = lo + (flat if profile.shoulder else 0)
    m = min(hi - b0, max(1, int(round(profile.burst_span * (hi - lo)))))
    if m < 1:
        return
    if profile.burst_amplitude:
        tt = t[b0:b0 + m] - t[b0]
        ramp = max(1, int(0.1 * m))
        idx = np.arange(m)
        envelope = np.minimum(1.0, np.minimum(idx + 1, m - idx) / ramp)
        x[b0:b0 + m] += profile.burst_amplitude * envelope * (
            np.sin(2 * np.pi * profile.burst_hz * tt + rng.uniform(0, 2 * np.pi))
            + profile.burst_noise * rng.standard_normal(m))
    if profile.spike_rate and profile.spike_amplitude:
        count = rng.poisson(profile.spike_rate * 2.0) + 1
        width = min(profile.spike_width, hi - b0)
        for _ in range(count):
            c = b0 + int(rng.integers(0, max(1, m - width + 1)))
            sign = rng.choice((-1.0, 1.0))
            x[c:c + width] += sign * profile.spike_amplitude * np.hanning(width + 2)[1:-1]


def window(w: Waveform, mask: ArcMask, width: int = 10000, step: int = 5000,
           min_arc_fraction: float = 0.1) -> list[SignalWindow]:
    """Cut ``w`` into overlapping windows with starts ``0, step, 2*step, ...``.

    Windows without masked samples are labelled normal; windows whose masked
    share reaches ``min_arc_fraction`` are labelled arc; the rest are dropped.
    Pass ``min_arc_fraction=None`` to keep every window (arc if any sample is
    masked).
    """
    n = len(w)
    if len(mask) != n:
        raise ValueError(f"mask length {len(mask)} != waveform length {n}")
    if width < 1 or width > n:
        raise ValueError(f"window width {width} must lie in [1, {n}]")
    if step < 1:
        raise ValueError(f"step must be >= 1, got {step}")
    out = []
    for start in range(0, n - width + 1, step):
        flags = mask.flags[start:start + width]
        share = flags.mean()
        if share == 0:
            label = NORMAL_CLASS
        elif min_arc_fraction is None or share >= min_arc_fraction:
            label = ARC_CLASS
        else:
            continue
        out.append(SignalWindow(w.samples[start:start + width].copy(), w.sample_period, label,
                                ArcMask(flags.copy()), w.metadata, start))
    return out


def window_starts(length: int, width: int, step: int) -> list[int]:
    return list(range(0, length - width + 1, step))


def _moving_average(x: np.ndarray, width: int) -> np.ndarray:
    if width <= 1:
        return x.copy()
    kernel = np.ones(width) / width
    padded = np.pad(x, (width // 2, width - 1 - width // 2), mode="edge")
    return np.convolve(padded, kernel, mode="valid")


def downsample(win: SignalWindow, factor: int, prefilter: bool = False) -> SignalWindow:
    """Keep every ``factor``-th sample starting at index 0."""
    if int(factor) != factor or factor < 1:
        raise ValueError(f"downsample factor must be a positive integer, got {factor}")
    factor = int(factor)
    x = _moving_average(win.samples, factor) if prefilter else win.samples
    return replace(win, samples=x[::factor].copy(), sample_period=win.sample_period * factor,
                   arc_mask=ArcMask(win.arc_mask.flags[::factor].copy()))


def add_noise(win: SignalWindow, snr_db: float, seed: int) -> SignalWindow:
    """Add white Gaussian noise at ``snr_db`` relative to the window's mean power.

    The noise is ``sqrt(P_n) * z`` with ``z`` drawn from ``seed`` alone, so the
    same seed gives the same noise shape at every SNR.
    """
    x = win.samples
    if x.size == 0:
        raise ValueError("cannot add noise to an empty window")
    power = float(np.mean(x * x))
    if power == 0.0:
        raise ValueError("signal power is zero; SNR is undefined")
    noise_power = power / 10.0 ** (snr_db / 10.0)
    z = np.random.default_rng(seed).standard_normal(x.size)
    return replace(win, samples=x + np.sqrt(noise_power) * z)


def fft_magnitude(win: SignalWindow) -> Spectrum:
    """Unnormalised one-sided magnitude spectrum; bin width in Hz."""
    x = win.samples
    if x.size < 2:
        raise ValueError("fft needs at least 2 samples")
    mags = np.abs(np.fft.rfft(x))
    return Spectrum(mags, 1.0 / (x.size * win.sample_period * 1e-3))
