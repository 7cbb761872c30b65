"""Two-state telegraph path generation and band-limited noise synthesis.

Generates ground-truth continuous-time Markov telegraph signals and adds
calibrated Gaussian noise with a specified 3 dB bandwidth, for use as
known-truth input when calibrating the jump-detection pipeline.
"""
from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field

import numpy as np

STATE_A = "A"  # low level
STATE_B = "B"  # high level

TRACE_MAGIC = b"ZTRC"
TRACE_VERSION = 1


class ParameterError(ValueError):
    """Invalid physical or numerical parameter."""


@dataclass
class Trace:
    """Uniformly sampled voltage record.

    samples are in arbitrary units, dt in microseconds.  seed records the
    RNG seed the trace was generated from (0 for external data).
    """

    samples: np.ndarray
    dt: float = 0.01
    seed: int = 0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float)
        if self.samples.size == 0:
            raise ParameterError("trace must contain at least one sample")
        if self.dt <= 0:
            raise ParameterError("dt must be positive")

    @property
    def duration(self) -> float:
        return self.samples.size * self.dt

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.samples.size) * self.dt


@dataclass
class RtsParams:
    """Parameters of a noisy random telegraph signal.

    Rates are in 1/us, the noise bandwidth in MHz (= 1/us), the sample
    rate in samples per us.
    """

    gamma_a: float
    gamma_b: float
    level_a: float = -1.0
    level_b: float = 1.0
    snr: float = 3.0
    noise_bw_3db: float = 14.0
    sample_rate: float = 100.0
    duration: float = 10.0

    def __post_init__(self):
        if self.gamma_a <= 0 or self.gamma_b <= 0:
            raise ParameterError("transition rates must be positive")
        if self.level_a == self.level_b:
            raise ParameterError("state levels must differ")
        if self.snr <= 0:
            raise ParameterError("snr must be positive")
        if not 0 < self.noise_bw_3db < self.sample_rate / 2:
            raise ParameterError("noise bandwidth must lie below Nyquist")
        if self.duration <= 0:
            raise ParameterError("duration must be positive")

    @property
    def dt(self) -> float:
        return 1.0 / self.sample_rate

    @property
    def n_samples(self) -> int:
        return int(round(self.duration * self.sample_rate))


@dataclass
class StatePath:
    """Continuous-time two-state path: initial state plus ordered transitions."""

    transitions: list  # list of (time_us, new_state)
    initial_state: str
    duration: float

    def __post_init__(self):
        times = [t for t, _ in self.transitions]
        if any(t2 <= t1 for t1, t2 in zip(times, times[1:])):
            raise ParameterError("transition times must be strictly increasing")
        if times and (times[0] < 0 or times[-1] > self.duration):
            raise ParameterError("transitions must lie within [0, duration]")

    def state_at(self, t: float) -> str:
        state = self.initial_state
        for tt, new in self.transitions:
            if tt > t:
                break
            state = new
        return state

    def sample_states(self, dt: float, n_samples: int) -> np.ndarray:
        """Boolean array, True where state B occupies time k*dt (point sampling)."""
        out = np.empty(n_samples, dtype=bool)
        state = self.initial_state == STATE_B
        k = 0
        for tt, new in self.transitions:
            k_next = min(n_samples, int(np.ceil(tt / dt)))
            out[k:k_next] = state
            state = new == STATE_B
            k = k_next
        out[k:] = state
        return out

    def dwell_times(self) -> tuple[np.ndarray, np.ndarray]:
        """(durations, states_bool) of all dwells; the final one is truncated."""
        times = np.array([0.0] + [t for t, _ in self.transitions] + [self.duration])
        durations = np.diff(times)
        states = np.empty(len(durations), dtype=bool)
        s = self.initial_state == STATE_B
        for i in range(len(durations)):
            states[i] = s
            s = not s
        return durations, states


def _rng(seed) -> np.random.Generator:
    return np.random.default_rng(seed)


def gen_state_path(params: RtsParams, seed, initial_state: str | None = None) -> StatePath:
    """Draw a continuous-time two-state Markov path.

    Dwells in A are Exp(gamma_a), dwells in B are Exp(gamma_b).  The
    initial state is drawn from the stationary distribution unless forced.
    """
    rng = _rng(seed)
    ga, gb = params.gamma_a, params.gamma_b
    if initial_state is None:
        p_a = gb / (ga + gb)
        state = STATE_A if rng.random() < p_a else STATE_B
    else:
        state = initial_state
    first_state = state
    transitions = []
    t = 0.0
    while True:
        rate = ga if state == STATE_A else gb
        t += rng.exponential(1.0 / rate)
        if t >= params.duration:
            break
        state = STATE_B if state == STATE_A else STATE_A
        transitions.append((t, state))
    return StatePath(transitions, first_state, params.duration)


def synth_noise(n_samples: int, dt: float, noise_bw_3db: float, seed) -> np.ndarray:
    """Zero-mean Gaussian noise, unit variance, 3 dB point at noise_bw_3db.

    White noise is shaped with a zero-phase Gaussian frequency response
    |H(f)| = 2^(-(f/f3)^2 / 2), so the power spectrum is down by half at
    f3 = noise_bw_3db.  The output is rescaled by the analytic filter gain
    so the ensemble variance is exactly 1.
    """
    if n_samples <= 0:
        raise ParameterError("n_samples must be positive")
    nyquist = 0.5 / dt
    if noise_bw_3db >= nyquist:
        raise ParameterError("noise bandwidth must be below Nyquist")
    rng = _rng(seed)
    white = rng.standard_normal(n_samples)
    freqs = np.fft.rfftfreq(n_samples, d=dt)
    h = np.exp(-0.5 * np.log(2) * (freqs / noise_bw_3db) ** 2)
    shaped = np.fft.irfft(np.fft.rfft(white) * h, n=n_samples)
    # Parseval: variance gain of the zero-phase filter.
    gain2 = (h[0] ** 2 + 2 * np.sum(h[1:-1] ** 2) + (h[-1] ** 2 if n_samples % 2 == 0 else 2 * h[-1] ** 2)) / n_samples
    return shaped / np.sqrt(gain2)


def noise_sigma_for_snr(params: RtsParams) -> float:
    """Noise standard deviation giving the requested raw SNR.

    With ideal Gaussian peak statistics (HWHM w = sqrt(2 ln 2) sigma) the
    SNR definition sqrt(2 ln 2) (Vh - Vl) / (wh + wl) reduces to
    |level_b - level_a| / (2 sigma).
    """
    return abs(params.level_b - params.level_a) / (2.0 * params.snr)


def gen_noisy_trace(params: RtsParams, seed) -> tuple[Trace, StatePath]:
    """Noisy telegraph trace plus its ground-truth state path."""
    ss = seed if isinstance(seed, np.random.SeedSequence) \
        else np.random.SeedSequence(seed)
    path_seed, noise_seed = ss.spawn(2)
    path = gen_state_path(params, path_seed)
    n = params.n_samples
    is_b = path.sample_states(params.dt, n)
    levels = np.where(is_b, params.level_b, params.level_a)
    noise = synth_noise(n, params.dt, params.noise_bw_3db, noise_seed)
    samples = levels + noise_sigma_for_snr(params) * noise
    trace = Trace(samples, dt=params.dt, seed=seed if np.isscalar(seed) else 0,
                  meta={"gamma_a": params.gamma_a, "gamma_b": params.gamma_b,
                        "snr": params.snr})
    return trace, path


def write_trace(path, trace: Trace) -> None:
    """Binary trace format: ZTRC header then little-endian f64 samples."""
    with open(path, "wb") as f:
        f.write(TRACE_MAGIC)
        f.write(struct.pack("<IQdQ", TRACE_VERSION, trace.samples.size,
                            trace.dt, int(trace.seed)))
        f.write(trace.samples.astype("<f8").tobytes())


def read_trace(path) -> Trace:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != TRACE_MAGIC:
            raise ParameterError(f"bad trace magic {magic!r}")
        version, n, dt, seed = struct.unpack("<IQdQ", f.read(4 + 8 + 8 + 8))
        if version != TRACE_VERSION:
            raise ParameterError(f"unsupported trace version {version}")
        samples = np.frombuffer(f.read(8 * n), dtype="<f8")
    return Trace(samples.copy(), dt=dt, seed=seed)


def export_csv(path, trace: Trace) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["time_us", "voltage"])
        for t, v in zip(trace.times, trace.samples):
            w.writerow([f"{t:.6f}", repr(v)])
