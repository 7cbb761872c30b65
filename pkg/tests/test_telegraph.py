"""Telegraph path generation, band-limited noise, and trace I/O."""
import numpy as np
import pytest
from scipy import stats as sps

from zenojump.telegraph import (STATE_A, STATE_B, ParameterError, RtsParams,
                                StatePath, Trace, export_csv, gen_noisy_trace,
                                gen_state_path, noise_sigma_for_snr,
                                read_trace, synth_noise, write_trace)


def params(**kw):
    base = dict(gamma_a=1.0, gamma_b=1.0)
    base.update(kw)
    return RtsParams(**base)


class TestRtsParams:
    def test_validation(self):
        with pytest.raises(ParameterError):
            params(gamma_a=0.0)
        with pytest.raises(ParameterError):
            params(gamma_b=-1.0)
        with pytest.raises(ParameterError):
            params(level_a=1.0, level_b=1.0)
        with pytest.raises(ParameterError):
            params(snr=0.0)
        with pytest.raises(ParameterError):
            params(noise_bw_3db=60.0)  # above Nyquist for 100/us sampling
        with pytest.raises(ParameterError):
            params(duration=0.0)

    def test_derived(self):
        p = params(sample_rate=100.0, duration=10.0)
        assert p.dt == 0.01
        assert p.n_samples == 1000


class TestStatePath:
    def test_ordering_enforced(self):
        with pytest.raises(ParameterError):
            StatePath([(1.0, STATE_B), (0.5, STATE_A)], STATE_A, 2.0)
        with pytest.raises(ParameterError):
            StatePath([(3.0, STATE_B)], STATE_A, 2.0)

    def test_state_at_and_sampling_agree(self):
        path = StatePath([(0.35, STATE_B), (1.2, STATE_A)], STATE_A, 2.0)
        dt = 0.01
        sampled = path.sample_states(dt, 200)
        for k in [0, 34, 35, 36, 119, 120, 121, 199]:
            assert sampled[k] == (path.state_at(k * dt) == STATE_B)

    def test_dwell_times_partition_duration(self):
        path = gen_state_path(params(gamma_a=3.0, gamma_b=1.0), seed=7)
        durations, states = path.dwell_times()
        assert durations.sum() == pytest.approx(path.duration)
        # states strictly alternate
        assert np.all(states[1:] != states[:-1])


class TestGenStatePath:
    def test_deterministic(self):
        p = params(gamma_a=2.0, gamma_b=0.7)
        a = gen_state_path(p, seed=42)
        b = gen_state_path(p, seed=42)
        assert a.transitions == b.transitions
        assert a.initial_state == b.initial_state

    def test_dwells_exponential_ks(self):
        # pooled uncensored dwells against the exponential law
        p = params(gamma_a=2.0, gamma_b=2.0, duration=5000.0)
        path = gen_state_path(p, seed=3)
        durations, _ = path.dwell_times()
        sample = durations[:-1]  # drop the truncated final dwell
        assert sample.size > 1e4
        _, pval = sps.kstest(sample, "expon", args=(0, 0.5))
        assert pval > 0.01

    def test_stationary_initial_distribution(self):
        p = params(gamma_a=3.0, gamma_b=1.0, duration=0.5)
        n_b = sum(gen_state_path(p, seed=s).initial_state == STATE_B
                  for s in range(4000))
        # stationary P(B) = gamma_a / (gamma_a + gamma_b) = 0.75
        assert n_b / 4000 == pytest.approx(0.75, abs=0.03)

    def test_forced_initial_state(self):
        p = params()
        assert gen_state_path(p, 1, initial_state=STATE_B).initial_state == STATE_B


class TestSynthNoise:
    def test_unit_variance_and_zero_mean(self):
        x = synth_noise(200000, 0.01, 14.0, seed=1)
        assert x.mean() == pytest.approx(0.0, abs=0.01)
        assert x.var() == pytest.approx(1.0, rel=0.02)

    def test_stationarity(self):
        x = synth_noise(400000, 0.01, 14.0, seed=5)
        v1 = x[:200000].var()
        v2 = x[200000:].var()
        assert abs(v1 - v2) / v1 < 0.05

    def test_psd_half_power_at_3db_point(self):
        # average periodograms over realizations; PSD at f3 = half of PSD at 0
        n, dt, f3 = 4096, 0.01, 14.0
        psd = np.zeros(n // 2 + 1)
        for s in range(200):
            x = synth_noise(n, dt, f3, seed=s)
            psd += np.abs(np.fft.rfft(x)) ** 2
        freqs = np.fft.rfftfreq(n, d=dt)
        low = psd[freqs < 2.0].mean()
        # average a narrow window: a single periodogram bin still has
        # ~1/sqrt(n_realizations) chi-squared scatter
        at3 = psd[np.abs(freqs - f3) < 0.5].mean()
        assert at3 / low == pytest.approx(0.5, rel=0.05)

    def test_errors(self):
        with pytest.raises(ParameterError):
            synth_noise(0, 0.01, 14.0, seed=1)
        with pytest.raises(ParameterError):
            synth_noise(100, 0.01, 50.0, seed=1)


class TestNoisyTrace:
    def test_sigma_formula(self):
        p = params(snr=3.0)  # levels -1, +1
        assert noise_sigma_for_snr(p) == pytest.approx(2.0 / (2 * 3.0))

    def test_noiseless_limit_recovers_path(self):
        p = params(gamma_a=1.0, gamma_b=1.0, snr=1e6)
        trace, path = gen_noisy_trace(p, seed=11)
        truth = path.sample_states(p.dt, p.n_samples)
        assert np.array_equal(trace.samples > 0, truth)

    def test_deterministic_identical_seed(self):
        p = params(snr=2.0)
        t1, _ = gen_noisy_trace(p, seed=99)
        t2, _ = gen_noisy_trace(p, seed=99)
        assert np.array_equal(t1.samples, t2.samples)

    def test_seedsequence_accepted(self):
        p = params()
        ss = np.random.SeedSequence(entropy=5, spawn_key=(1, 2))
        t1, _ = gen_noisy_trace(p, ss)
        t2, _ = gen_noisy_trace(p, np.random.SeedSequence(entropy=5,
                                                          spawn_key=(1, 2)))
        assert np.array_equal(t1.samples, t2.samples)

    def test_snr_realized(self):
        # empirical std of samples minus the level sequence
        p = params(snr=2.0, duration=100.0)
        trace, path = gen_noisy_trace(p, seed=4)
        levels = np.where(path.sample_states(p.dt, p.n_samples), 1.0, -1.0)
        resid = trace.samples - levels
        assert resid.std() == pytest.approx(noise_sigma_for_snr(p), rel=0.03)


class TestTraceIO:
    def test_binary_round_trip(self, tmp_path):
        tr = Trace(np.linspace(-1, 1, 257), dt=0.01, seed=1234)
        f = tmp_path / "t.ztrc"
        write_trace(f, tr)
        back = read_trace(f)
        assert np.array_equal(back.samples, tr.samples)
        assert back.dt == tr.dt
        assert back.seed == tr.seed

    def test_bad_magic(self, tmp_path):
        f = tmp_path / "bad.ztrc"
        f.write_bytes(b"NOPE" + b"\x00" * 64)
        with pytest.raises(ParameterError):
            read_trace(f)

    def test_csv_export(self, tmp_path):
        tr = Trace(np.array([0.5, -0.5]), dt=0.01)
        f = tmp_path / "t.csv"
        export_csv(f, tr)
        lines = f.read_text().strip().splitlines()
        assert lines[0] == "time_us,voltage"
        assert len(lines) == 3

    def test_empty_trace_rejected(self):
        with pytest.raises(ParameterError):
            Trace(np.array([]))
