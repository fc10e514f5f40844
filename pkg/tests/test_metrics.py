import math

import numpy as np
import pytest

from dynlab.metrics import (
    ais,
    ais_table,
    default_segment_len,
    lyapunov_spectrum,
    psd_welch,
    spectral_scan,
    spectral_signature,
)
from dynlab.systems import EncodingConfig, SystemSpec, Trajectory, init_state


def make_traj(data, dt_frame=0.1):
    return Trajectory(
        data=np.asarray(data, dtype=np.float64), dt_frame=dt_frame, spec_used=SystemSpec.duffing(0.0)
    )


class TestLyapunov:
    def test_linear_decay_spectrum(self):
        # xdot = -x in 3-D: all exponents are exactly -1
        field = (
            lambda x, y, z: (-x, -y, -z),
            lambda s: -np.eye(3),
        )
        rep = lyapunov_spectrum(
            SystemSpec.duffing(0.0), np.array([1.0, 0.5, -0.3]), t_total=200.0, _field=field
        )
        assert np.allclose(rep.exponents, [-1.0, -1.0, -1.0], atol=1e-4)
        assert rep.converged

    def test_duffing_transition_regime(self):
        rep = lyapunov_spectrum(SystemSpec.duffing(2.0), init_state(1.0))
        assert abs(rep.sum - (-4.0)) <= 0.4
        assert rep.lam_max < 0

    def test_duffing_expansive_regime(self):
        rep = lyapunov_spectrum(SystemSpec.duffing(-1.5), init_state(1.0))
        assert abs(rep.sum - 3.0) <= 0.45
        assert rep.lam_max > 0
        assert rep.truncated  # escapes the analysis window in finite time

    def test_sum_equals_exponent_sum_field(self):
        rep = lyapunov_spectrum(SystemSpec.duffing(2.0), init_state(1.0))
        assert rep.sum == pytest.approx(sum(rep.exponents), abs=1e-12)

    def test_thomas_trace_oracle(self):
        rep = lyapunov_spectrum(SystemSpec.thomas(0.25), init_state(1.0), t_total=300.0)
        assert abs(rep.sum - (-0.75)) <= 0.075

    def test_preconditions(self):
        with pytest.raises(ValueError):
            lyapunov_spectrum(SystemSpec.duffing(2.0), init_state(1.0), t_total=100.0)
        with pytest.raises(ValueError):
            lyapunov_spectrum(SystemSpec.duffing(2.0), init_state(1.0), dt=0.05)


class TestAIS:
    def test_constant_trajectory_zero_bits(self):
        traj = make_traj(np.full((4, 20, 3), 0.7))
        assert ais(traj, bins=16).value == 0.0

    def test_iid_noise_near_zero(self):
        rng = np.random.default_rng(0)
        traj = make_traj(rng.uniform(-1, 1, size=(400, 30, 3)))
        est = ais(traj, bins=16)
        assert est.n_samples >= 10_000
        assert est.value < 0.15

    def test_bounds_property(self):
        rng = np.random.default_rng(1)
        for _ in range(10):
            d = rng.integers(1, 10)
            n = rng.integers(2, 40)
            traj = make_traj(rng.standard_normal((d, n, 3)) * rng.uniform(0.1, 100))
            est = ais(traj, bins=16)
            assert 0.0 <= est.value <= math.log2(16)

    def test_degenerate_dimension_contributes_zero(self):
        rng = np.random.default_rng(2)
        data = rng.standard_normal((5, 30, 3))
        data[:, :, 2] = 4.2  # constant z
        full = ais(make_traj(data), bins=16).value
        living = ais(make_traj(data[:, :, :2].repeat(2, axis=2)[:, :, :3]), bins=16)
        assert full < living.value  # the dead dimension drags the average down

    def test_table_reproduces_regime_dip(self):
        rows = ais_table([-1.5, 2.0, 10.0], EncodingConfig(4.0, 30), n_inputs=100, bins=16, seed=7)
        by_delta = {r["delta"]: r["ais_bits"] for r in rows}
        assert by_delta[2.0] < min(by_delta[-1.5], by_delta[10.0])

    def test_needs_two_frames(self):
        with pytest.raises(ValueError):
            ais(make_traj(np.zeros((2, 1, 3))))


class TestWelch:
    def test_sine_peak_location(self):
        t = np.arange(1024)
        f0 = 0.1
        freqs, powers = psd_welch(np.sin(2 * np.pi * f0 * t), 1.0, 1024)
        assert len(powers) == 1024 // 2 + 1
        peak = freqs[np.argmax(powers)]
        assert abs(peak - f0) <= freqs[1] - freqs[0]

    def test_zero_signal_zero_power(self):
        _, powers = psd_welch(np.zeros(256), 1.0, 64)
        assert np.all(powers == 0.0)

    def test_parseval_on_white_noise(self):
        totals = []
        for seed in range(20):
            x = np.random.default_rng(seed).standard_normal(2048)
            x /= x.std()
            freqs, powers = psd_welch(x, 1.0, 256)
            totals.append(powers.sum() * (freqs[1] - freqs[0]))
        assert abs(np.mean(totals) - 1.0) < 0.2

    def test_output_length_invariant(self):
        rng = np.random.default_rng(3)
        for seg in (8, 32, 100, 127):
            _, powers = psd_welch(rng.standard_normal(512), 2.0, seg)
            assert len(powers) == seg // 2 + 1

    def test_short_series_fallback(self):
        x = np.random.default_rng(4).standard_normal(20)
        freqs, powers = psd_welch(x, 1.0, 64)  # shorter than segment
        assert len(powers) == 20 // 2 + 1


class TestSpectralSignature:
    def test_pure_sine_concentrated(self):
        n, f0 = 512, 0.05
        t = np.arange(n) * 1.0
        sine = np.sin(2 * np.pi * f0 * t)
        data = np.stack([sine, sine, sine], axis=1)[None, :, :]
        sig = spectral_signature(make_traj(data, dt_frame=1.0))
        assert sig.entropy < 0.2
        assert abs(sig.centroid - f0) < 0.02

    def test_white_noise_flat(self):
        rng = np.random.default_rng(5)
        data = rng.standard_normal((3, 512, 3))
        sig = spectral_signature(make_traj(data, dt_frame=1.0))
        assert sig.entropy > 0.85

    def test_constant_signal_convention(self):
        sig = spectral_signature(make_traj(np.full((2, 64, 3), 1.3)))
        assert (sig.centroid, sig.entropy, sig.dominant_freq) == (0.0, 0.0, 0.0)

    def test_entropy_scale_invariance(self):
        rng = np.random.default_rng(6)
        data = rng.standard_normal((2, 128, 3))
        a = spectral_signature(make_traj(data)).entropy
        b = spectral_signature(make_traj(data * 37.5)).entropy
        assert abs(a - b) < 1e-12

    def test_short_series_flagged(self):
        sig = spectral_signature(make_traj(np.random.default_rng(7).standard_normal((1, 5, 3))))
        assert sig.single_segment

    def test_default_segment_rule(self):
        assert default_segment_len(30) == 8
        assert default_segment_len(64) == 32
        assert default_segment_len(5) == 5


class TestSpectralScan:
    def test_single_cell_single_row(self):
        rows = spectral_scan([2.0], [8.0], [64], seeds=[0])
        assert len(rows) == 1
        assert rows[0]["delta"] == 2.0 and rows[0]["N"] == 64

    def test_empty_grid_rejected(self):
        with pytest.raises(ValueError):
            spectral_scan([], [8.0], [64], seeds=[0])

    def test_expansive_long_horizon_marked_clipped(self):
        rows = spectral_scan([-1.5], [16.0], [64], seeds=[0])
        assert rows[0]["status"] == "clipped"
        assert np.isfinite(rows[0]["centroid"])
