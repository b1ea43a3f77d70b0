import numpy as np
import pytest
from hypothesis import given, strategies as st

from spectral_refine.grid import SpectralField, SpectralTrajectory, make_grid, random_field, transform
from spectral_refine.norms import (NormSpec, bochner_norm, dual_norm_check, energy_spectrum, enstrophy_spectrum,
                                   fit_slope, l2_norm, neg_norm, rel_l2, seminorm, sobolev_norm)

seeds = st.integers(0, 2**31 - 1)


def sin_x(n=16, L=1.0):
    X, _ = make_grid(n, L).coords
    return transform(np.sin(2 * np.pi * X / L), make_grid(n, L))


class TestSobolev:
    def test_l2_of_sine(self):
        assert float(l2_norm(sin_x())) ** 2 == pytest.approx(0.5, rel=1e-14)

    def test_minus_one_seminorm_of_sine(self):
        assert float(seminorm(sin_x(), -1.0)) == pytest.approx(1 / np.sqrt(2) / (2 * np.pi), rel=1e-14)

    @given(seeds)
    def test_poincare(self, seed):
        L = 3.0
        f = random_field(make_grid(16, L), np.random.default_rng(seed))
        assert float(seminorm(f, 1.0)) >= (2 * np.pi / L) * float(l2_norm(f)) * (1 - 1e-14)

    @given(seeds)
    def test_monotone_in_order(self, seed):
        f = random_field(make_grid(16), np.random.default_rng(seed))
        vals = [float(sobolev_norm(f, s)) for s in (-2, -1, 0, 0.5, 1, 2)]
        assert all(a < b for a, b in zip(vals, vals[1:]))

    @given(seeds, st.floats(-5, 5).filter(lambda c: abs(c) > 1e-3))
    def test_homogeneous(self, seed, c):
        f = random_field(make_grid(16), np.random.default_rng(seed))
        for norm in (lambda g: sobolev_norm(g, 1.0), lambda g: neg_norm(g, 0.0), l2_norm):
            assert float(norm(f * c)) == pytest.approx(abs(c) * float(norm(f)), rel=1e-12)

    def test_quotient_forced(self):
        assert NormSpec(-1.0, alpha=0.0).quotient

    def test_negative_alpha_rejected(self):
        with pytest.raises(ValueError):
            NormSpec(1.0, alpha=-1.0)


class TestNegNorm:
    def test_alpha_zero_is_seminorm(self, rng):
        f = random_field(make_grid(32), rng)
        assert float(neg_norm(f, 0.0)) == pytest.approx(float(seminorm(f, -1.0)), rel=1e-15)

    def test_pure_mode(self):
        g = make_grid(16, 2.0)
        c = np.zeros((16, 16), complex)
        c[2, 3] = 5.0 + 2.0j
        c[-2, -3] = np.conj(c[2, 3])
        f = SpectralField(c, g)
        k = np.sqrt(g.k_sq[2, 3])
        chat = abs(c[2, 3]) / g.n**2 * g.L  # L-scaled normalized coefficient
        assert float(neg_norm(f, 0.0)) == pytest.approx(chat * np.sqrt(2) / k, rel=1e-14)

    @given(seeds)
    def test_monotone_in_alpha(self, seed):
        f = random_field(make_grid(16), np.random.default_rng(seed))
        vals = [float(neg_norm(f, a)) for a in (0.0, 0.5, 1.0, 10.0)]
        assert all(a >= b for a, b in zip(vals, vals[1:]))

    def test_mean_rejected(self):
        with pytest.raises(ValueError):
            neg_norm(transform(np.ones((8, 8))), 0.0)


class TestDualNorm:
    @given(seeds)
    def test_paths_agree(self, seed):
        dual, spectral = dual_norm_check(random_field(make_grid(32), np.random.default_rng(seed)))
        assert abs(dual - spectral) <= 1e-10 * spectral

    def test_pure_mode(self):
        dual, spectral = dual_norm_check(sin_x())
        assert dual == pytest.approx(spectral, rel=1e-14)

    def test_mean_rejected(self):
        with pytest.raises(ValueError):
            dual_norm_check(transform(np.ones((8, 8))))


class TestBochner:
    def _traj(self, times, amps, phi):
        return SpectralTrajectory(np.asarray(times), [phi * float(a) for a in amps])

    def test_single_snapshot_inf(self, rng):
        f = random_field(make_grid(16), rng)
        assert bochner_norm(self._traj([0.0], [1.0], f), 1.0, np.inf) == pytest.approx(float(sobolev_norm(f, 1.0)))

    def test_constant_in_time(self, rng):
        f = random_field(make_grid(16), rng)
        dt, N = 0.1, 7
        traj = self._traj(np.arange(N) * dt, np.ones(N), f)
        assert bochner_norm(traj, 0.0) == pytest.approx(np.sqrt(N * dt) * float(l2_norm(f)), rel=1e-14)

    def test_second_order_against_analytic_profile(self, rng):
        # cell-midpoint samples of a(t) = exp(-t) on [0, 1]: the sum is a midpoint rule
        f = random_field(make_grid(16), rng)
        exact = np.sqrt((1 - np.exp(-2.0)) / 2) * float(l2_norm(f))
        errs = []
        for N in (10, 20, 40):
            dt = 1.0 / N
            t = (np.arange(N) + 0.5) * dt
            errs.append(abs(bochner_norm(self._traj(t, np.exp(-t), f), 0.0) - exact))
        assert errs[0] <= 1e-2 * exact
        assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.05)
        assert errs[1] / errs[2] == pytest.approx(4.0, rel=0.05)

    def test_errors(self, rng):
        f = random_field(make_grid(16), rng)
        with pytest.raises(ValueError):
            bochner_norm(self._traj([0.0, 0.1, 0.3], [1, 1, 1], f))
        with pytest.raises(ValueError):
            bochner_norm(self._traj([0.0, 0.1], [1, 1], f), 0.0, 3)


class TestRelL2:
    def test_values(self, rng):
        f = random_field(make_grid(16), rng)
        assert float(rel_l2(f, f)) == 0.0
        assert float(rel_l2(f * 0.0, f)) == pytest.approx(1.0, rel=1e-14)
        assert float(rel_l2(f * 1.01, f)) == pytest.approx(0.01, rel=1e-12)

    def test_zero_reference(self, rng):
        f = random_field(make_grid(8), rng)
        with pytest.raises(ValueError):
            rel_l2(f, f * 0.0)


def power_law_field(n, exponent, seed=0):
    g = make_grid(n, 2 * np.pi)
    rng = np.random.default_rng(seed)
    phase = np.fft.fft2(rng.standard_normal((n, n)))
    phase = np.divide(phase, np.abs(phase), out=np.zeros_like(phase), where=np.abs(phase) > 0)
    mag = np.zeros((n, n))
    nz = g.int_k > 0
    mag[nz] = g.int_k[nz] ** exponent
    c = phase * mag * g.nyquist_free
    c[0, 0] = 0
    return SpectralField(c * n**2, g)


class TestSpectra:
    def test_single_shell(self):
        g = make_grid(32)
        c = np.zeros((32, 32), complex)
        c[3, 4] = c[-3, -4] = 1.0
        curve = enstrophy_spectrum(SpectralField(c, g))
        assert np.nonzero(curve.values)[0].tolist() == [5]

    @given(seeds)
    def test_shells_partition_enstrophy(self, seed):
        f = random_field(make_grid(32, 2.0), np.random.default_rng(seed))
        assert enstrophy_spectrum(f).total() == pytest.approx(float(l2_norm(f)) ** 2, rel=1e-10)

    def test_energy_spectrum_partition(self, rng):
        u = random_field(make_grid(32), rng, is_vector=True)
        assert energy_spectrum(u).total() == pytest.approx(0.5 * float(l2_norm(u)) ** 2, rel=1e-10)

    @pytest.mark.parametrize("exponent,slope", [(-1.5, -2.0), (-2.0, -3.0)])
    def test_power_law_slope(self, exponent, slope):
        # shell count grows like k, so |omega_k| ~ k^e gives a shell spectrum ~ k^(2e + 1)
        curve = enstrophy_spectrum(power_law_field(128, exponent))
        assert fit_slope(curve, 8, 32) == pytest.approx(slope, abs=0.1)

    def test_wrong_kind_rejected(self, rng):
        g = make_grid(8)
        with pytest.raises(ValueError):
            enstrophy_spectrum(random_field(g, rng, is_vector=True))
        with pytest.raises(ValueError):
            energy_spectrum(random_field(g, rng))

    def test_empty_band(self):
        with pytest.raises(ValueError):
            fit_slope(enstrophy_spectrum(power_law_field(16, -2.0)), 100, 200)
