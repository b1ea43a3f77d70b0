import numpy as np
import pytest

from spectral_refine.datagen import (DatasetSpec, IcSpec, derived_seed, generate_dataset, grf_sample,
                                     initial_vorticity, kinetic_energy, mcwilliams_psi_modulus, mcwilliams_sample,
                                     taylor_green)
from spectral_refine.grid import curl2d, make_grid, resample
from spectral_refine.io import read_metadata, read_sfc1
from spectral_refine.norms import energy_spectrum
from spectral_refine.timestepping import SolverConfig


class TestTaylorGreen:
    def test_point_value(self):
        g = make_grid(16, 2 * np.pi)
        w = taylor_green(1, 1e-3, 0.0, g)[1].physical()
        assert w[4, 4] == pytest.approx(2.0, abs=1e-12)

    @pytest.mark.parametrize("L", [1.0, 2 * np.pi])
    def test_vorticity_is_curl_of_velocity(self, L):
        u, w = taylor_green(2, 1e-3, 0.3, make_grid(32, L))
        assert np.max(np.abs(curl2d(u).value - w.value)) <= 1e-12 * np.max(np.abs(w.value))

    def test_decay_rate(self):
        g = make_grid(16)
        kappa, nu, s = 1, 1e-2, 0.7
        a = taylor_green(kappa, nu, 0.2, g)[1].value
        b = taylor_green(kappa, nu, 0.2 + s, g)[1].value
        i = np.unravel_index(np.argmax(np.abs(a)), a.shape)
        k = 2 * np.pi * kappa
        assert b[i] / a[i] == pytest.approx(np.exp(-2 * k * k * nu * s), rel=1e-12)

    def test_unresolved_rejected(self):
        with pytest.raises(ValueError):
            taylor_green(4, 1e-3, 0.0, make_grid(16))


class TestGrf:
    def test_deterministic(self):
        g = make_grid(32)
        np.testing.assert_array_equal(grf_sample(g, seed=4).value, grf_sample(g, seed=4).value)
        assert not np.array_equal(grf_sample(g, seed=4).value, grf_sample(g, seed=5).value)

    def test_mean_free(self):
        assert grf_sample(make_grid(32), seed=1).value[0, 0] == 0

    def test_mode_variance(self):
        g = make_grid(16, 2 * np.pi)
        alpha, tau = 2.5, 7.0
        c = grf_sample(g, alpha, tau, seed=0, batch=(2000,)).value / g.n**2
        emp = np.mean(np.abs(c) ** 2, axis=0)
        law = tau ** (2 * alpha - 2) * (g.k_sq + tau**2) ** (-alpha)
        for j in [(1, 0), (0, 1), (1, 1), (2, 1), (0, 3), (3, 2)]:
            assert emp[j] / law[j] == pytest.approx(1.0, abs=0.1)

    def test_rejects_bad_parameters(self):
        with pytest.raises(ValueError):
            grf_sample(make_grid(8), alpha=0.0)


class TestMcWilliams:
    def test_radial_profile(self):
        g = make_grid(64, 2 * np.pi)
        k0, tau = 4.0, 1.0
        w = mcwilliams_sample(g, k0, tau, seed=3, normalize_energy=None, batch=(20,)).value
        psi2 = np.mean(np.abs(w * g.inv_k_sq) ** 2, axis=0)
        law = mcwilliams_psi_modulus(g, k0, tau)
        shells = np.rint(g.int_k).astype(int)
        ratios = []
        for k in range(1, 20):
            sel = (shells == k) & g.nyquist_free
            ratios.append(psi2[sel].mean() / law[sel].mean())
        ratios = np.array(ratios)
        assert np.all(np.abs(ratios / ratios.mean() - 1) <= 0.15)

    def test_energy_normalization(self):
        g = make_grid(64, 2 * np.pi)
        w = mcwilliams_sample(g, seed=2, normalize_energy=0.7)
        assert float(kinetic_energy(w)) == pytest.approx(0.7, rel=1e-10)

    def test_energy_peak_near_k0(self):
        g = make_grid(128, 2 * np.pi)
        from spectral_refine.datagen import velocity_from_vorticity
        e = energy_spectrum(velocity_from_vorticity(mcwilliams_sample(g, k0=6.0, seed=1)))
        assert 5 <= e.k_bins[np.argmax(e.values)] <= 7

    def test_ic_family_seeds(self):
        g = make_grid(16)
        ic = IcSpec("mcwilliams", seed=9)
        a = initial_vorticity(ic, g, 0).value
        b = initial_vorticity(ic, g, 1).value
        assert not np.array_equal(a, b)
        assert derived_seed(9, 1) != derived_seed(9, 0)

    @pytest.mark.parametrize("kw", [dict(kind="vortex"), dict(kappa=0), dict(k0=0.5), dict(alpha=1.0),
                                    dict(tau=-1.0), dict(normalize_energy=0.0)])
    def test_ic_validation(self, kw):
        with pytest.raises(ValueError):
            IcSpec(**kw)


class TestDataset:
    spec = DatasetSpec(n_train=3, n_test=2, n_gen=32, n=16, L=2 * np.pi, ell=4, n_t=3, snapshot_dt=0.05)
    solver = SolverConfig(dt=0.01, nu=1e-2)

    def test_shapes_and_files(self, tmp_path):
        d = generate_dataset(self.spec, IcSpec("grf", seed=1), self.solver, tmp_path)
        assert d["train_input"].shape == (3, 4, 16, 16)
        assert d["train_output"].shape == (3, 3, 16, 16)
        assert d["test_input"].shape == (2, 4, 16, 16)
        f = read_sfc1(tmp_path / "train.sfc1")
        np.testing.assert_array_equal(f["input"], d["train_input"])
        meta = read_metadata(tmp_path / "meta.txt")
        assert meta["ic_kind"] == "grf" and int(meta["n_t"]) == 3 and float(meta["nu"]) == 1e-2

    def test_snapshots_mean_free(self):
        d = generate_dataset(self.spec, IcSpec("mcwilliams", seed=2, normalize_energy=1.0), self.solver)
        assert d["train_input"].shape[0] == 3
        for key in ("train_input", "train_output", "test_output"):
            assert np.max(np.abs(d[key].mean(axis=(-2, -1)))) <= 1e-12

    def test_taylor_green_first_snapshot_is_exact(self):
        spec = DatasetSpec(n_train=2, n_test=1, n_gen=32, n=16, ell=3, n_t=2, snapshot_dt=0.01)
        d = generate_dataset(spec, IcSpec("taylor_green", kappa=1), SolverConfig(dt=1e-3, nu=1e-3))
        for i in range(2):
            exact = taylor_green(1 + i, 1e-3, 0.0, make_grid(16))[1].physical()
            assert np.max(np.abs(d["train_input"][i, 0] - exact)) <= 1e-12

    def test_down_up_keeps_retained_modes(self, rng):
        from spectral_refine.grid import random_field
        f = random_field(make_grid(32), rng)
        down = resample(f, 16)
        again = resample(resample(down, 32), 16)
        np.testing.assert_allclose(again.value, down.value, atol=1e-12)

    def test_thread_count_does_not_change_output(self, monkeypatch):
        ic = IcSpec("grf", seed=5)
        spec = DatasetSpec(n_train=4, n_test=1, n_gen=16, n=16, ell=2, n_t=2, snapshot_dt=0.02)
        monkeypatch.setenv("SPECTRAL_REFINE_THREADS", "1")
        a = generate_dataset(spec, ic, self.solver, chunk=2)
        monkeypatch.setenv("SPECTRAL_REFINE_THREADS", "3")
        b = generate_dataset(spec, ic, self.solver, chunk=2)
        for k in a:
            np.testing.assert_array_equal(a[k], b[k])

    @pytest.mark.parametrize("kw", [dict(n=64, n_gen=32), dict(ell=0), dict(burn_in=-1.0),
                                    dict(formulation="x"), dict(n_train=-1)])
    def test_spec_validation(self, kw):
        with pytest.raises(ValueError):
            DatasetSpec(**kw)

    def test_snapshot_spacing_must_divide(self):
        with pytest.raises(ValueError):
            DatasetSpec(snapshot_dt=0.015).steps_per_snapshot(0.01)
