import numpy as np
import pytest

from spectral_refine import autodiff as ad
from spectral_refine.datagen import IcSpec, initial_vorticity, taylor_green
from spectral_refine.grid import make_grid
from spectral_refine.model import StfnoConfig, StfnoModel, forward, output_positions
from spectral_refine.timestepping import SolverConfig, march
from spectral_refine.train import (FinetuneConfig, OneCycle, OptimizerState, TrainingError, _Session, evaluate,
                                   evaluate_corrected, evaluate_model, finetune, train, trajectory_loss)

L = 2 * np.pi
N, NU, DT, ELL, NT = 32, 1e-2, 0.1, 6, 6
SOLVER = SolverConfig(dt=DT, nu=NU)
CFG = StfnoConfig(n=N, L=L, d_t=6, tau_max=3, k_max=6, width=6, layers=1)


def tg_window(kappa, t0=0.0):
    g = make_grid(N, L)
    xs = np.array([taylor_green(kappa, NU, t0 + i * DT, g)[1].physical() for i in range(ELL + NT)])
    return xs[:ELL], xs[ELL:]


@pytest.fixture(scope="module")
def tg_data():
    pairs = [tg_window(k, t0) for k in range(1, 5) for t0 in (0.0, 0.5, 1.0, 1.5)]
    X = np.array([p[0] for p in pairs])
    Y = np.array([p[1] for p in pairs])
    return X, Y, tg_window(5)


@pytest.fixture(scope="module")
def trained(tg_data):
    X, Y, _ = tg_data
    return train(StfnoModel(CFG), X, Y, 10, lr=1e-2, batch=1)


@pytest.fixture(scope="module")
def parallel_run(trained, tg_data):
    xt, _ = tg_data[2]
    return finetune(trained.model, xt, SOLVER, DT, NT)


@pytest.fixture(scope="module")
def guaranteed_run(trained, tg_data):
    xt, _ = tg_data[2]
    return finetune(trained.model, xt, SOLVER, DT, NT, FinetuneConfig(mode="guaranteed", tol=1e-3))


def turbulence_input(n=32, ell=6, seed=0):
    g = make_grid(n, L)
    w = initial_vorticity(IcSpec("mcwilliams", seed=seed, normalize_energy=1.0), g)
    solver = SolverConfig(dt=0.01, nu=1e-2)
    xs = []
    for _ in range(ell):
        xs.append(w.physical())
        w = march(w, solver, 5)
    return np.array(xs), solver


class TestOptimizer:
    def test_adam_solves_quadratic(self):
        target = np.array([1.0, -2.0, 3.0])
        p = {"x": np.zeros(3)}
        opt = OptimizerState(lr=0.1)
        for _ in range(500):
            opt.update(p, {"x": 2 * (p["x"] - target)})
        np.testing.assert_allclose(p["x"], target, atol=1e-3)
        assert opt.step == 500 and opt.m["x"].shape == (3,)

    def test_complex_parts_move_independently(self):
        p = {"z": np.zeros(2, complex)}
        OptimizerState(lr=0.5).update(p, {"z": np.array([1.0 + 0j, 1j])})
        np.testing.assert_allclose(p["z"], [-0.5, -0.5j], atol=1e-6)

    def test_weight_decay_shrinks(self):
        p = {"x": np.ones(2)}
        OptimizerState(lr=0.1, weight_decay=0.5).update(p, {"x": np.zeros(2)})
        np.testing.assert_allclose(p["x"], 0.95)

    def test_one_cycle(self):
        sch = OneCycle(1.0, 100)
        assert sch(0) == pytest.approx(1e-3)
        assert sch(20) == pytest.approx(1.0)
        assert sch(99) == pytest.approx(1e-3)
        lrs = [sch(i) for i in range(100)]
        assert np.argmax(lrs) == 20 and np.all(np.diff(lrs[20:]) <= 0)


class TestTrain:
    def test_ten_epochs_reduce_loss(self, trained):
        assert trained.history[0] / trained.history[-1] >= 5.0
        assert len(trained.slope_gap) == 10

    def test_zero_epochs_unchanged(self, tg_data):
        m = StfnoModel(CFG)
        res = train(m, tg_data[0], tg_data[1], 0)
        assert res.model.checksum() == m.checksum() and res.history == []

    def test_h_neg1_gradient(self, tg_data):
        X, Y, _ = tg_data
        m = StfnoModel(CFG)
        names = ["proj.q", "lift.A"]

        def fn(q, a):
            p = {**m.params, "proj.q": q, "lift.A": a}
            return trajectory_loss(forward(m, X[0], NT, params=p), Y[0], "h_neg1", L)

        assert ad.grad_check(fn, [m.params[k] for k in names], eps=1e-6, n_samples=12) <= 1e-6

    def test_grid_mismatch(self, tg_data):
        with pytest.raises(ValueError):
            train(StfnoModel(StfnoConfig(n=16, L=L, d_t=6, tau_max=3, k_max=6)), tg_data[0], tg_data[1], 1)

    def test_nan_loss_aborts(self, tg_data):
        X = tg_data[0].copy()
        X[1, 0, 0, 0] = np.nan
        with pytest.raises(TrainingError, match="batch"):
            train(StfnoModel(CFG), X, tg_data[1], 1, batch=1, seed=0)

    def test_unknown_loss(self, tg_data):
        with pytest.raises(ValueError):
            train(StfnoModel(CFG), tg_data[0], tg_data[1], 1, loss_kind="l1")


class TestFinetuneParallel:
    def test_estimator_drops_a_thousandfold(self, parallel_run):
        eta = parallel_run.eta_history
        assert len(eta) == 101 and eta[0] / eta[-1] >= 1e3

    def test_zero_iterations_is_forward(self, trained, tg_data):
        xt, _ = tg_data[2]
        res = finetune(trained.model, xt, SOLVER, DT, NT, FinetuneConfig(iters=0))
        np.testing.assert_allclose(res.coeffs, forward(trained.model, xt, NT), rtol=0, atol=1e-10)

    def test_backbone_untouched(self, trained, parallel_run):
        frozen = sorted(k for k in trained.model.params if k != "ks.M")
        assert parallel_run.model.checksum(frozen) == trained.model.checksum(frozen)
        assert parallel_run.model.trainable == {"ks.M"}

    def test_double_precision(self, parallel_run):
        assert parallel_run.coeffs.dtype == np.complex128
        assert all(v.dtype in (np.float64, np.complex128) for v in parallel_run.model.params.values())

    def test_eta_permutation_bit_identical(self, trained, tg_data):
        ses = _Session(trained.model, tg_data[2][0], SOLVER, DT, NT, FinetuneConfig())
        s = output_positions(NT)
        perm = np.random.default_rng(0).permutation(NT)
        a = ad.value_of(ses.eta_sq(ses.model.params, s))
        b = ad.value_of(ses.eta_sq(ses.model.params, s[perm]))
        assert np.array_equal(a[perm], b)
        assert np.sum(a) == pytest.approx(np.sum(b), rel=1e-15)

    def test_reliability_ratio_bounded(self, trained, parallel_run, tg_data):
        xt, yt = tg_data[2]
        g = make_grid(N, L)

        def err(pred):
            return float(np.sqrt(np.sum((pred - yt) ** 2) * g.dx**2))

        before = err(np.real(np.fft.ifft2(forward(trained.model, xt, NT))))
        after = err(parallel_run.physical())
        eta = parallel_run.eta_history
        assert after < before and eta[-1] < eta[0]
        assert before <= 1e3 * eta[0] and after <= 1e3 * eta[-1]

    def test_turbulence_loss_halves(self):
        x, solver = turbulence_input()
        model = StfnoModel(StfnoConfig(n=32, L=L, d_t=6, tau_max=3, k_max=6, width=4, layers=1))
        res = finetune(model, x, solver, 0.05, 4, FinetuneConfig(iters=30))
        loss = np.array(res.loss_history)
        assert loss[-1] <= 0.5 * loss[0]
        assert np.all(np.isfinite(loss))

    def test_blowup_is_reported(self):
        x, _ = turbulence_input()
        model = StfnoModel(StfnoConfig(n=32, L=L, d_t=6, tau_max=3, k_max=6, width=4, layers=1))
        model.params["ks.M"] = model.params["ks.M"] + 1e12
        with pytest.raises(TrainingError, match="iteration"):
            finetune(model, x, SolverConfig(dt=0.01, nu=1e-2), 0.05, 4, FinetuneConfig(iters=2))


class TestFinetuneGuaranteed:
    def test_every_snapshot_meets_tolerance(self, guaranteed_run):
        assert np.all(guaranteed_run.history[-1].eta <= 1e-3)
        assert len(guaranteed_run.steps_per_snapshot) == NT

    def test_huge_tolerance_takes_no_steps(self, trained, tg_data):
        xt, _ = tg_data[2]
        res = finetune(trained.model, xt, SOLVER, DT, NT, FinetuneConfig(mode="guaranteed", tol=1e6))
        assert res.steps_per_snapshot == [0] * NT
        np.testing.assert_allclose(res.coeffs, forward(trained.model, xt, NT), rtol=0, atol=1e-10)

    def test_close_to_parallel(self, guaranteed_run, parallel_run):
        a, b = guaranteed_run.eta_history[-1], parallel_run.eta_history[-1]
        assert max(a, b) / min(a, b) <= 10.0

    def test_config_validation(self):
        with pytest.raises(ValueError):
            FinetuneConfig(mode="guaranteed", tol=0.0)
        with pytest.raises(ValueError):
            FinetuneConfig(gamma=1)
        with pytest.raises(ValueError):
            FinetuneConfig(loss="h1")


class TestEvaluate:
    def test_self_comparison(self, tg_data):
        _, yt = tg_data[2]
        m = evaluate(yt, yt, SOLVER, DT, L)
        assert m["rel_l2_final"] == 0.0 and m["bochner_l2_rel"] == 0.0
        assert set(m) == {"rel_l2_final", "bochner_l2_rel", "residual_neg1_alpha0", "residual_neg1_alpha1",
                          "slope_gap"}

    def test_shape_mismatch(self, tg_data):
        _, yt = tg_data[2]
        with pytest.raises(ValueError):
            evaluate(yt[:-1], yt, SOLVER, DT, L)

    def test_finetuned_beats_plain(self, trained, parallel_run, tg_data):
        xt, yt = tg_data[2]
        plain = evaluate_model(trained.model, xt, yt, SOLVER, DT)
        tuned = evaluate_corrected(parallel_run, xt, yt, SOLVER, DT)
        assert tuned["rel_l2_final"] < plain["rel_l2_final"]
        assert tuned["residual_neg1_alpha0"] < plain["residual_neg1_alpha0"]
