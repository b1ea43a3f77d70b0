"""Adam, end-to-end training and the two residual-driven fine-tuning strategies."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from . import autodiff as ad
from .estimator import EstimatorReport, report_from_values, residual, step_defect, step_defect_eta_sq
from .grid import SpectralField, make_grid
from .model import (StfnoModel, forward, ks_spectrum, latent_of, output_positions, project, reduce_channels,
                    time_matrix)
from .norms import energy_spectrum, enstrophy_spectrum, fit_slope, neg_norm, rel_l2, weighted_sq
from .timestepping import BlowUpError, SolverConfig, SolverState, step

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


# ------------------------------------------------------------------ optimizer


@dataclass
class OneCycle:
    """Linear warm-up from ``floor * lr_max`` then cosine decay back to the floor."""

    lr_max: float
    total: int
    warmup: float = 0.2
    floor: float = 1e-3

    def __call__(self, step: int) -> float:
        lo = self.floor * self.lr_max
        if self.total <= 1:
            return self.lr_max
        w = max(1, int(round(self.warmup * self.total)))
        if step < w:
            return lo + (self.lr_max - lo) * step / w
        frac = min(1.0, (step - w) / max(1, self.total - 1 - w))
        return lo + 0.5 * (self.lr_max - lo) * (1.0 + math.cos(math.pi * frac))


@dataclass
class OptimizerState:
    """Adam moments per parameter; complex entries are two independent real coordinates."""

    lr: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.0
    schedule: OneCycle | None = None
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def current_lr(self) -> float:
        return self.schedule(self.step) if self.schedule is not None else self.lr

    def update(self, params: dict[str, np.ndarray], grads: Mapping[str, np.ndarray]) -> None:
        """In-place Adam(W) step on ``params`` for every name in ``grads``."""
        lr = self.current_lr()
        self.step += 1
        b1, b2 = self.betas
        c1, c2 = 1 - b1**self.step, 1 - b2**self.step
        for k, g in grads.items():
            p = params[k]
            g = np.asarray(g, dtype=p.dtype)
            if k not in self.m:
                self.m[k] = np.zeros_like(p)
                self.v[k] = np.zeros_like(p)
            self.m[k] = b1 * self.m[k] + (1 - b1) * g
            if np.iscomplexobj(p):
                self.v[k] = b2 * self.v[k] + (1 - b2) * (g.real**2 + 1j * g.imag**2)
                mh, vh = self.m[k] / c1, self.v[k] / c2
                upd = mh.real / (np.sqrt(vh.real) + self.eps) + 1j * mh.imag / (np.sqrt(vh.imag) + self.eps)
            else:
                self.v[k] = b2 * self.v[k] + (1 - b2) * g * g
                upd = (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)
            if self.weight_decay:
                p = p * (1 - lr * self.weight_decay)
            params[k] = p - lr * upd


# ------------------------------------------------------------------ training


def trajectory_loss(pred, target: np.ndarray, kind: str, grid_L: float = 1.0):
    """Relative L^2 (``l2``) or relative ``H^-1`` (``h_neg1``, alpha=1) loss of coefficient arrays."""
    n = target.shape[-1]
    g = make_grid(n, grid_L)
    tgt = np.fft.fft2(target)
    diff = SpectralField(ad.add(pred, -tgt), g)
    ref = SpectralField(tgt, g)
    w = np.ones((n, n)) if kind == "l2" else 1.0 / (1.0 + g.k_sq)
    if kind not in ("l2", "h_neg1"):
        raise ValueError(f"unknown loss kind {kind!r}")
    num = ad.sum_(weighted_sq(diff, w))
    den = float(np.sum(weighted_sq(ref, w)))
    return ad.power(ad.mul(num, 1.0 / den), 0.5)


@dataclass
class TrainResult:
    model: StfnoModel
    history: list[float]
    slope_gap: list[float]


def _slope(coeffs: np.ndarray, L: float, formulation: str, k_lo: float, k_hi: float) -> float:
    g = make_grid(coeffs.shape[-1], L)
    f = SpectralField(coeffs, g, formulation == "vp")
    curve = energy_spectrum(f) if f.is_vector else enstrophy_spectrum(f)
    return fit_slope(curve, k_lo, k_hi)


def train(model: StfnoModel, inputs: np.ndarray, outputs: np.ndarray, epochs: int, loss_kind: str = "l2",
          lr: float = 1e-2, batch: int = 2, seed: int = 0, weight_decay: float = 0.0,
          slope_band: tuple[float, float] = (2.0, 8.0)) -> TrainResult:
    """Minibatch Adam with a one-cycle schedule for a fixed number of epochs.

    Returns the trained model (a copy), the mean loss per epoch and, per epoch,
    the spectrum-slope gap between the prediction and the data on the last
    snapshot of the first training sample.
    """
    if inputs.shape[0] != outputs.shape[0]:
        raise ValueError("inputs and outputs must have the same number of trajectories")
    if inputs.shape[-1] != model.cfg.n:
        raise ValueError("dataset grid does not match the model grid")
    model = model.copy()
    if epochs <= 0:
        return TrainResult(model, [], [])
    n_tr = inputs.shape[0]
    n_t = outputs.shape[1]
    per_epoch = math.ceil(n_tr / batch)
    opt = OptimizerState(lr=lr, weight_decay=weight_decay, schedule=OneCycle(lr, epochs * per_epoch))
    rng = np.random.Generator(np.random.Philox(seed))
    names = sorted(model.trainable)
    history, gaps = [], []
    for ep in range(epochs):
        order = rng.permutation(n_tr)
        losses = []
        for b in range(per_epoch):
            idx = order[b * batch:(b + 1) * batch]
            with ad.Tape() as tape:
                leaves = {k: tape.var(model.params[k]) for k in names}
                params = {**model.params, **leaves}
                total = None
                for i in idx:
                    pred = forward(model, inputs[i], n_t, params=params)
                    li = trajectory_loss(pred, outputs[i], loss_kind, model.cfg.L)
                    total = li if total is None else ad.add(total, li)
                loss = ad.mul(total, 1.0 / len(idx))
                if not np.isfinite(loss.value):
                    raise TrainingError(f"non-finite loss in epoch {ep}, batch {b}")
                tape.backward(loss)
            opt.update(model.params, {k: leaves[k].grad for k in names if leaves[k].grad is not None})
            losses.append(float(loss.value))
        history.append(float(np.mean(losses)))
        try:
            pred = forward(model, inputs[0], n_t)
            gap = _slope(pred[-1], model.cfg.L, model.cfg.formulation, *slope_band) - _slope(
                np.fft.fft2(outputs[0, -1]), model.cfg.L, model.cfg.formulation, *slope_band)
        except ValueError:
            gap = float("nan")
        gaps.append(gap)
        log.info("epoch %d loss %.4e slope gap %.3f", ep + 1, history[-1], gap)
    return TrainResult(model, history, gaps)


# ------------------------------------------------------------------ fine-tuning


@dataclass(frozen=True)
class FinetuneConfig:
    iters: int = 100
    lr: float = 0.1
    gamma: int = 2
    loss: str = "h_neg1"
    alpha: float = 0.0
    mode: str = "parallel"
    tol: float = 1e-3
    iter_max: int = 100
    dt: float | None = None
    collocation: int = 4
    train_reduction: bool = False
    schedule: bool = True
    betas: tuple[float, float] = (0.7, 0.95)

    def __post_init__(self):
        if self.iters < 0:
            raise ValueError("iters must be nonnegative")
        if self.loss not in ("h_neg1", "l2"):
            raise ValueError("loss must be 'h_neg1' or 'l2'")
        if self.mode not in ("parallel", "guaranteed"):
            raise ValueError("mode must be 'parallel' or 'guaranteed'")
        if self.mode == "guaranteed" and not self.tol > 0:
            raise ValueError("tol must be positive in guaranteed mode")
        if int(self.gamma) != self.gamma or self.gamma < 2:
            raise ValueError("gamma must be an integer >= 2")
        if self.collocation < 1:
            raise ValueError("collocation must be >= 1")


@dataclass
class FinetuneResult:
    coeffs: np.ndarray  # corrected output snapshots, spatial coefficients
    model: StfnoModel
    history: list[EstimatorReport]
    loss_history: list[float]
    steps_per_snapshot: list[int] = field(default_factory=list)

    @property
    def eta_history(self) -> np.ndarray:
        return np.array([r.eta_total for r in self.history])

    def physical(self) -> np.ndarray:
        return np.real(np.fft.ifft2(self.coeffs))


SV_FLOOR = 1e-2


class _Session:
    """Frozen latents plus the differentiable map ``theta -> candidate trajectory``.

    Without convection the fine-tuning objective splits into one small least
    squares problem per spatial mode over the temporal coefficients of the
    output series. The multiplier is therefore optimized in per-mode whitened
    coordinates, ``M C = M0 C + r_k P_k theta_k``, where ``P_k`` inverts the
    singular values of the collocated linear defect operator of mode ``k`` and
    ``r_k`` is the initial defect of that mode. The map stays affine, the
    linear part of the Hessian becomes the identity, and the optimum sits at
    ``|theta_k| <= 1``, a scale Adam reaches in a few dozen steps.
    """

    def __init__(self, model: StfnoModel, x: np.ndarray, solver: SolverConfig, snapshot_dt: float, n_t: int,
                 cfg: FinetuneConfig):
        self.model = model.copy()
        keep = ("ks.M", "proj.q", "proj.b") if cfg.train_reduction else ("ks.M",)
        self.model.freeze(keep)
        self.cfg, self.solver, self.n_t = cfg, solver, n_t
        self.window = n_t * snapshot_dt
        self.dt = snapshot_dt if cfg.dt is None else cfg.dt
        self.h = self.dt**cfg.gamma
        mc = self.model.cfg
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != mc.n:
            raise ValueError(f"fine-tuning runs on the model grid n={mc.n}, got {x.shape[-1]}")
        self.grid = make_grid(mc.n, mc.L)
        latent = latent_of(self.model, x)  # computed once and held fixed
        reduced = reduce_channels(latent, self.model.params)
        self.latent = latent if cfg.train_reduction else reduced
        self.u_last = np.fft.fft2(x[-1])
        self.names = sorted(self.model.trainable)
        C = ks_spectrum(reduced, mc)
        mag = np.abs(C)
        live = mag > 1e-12 * mag.max()
        self.inv_c = np.where(live, 1.0 / np.where(live, C, 1.0), 0.0)
        self.vars = {k: self.model.params[k] for k in self.names}
        self.precondition(_collocation(n_t, cfg.collocation)[0])

    def precondition(self, s: np.ndarray, anchor=None, s0: float = 0.0) -> None:
        """Re-center the whitened coordinates on the current multiplier for the collocation set ``s``."""
        self.M0 = self.model.params["ks.M"].copy()
        self.P = self._whitener(s, s0)  # [n, n, N, N]
        try:
            d0 = self.defect(self.model.params, s, anchor, s0)  # [S, (2,) n, n]
        except BlowUpError as exc:
            raise TrainingError(f"solver blow-up inside the fine step at iteration 0: {exc}") from exc
        r = np.sqrt(np.sum(np.abs(d0) ** 2, axis=0))
        r = r[None] if r.ndim == 2 else r
        self.r = np.maximum(r, 1e-12 * r.max())[:, None]  # [C, 1, n, n]
        self.vars["ks.M"] = np.zeros_like(self.M0)

    def _linear_gain(self) -> np.ndarray:
        """Per-mode amplification of one fine step with convection switched off."""
        vec = self.model.cfg.formulation == "vp"
        shape = (2, self.grid.n, self.grid.n) if vec else (self.grid.n, self.grid.n)
        one = SpectralField(np.ones(shape, dtype=complex), self.grid, vec)
        zero = SpectralField(np.zeros(shape, dtype=complex), self.grid, vec)
        go = step(SolverState(0.0, one), self.solver, convection=False, dt=self.h).field.value
        gz = step(SolverState(0.0, zero), self.solver, convection=False, dt=self.h).field.value
        g = go - gz
        return g[0] if vec else g

    def _whitener(self, s: np.ndarray, s0: float = 0.0) -> np.ndarray:
        mc = self.model.cfg
        E = lambda q: time_matrix(q, mc.d_t, mc.mirror) - time_matrix(np.array([s0]), mc.d_t, mc.mirror)
        e0, e1 = E(s), E(s + self.h / self.window)
        g = self._linear_gain()[..., None, None]
        A = (g * e0 - e1) / self.h  # [n, n, S, N]
        _, sv, Vh = np.linalg.svd(A, full_matrices=True)
        if sv.shape[-1] < Vh.shape[-1]:
            sv = np.concatenate([sv, np.zeros(sv.shape[:-1] + (Vh.shape[-1] - sv.shape[-1],))], axis=-1)
        # directions invisible to the linear defect still move the field, and
        # convection turns them into residual elsewhere: floor them, don't drop them
        inv = 1.0 / np.maximum(sv, SV_FLOOR * sv[..., :1])
        return np.conj(np.swapaxes(Vh, -1, -2)) * inv[..., None, :]

    def defect(self, params, s: np.ndarray, anchor=None, s0: float = 0.0):
        u = self.candidate(params, s, anchor, s0)
        u_next = self.candidate(params, s + self.h / self.window, anchor, s0)
        return np.asarray(step_defect(self.field(u), self.field(u_next), self.cfg.gamma, self.dt, self.solver).value)

    def multiplier(self, theta):
        """``M`` from the whitened coordinates ``theta`` (same shape as ``M``)."""
        zt = ad.mul(ad.einsum("xykr,crxy->ckxy", self.P, theta), self.r)
        return ad.add(self.M0, ad.mul(zt, self.inv_c))

    def params_with(self, leaves: Mapping):
        p = {**self.model.params, **leaves}
        p["ks.M"] = self.multiplier(leaves["ks.M"])
        return p

    def _sync(self) -> None:
        for k in self.names:
            if k != "ks.M":
                self.model.params[k] = self.vars[k]
        self.model.params["ks.M"] = np.asarray(self.multiplier(self.vars["ks.M"]))

    def candidate(self, params, s: np.ndarray, anchor=None, s0: float = 0.0):
        """Candidate trajectory coefficients at positions ``s`` (anchored at ``s0``)."""
        mc = self.model.cfg
        n = self.grid.n
        reduced = not self.cfg.train_reduction
        u = project(self.latent, self.u_last, len(s), n, params, mc, reduced=reduced, s=np.asarray(s))
        if s0 != 0.0 or anchor is not None:
            base = project(self.latent, self.u_last, 1, n, params, mc, reduced=reduced, s=np.array([s0]))
            shift = ad.add(ad.neg(ad.getitem(base, 0)), self.u_last if anchor is None else anchor)
            u = ad.add(u, ad.reshape(shift, (1,) + self.u_last.shape))
        return u

    def field(self, coeffs) -> SpectralField:
        return SpectralField(coeffs, self.grid, self.model.cfg.formulation == "vp")

    def eta_sq(self, params, s: np.ndarray, anchor=None, s0: float = 0.0):
        """Per-position squared step-defect norms (vector over ``s``)."""
        u = self.candidate(params, s, anchor, s0)
        u_next = self.candidate(params, s + self.h / self.window, anchor, s0)
        f, fn = self.field(u), self.field(u_next)
        if self.cfg.loss == "l2":
            d = step_defect(f, fn, self.cfg.gamma, self.dt, self.solver)
            return weighted_sq(d, np.ones((self.grid.n, self.grid.n)))
        return step_defect_eta_sq(f, fn, self.cfg.gamma, self.dt, self.solver, self.cfg.alpha)

    def report(self, params, t0: float = 0.0) -> EstimatorReport:
        s = output_positions(self.n_t)
        e2 = ad.value_of(self.eta_sq(params, s))
        return report_from_values(t0 + s * self.window, np.sqrt(e2), self.model.cfg.formulation)

    def grad_step(self, opt: OptimizerState, s: np.ndarray, weights: np.ndarray, anchor=None, s0: float = 0.0,
                  it: int = 0) -> float:
        with ad.Tape() as tape:
            leaves = {k: tape.var(self.vars[k]) for k in self.names}
            try:
                e2 = self.eta_sq(self.params_with(leaves), s, anchor, s0)
            except BlowUpError as exc:
                raise TrainingError(f"solver blow-up inside the fine step at iteration {it}: {exc}") from exc
            loss = ad.sum_(ad.mul(e2, weights))
            if not np.isfinite(loss.value):
                raise TrainingError(f"non-finite estimator at iteration {it}")
            tape.backward(loss)
        opt.update(self.vars, {k: leaves[k].grad for k in self.names if leaves[k].grad is not None})
        self._sync()
        return float(loss.value)


def _collocation(n_t: int, r: int) -> tuple[np.ndarray, np.ndarray]:
    """Positions ``j / (n_t r)`` for ``j = 0 .. n_t r`` with weights summing to ``n_t``."""
    s = np.arange(n_t * r + 1) / (n_t * r)
    return s, np.full(s.shape, n_t / len(s))


def finetune_parallel(model: StfnoModel, x: np.ndarray, solver: SolverConfig, snapshot_dt: float, n_t: int,
                      cfg: FinetuneConfig = FinetuneConfig(), t0: float = 0.0) -> FinetuneResult:
    """Minimize the summed squared step-defect estimator over the whole window at once.

    The backbone latent is computed once; each iteration evaluates the candidate
    at every collocation time and ``h = dt**gamma`` later, takes one fine solver
    step from each, and updates only the output layer.
    """
    ses = _Session(model, x, solver, snapshot_dt, n_t, cfg)
    s, w = _collocation(n_t, cfg.collocation)
    opt = OptimizerState(lr=cfg.lr, betas=cfg.betas, schedule=OneCycle(cfg.lr, cfg.iters) if cfg.schedule else None)
    history = [ses.report(ses.model.params, t0)]
    losses = []
    for it in range(cfg.iters):
        losses.append(ses.grad_step(opt, s, w, it=it))
        history.append(ses.report(ses.model.params, t0))
    coeffs = ses.candidate(ses.model.params, output_positions(n_t))
    return FinetuneResult(np.asarray(coeffs), ses.model, history, losses)


def finetune_guaranteed(model: StfnoModel, x: np.ndarray, solver: SolverConfig, snapshot_dt: float, n_t: int,
                        cfg: FinetuneConfig = FinetuneConfig(mode="guaranteed"), t0: float = 0.0) -> FinetuneResult:
    """Sequential variant: refine snapshot ``m`` until ``eta_m <= tol`` (at most ``iter_max`` steps).

    Snapshot ``m`` is anchored on the already corrected snapshot ``m - 1`` and
    each optimizer step descends ``eta_m^2`` alone.
    """
    ses = _Session(model, x, solver, snapshot_dt, n_t, cfg)
    one = np.ones(1)
    anchor = ses.u_last
    out, etas, steps, losses = [], [], [], []
    history = [ses.report(ses.model.params, t0)]
    for m in range(1, n_t + 1):
        s0 = (m - 1) / n_t
        s_m = np.array([m / n_t])
        opt = OptimizerState(lr=cfg.lr, betas=cfg.betas, schedule=OneCycle(cfg.lr, cfg.iter_max) if cfg.schedule else None)
        k = 0
        eta = float(np.sqrt(ad.value_of(ses.eta_sq(ses.model.params, s_m, anchor, s0))[0]))
        while eta > cfg.tol and k < cfg.iter_max:
            losses.append(ses.grad_step(opt, s_m, one, anchor, s0, it=k))
            k += 1
            eta = float(np.sqrt(ad.value_of(ses.eta_sq(ses.model.params, s_m, anchor, s0))[0]))
        if eta > cfg.tol:
            log.info("snapshot %d reached iter_max=%d with eta=%.3e", m, cfg.iter_max, eta)
        anchor = np.asarray(ses.candidate(ses.model.params, s_m, anchor, s0))[0]
        out.append(anchor)
        etas.append(eta)
        steps.append(k)
    times = t0 + output_positions(n_t) * ses.window
    history.append(report_from_values(times, np.array(etas), ses.model.cfg.formulation))
    return FinetuneResult(np.stack(out), ses.model, history, losses, steps)


def finetune_objective(model: StfnoModel, x: np.ndarray, solver: SolverConfig, snapshot_dt: float, n_t: int,
                       cfg: FinetuneConfig = FinetuneConfig()) -> tuple[Callable, np.ndarray]:
    """The parallel fine-tuning loss as a function of the raw multiplier ``M``.

    Returns ``(fn, M0)``; ``fn`` accepts an array or a tape variable, which
    makes it suitable for :func:`autodiff.grad_check`.
    """
    ses = _Session(model, x, solver, snapshot_dt, n_t, cfg)
    s, w = _collocation(n_t, cfg.collocation)

    def fn(M):
        return ad.sum_(ad.mul(ses.eta_sq({**ses.model.params, "ks.M": M}, s), w))

    return fn, ses.M0.copy()


def finetune(model: StfnoModel, x: np.ndarray, solver: SolverConfig, snapshot_dt: float, n_t: int,
             cfg: FinetuneConfig = FinetuneConfig(), t0: float = 0.0) -> FinetuneResult:
    fn = finetune_parallel if cfg.mode == "parallel" else finetune_guaranteed
    return fn(model, x, solver, snapshot_dt, n_t, cfg, t0)


# ------------------------------------------------------------------ evaluation


def model_time_derivative(model: StfnoModel, x: np.ndarray, n_t_out: int, window: float) -> np.ndarray:
    """Exact ``d/dt`` of the model's continuous-time output at the output positions."""
    v = latent_of(model, x)
    du_ds = project(v, np.fft.fft2(x[-1]), n_t_out, x.shape[-1], model.params, model.cfg, deriv=True)
    return np.asarray(du_ds) / window


def evaluate(pred: np.ndarray, truth: np.ndarray, solver: SolverConfig, snapshot_dt: float, L: float = 1.0,
             dt_final: np.ndarray | None = None, slope_band: tuple[float, float] = (2.0, 8.0)) -> dict[str, float]:
    """Metrics of a predicted window against a reference window (physical arrays ``[n_t, ...]``).

    ``dt_final`` is the time derivative of the final predicted snapshot in
    spatial coefficients; without it a one-sided second-order difference is used.
    """
    pred = np.asarray(pred, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {truth.shape}")
    n = truth.shape[-1]
    g = make_grid(n, L)
    vec = truth.ndim == 4
    P = np.fft.fft2(pred)
    T = np.fft.fft2(truth)
    fin_p, fin_t = SpectralField(P[-1], g, vec), SpectralField(T[-1], g, vec)
    out = {"rel_l2_final": float(rel_l2(fin_p, fin_t))}
    err = SpectralField(P - T, g, vec)
    ref = SpectralField(T, g, vec)
    one = np.ones((n, n))
    num = float(np.sum(weighted_sq(err, one)))
    den = float(np.sum(weighted_sq(ref, one)))
    out["bochner_l2_rel"] = math.sqrt(num / den) if den > 0 else float("nan")
    if dt_final is None:
        if len(P) < 3:
            raise ValueError("need three snapshots or an explicit time derivative")
        dt_final = (3 * P[-1] - 4 * P[-2] + P[-3]) / (2 * snapshot_dt)
    r = residual(fin_p, SpectralField(np.asarray(dt_final), g, vec), solver)
    out["residual_neg1_alpha0"] = float(neg_norm(r, 0.0))
    out["residual_neg1_alpha1"] = float(neg_norm(r, 1.0))
    try:
        out["slope_gap"] = _slope(P[-1], L, "vp" if vec else "vs", *slope_band) - _slope(
            T[-1], L, "vp" if vec else "vs", *slope_band)
    except ValueError:
        out["slope_gap"] = float("nan")
    return out


def evaluate_model(model: StfnoModel, x: np.ndarray, truth: np.ndarray, solver: SolverConfig,
                   snapshot_dt: float) -> dict[str, float]:
    n_t = truth.shape[0]
    pred = np.real(np.fft.ifft2(forward(model, x, n_t)))
    dtf = model_time_derivative(model, x, n_t, n_t * snapshot_dt)[-1]
    return evaluate(pred, truth, solver, snapshot_dt, model.cfg.L, dt_final=dtf)


def evaluate_corrected(result: FinetuneResult, x: np.ndarray, truth: np.ndarray, solver: SolverConfig,
                       snapshot_dt: float) -> dict[str, float]:
    n_t = truth.shape[0]
    dtf = model_time_derivative(result.model, x, n_t, n_t * snapshot_dt)[-1]
    return evaluate(result.physical(), truth, solver, snapshot_dt, result.model.cfg.L, dt_final=dtf)

