"""Initial-condition samplers and trajectory dataset builders."""

from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .grid import Grid, SpectralField, inverse_laplacian, leray_project, make_grid, resample, rot_grad, transform
from .io import write_metadata, write_sfc1
from .timestepping import BlowUpError, SolverConfig, SolverState, step

log = logging.getLogger(__name__)

IC_KINDS = ("taylor_green", "grf", "mcwilliams")
DEFAULT_TAU = {"grf": 7.0, "mcwilliams": 1.0}


def philox(seed: int) -> np.random.Generator:
    """Counter-based generator, reproducible across platforms."""
    return np.random.Generator(np.random.Philox(int(seed) & (2**64 - 1)))


def derived_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([int(seed) & (2**64 - 1), index]).generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class IcSpec:
    kind: str = "mcwilliams"
    seed: int = 0
    kappa: int = 1
    alpha: float = 2.5
    tau: float | None = None
    k0: float = 4.0
    normalize_energy: float | None = None

    def __post_init__(self):
        if self.kind not in IC_KINDS:
            raise ValueError(f"unknown initial condition kind {self.kind!r}")
        if int(self.kappa) != self.kappa or self.kappa < 1:
            raise ValueError("kappa must be a positive integer")
        if self.k0 < 1:
            raise ValueError("k0 must be >= 1")
        if self.alpha <= 1:
            raise ValueError("alpha must exceed 1")
        if self.tau is not None and self.tau <= 0:
            raise ValueError("tau must be positive")
        if self.normalize_energy is not None and self.normalize_energy <= 0:
            raise ValueError("normalize_energy must be positive")

    @property
    def tau_value(self) -> float:
        return DEFAULT_TAU.get(self.kind, 1.0) if self.tau is None else float(self.tau)


@dataclass(frozen=True)
class DatasetSpec:
    n_train: int = 8
    n_test: int = 2
    n_gen: int = 128
    n: int = 64
    L: float = 1.0
    burn_in: float = 0.0
    ell: int = 10
    n_t: int = 10
    snapshot_dt: float = 0.1
    formulation: str = "vs"

    def __post_init__(self):
        if self.n_train < 0 or self.n_test < 0:
            raise ValueError("trajectory counts must be nonnegative")
        if self.burn_in < 0:
            raise ValueError("burn_in must be nonnegative")
        if self.n > self.n_gen:
            raise ValueError("target grid must not exceed the generation grid")
        if self.ell < 1 or self.n_t < 1:
            raise ValueError("ell and n_t must be positive")
        if self.formulation not in ("vs", "vp"):
            raise ValueError("formulation must be 'vs' or 'vp'")

    def steps_per_snapshot(self, dt: float) -> int:
        r = self.snapshot_dt / dt
        m = int(round(r))
        if m < 1 or abs(r - m) > 1e-9 * max(1.0, r):
            raise ValueError("snapshot_dt must be an integer multiple of the solver dt")
        return m

    def burn_in_steps(self, dt: float) -> int:
        r = self.burn_in / dt
        m = int(round(r))
        if abs(r - m) > 1e-9 * max(1.0, r):
            raise ValueError("burn_in must be an integer multiple of the solver dt")
        return m


# ------------------------------------------------------------------ samplers


def taylor_green(kappa: int, nu: float, t: float, grid: Grid) -> tuple[SpectralField, SpectralField]:
    """Exact decaying vortex with ``kappa`` cells per period (wavenumber ``2*pi*kappa/L``)."""
    if int(kappa) != kappa or kappa < 1:
        raise ValueError("kappa must be a positive integer")
    if 2 * kappa >= grid.n // 2:
        raise ValueError(f"kappa={kappa} is not resolved on {grid}")
    k = 2 * np.pi * kappa / grid.L
    X, Y = grid.coords
    decay = np.exp(-2 * k * k * nu * t)
    u1 = decay * np.sin(k * X) * np.cos(k * Y)
    u2 = -decay * np.cos(k * X) * np.sin(k * Y)
    omega = 2 * k * decay * np.sin(k * X) * np.sin(k * Y)
    return transform(np.stack([u1, u2]), grid, is_vector=True), transform(omega, grid)


def _white_coeffs(grid: Grid, rng: np.random.Generator, batch: tuple = ()) -> np.ndarray:
    """Normalized FFT coefficients of unit white noise, with ``E|c|^2 = 1``."""
    return np.fft.fft2(rng.standard_normal(tuple(batch) + (grid.n, grid.n))) / grid.n


def _finish(c: np.ndarray, grid: Grid) -> np.ndarray:
    c = c * grid.nyquist_free
    c[..., 0, 0] = 0.0
    return c


def grf_sample(grid: Grid, alpha: float = 2.5, tau: float = 7.0, seed: int = 0, batch: tuple = ()) -> SpectralField:
    """Mean-free Gaussian field; normalized coefficient std ``tau^(alpha-1) (|k|^2 + tau^2)^(-alpha/2)``."""
    if alpha <= 0 or tau <= 0:
        raise ValueError("alpha and tau must be positive")
    std = tau ** (alpha - 1) * (grid.k_sq + tau**2) ** (-alpha / 2)
    c = _white_coeffs(grid, philox(seed), batch) * std
    return SpectralField(_finish(c, grid) * grid.n**2, grid)


def kinetic_energy(omega: SpectralField) -> np.ndarray:
    """``0.5 * ||u||^2`` for the velocity recovered from vorticity."""
    g = omega.grid
    c = omega.value / g.n**2
    return 0.5 * g.L**2 * np.sum(np.abs(c) ** 2 * g.inv_k_sq, axis=(-2, -1))


def mcwilliams_psi_modulus(grid: Grid, k0: float, tau: float) -> np.ndarray:
    """``|psi_k|^2 = k^-1 (tau^2 + (k/k0)^4)^-1`` with ``k`` the integer-index radius."""
    k = grid.int_k
    out = np.zeros_like(k)
    nz = k > 0
    out[nz] = 1.0 / (k[nz] * (tau**2 + (k[nz] / k0) ** 4))
    return out


def mcwilliams_sample(grid: Grid, k0: float = 4.0, tau: float = 1.0, seed: int = 0,
                      normalize_energy: float | None = 1.0, batch: tuple = ()) -> SpectralField:
    """Random-phase streamfunction with the McWilliams modulus law, returned as vorticity."""
    if k0 < 1:
        raise ValueError("k0 must be >= 1")
    w = _white_coeffs(grid, philox(seed), batch)
    mag = np.abs(w)
    phase = np.divide(w, mag, out=np.zeros_like(w), where=mag > 0)
    psi = phase * np.sqrt(mcwilliams_psi_modulus(grid, k0, tau))
    omega = SpectralField(_finish(psi * grid.k_sq, grid) * grid.n**2, grid)
    if normalize_energy is not None:
        e = kinetic_energy(omega)
        omega = omega.with_coeffs(omega.value * np.sqrt(normalize_energy / e)[..., None, None])
    return omega


def initial_vorticity(ic: IcSpec, grid: Grid, index: int = 0, nu: float = 1e-3) -> SpectralField:
    """IC number ``index`` of a family: Taylor-Green uses ``kappa + index``, random kinds derive seeds."""
    if ic.kind == "taylor_green":
        omega = taylor_green(ic.kappa + index, nu, 0.0, grid)[1]
    elif ic.kind == "grf":
        omega = grf_sample(grid, ic.alpha, ic.tau_value, derived_seed(ic.seed, index))
    else:
        omega = mcwilliams_sample(grid, ic.k0, ic.tau_value, derived_seed(ic.seed, index), None)
    if ic.normalize_energy is not None:
        omega = omega * float(np.sqrt(ic.normalize_energy / kinetic_energy(omega)))
    return omega


def velocity_from_vorticity(omega: SpectralField) -> SpectralField:
    return leray_project(rot_grad(inverse_laplacian(omega)))


# ------------------------------------------------------------------ datasets


def _worker_count() -> int:
    env = os.environ.get("SPECTRAL_REFINE_THREADS")
    cap = os.cpu_count() or 1
    if env:
        try:
            return max(1, min(int(env), cap))
        except ValueError:
            pass
    return cap


def _run_batch(field: SpectralField, spec: DatasetSpec, cfg: SolverConfig) -> np.ndarray:
    """Burn in a batch, then record ``ell + n_t`` snapshots as ``[batch, time, ...]`` physical arrays."""
    per = spec.steps_per_snapshot(cfg.dt)
    state = SolverState(0.0, field)
    for i in range(spec.burn_in_steps(cfg.dt)):
        state = SolverState((i + 1) * cfg.dt, step(state, cfg).field)
    snaps = []
    for j in range(spec.ell + spec.n_t):
        if j:
            for i in range(per):
                state = SolverState(state.t + cfg.dt, step(state, cfg).field)
        snaps.append(resample(state.field, spec.n).physical())
    return np.stack(snaps, axis=1)


def simulate_family(ic: IcSpec, indices: list[int], spec: DatasetSpec, cfg: SolverConfig,
                    chunk: int = 8) -> tuple[np.ndarray, list[int]]:
    """Simulate trajectories ``indices`` in batched chunks; blown-up members are dropped and logged."""
    grid = make_grid(spec.n_gen, spec.L)

    def ic_field(idxs):
        om = [initial_vorticity(ic, grid, i, cfg.nu) for i in idxs]
        w = SpectralField(np.stack([o.value for o in om]), grid)
        return velocity_from_vorticity(w) if spec.formulation == "vp" else w

    def run(idxs):
        try:
            return _run_batch(ic_field(idxs), spec, cfg), list(idxs)
        except BlowUpError:
            if len(idxs) == 1:
                log.warning("trajectory %d (seed %d) blew up; skipped", idxs[0],
                            derived_seed(ic.seed, idxs[0]))
                return None, []
            res = [run([i]) for i in idxs]
            kept = [r for r in res if r[0] is not None]
            if not kept:
                return None, []
            return np.concatenate([r[0] for r in kept]), [i for r in kept for i in r[1]]

    chunks = [indices[i:i + chunk] for i in range(0, len(indices), chunk)]
    workers = min(_worker_count(), len(chunks)) or 1
    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            results = list(ex.map(run, chunks))
    else:
        results = [run(c) for c in chunks]
    arrays = [r[0] for r in results if r[0] is not None]
    kept = [i for r in results for i in r[1]]
    if not arrays:
        return np.zeros((0,)), []
    return np.concatenate(arrays), kept


def generate_dataset(spec: DatasetSpec, ic: IcSpec, cfg: SolverConfig, out_dir: str | Path | None = None,
                     chunk: int = 8) -> dict[str, np.ndarray]:
    """Build train/test splits of ``ell`` input and ``n_t`` output snapshots.

    Returns the arrays; with ``out_dir`` also writes ``train.sfc1``, ``test.sfc1`` and ``meta.txt``.
    """
    total = spec.n_train + spec.n_test
    data, kept = simulate_family(ic, list(range(total)), spec, cfg, chunk)
    t_in = spec.burn_in + spec.snapshot_dt * np.arange(spec.ell)
    t_out = spec.burn_in + spec.snapshot_dt * np.arange(spec.ell, spec.ell + spec.n_t)
    out: dict[str, np.ndarray] = {"t_in": t_in, "t_out": t_out}
    kept_arr = np.asarray(kept)
    for name, sel in (("train", kept_arr < spec.n_train), ("test", kept_arr >= spec.n_train)):
        part = data[sel] if len(kept) else np.zeros((0, spec.ell + spec.n_t, spec.n, spec.n))
        out[f"{name}_input"] = part[:, :spec.ell]
        out[f"{name}_output"] = part[:, spec.ell:]
        out[f"{name}_index"] = kept_arr[sel].astype(float)
    if out_dir is not None:
        d = Path(out_dir)
        d.mkdir(parents=True, exist_ok=True)
        for name in ("train", "test"):
            write_sfc1(d / f"{name}.sfc1", {
                "input": out[f"{name}_input"], "output": out[f"{name}_output"],
                "t_in": t_in, "t_out": t_out, "index": out[f"{name}_index"],
            })
        write_metadata(d / "meta.txt", {
            "n": spec.n, "n_gen": spec.n_gen, "L": spec.L, "dt": cfg.dt, "snapshot_dt": spec.snapshot_dt,
            "ell": spec.ell, "n_t": spec.n_t, "burn_in": spec.burn_in, "nu": cfg.nu, "drag": cfg.drag,
            "scheme": cfg.scheme, "formulation": spec.formulation, "ic_kind": ic.kind, "kappa": ic.kappa,
            "alpha": ic.alpha, "tau": ic.tau_value, "k0": ic.k0,
            "normalize_energy": "none" if ic.normalize_energy is None else ic.normalize_energy,
            "seed": ic.seed, "n_train": spec.n_train, "n_test": spec.n_test,
        })
    return out


def with_spec(spec: DatasetSpec, **kw) -> DatasetSpec:
    return replace(spec, **kw)
