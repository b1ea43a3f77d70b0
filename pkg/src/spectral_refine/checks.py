"""Built-in property checks run by ``spectral-refine verify``."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from .grid import leray_project, make_grid, random_field, trilinear_form
from .norms import dual_norm_check, l2_norm, seminorm

L = 2 * np.pi


@dataclass(frozen=True)
class CheckResult:
    name: str
    value: float
    limit: float

    @property
    def ok(self) -> bool:
        return bool(np.isfinite(self.value) and self.value <= self.limit)

    def line(self) -> str:
        return f"{'PASS' if self.ok else 'FAIL'} {self.name}: {self.value:.3e} (limit {self.limit:.0e})"


def parseval(seed: int = 0, count: int = 100, n: int = 64) -> CheckResult:
    """FFT-based L2 norm against the mesh-weighted sum of squares."""
    g = make_grid(n, L)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(count):
        f = random_field(g, rng, mean_free=False)
        quad = np.sqrt(np.sum(f.physical() ** 2) * g.dx**2)
        worst = max(worst, abs(float(l2_norm(f)) - quad) / quad)
    return CheckResult("parseval", worst, 1e-12)


def skew_symmetry(seed: int = 0, count: int = 50, n: int = 32) -> CheckResult:
    """``c(z,u,v) + c(z,v,u)`` and ``c(z,v,v)`` vanish for divergence-free ``z``."""
    g = make_grid(n, L)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(count):
        z = leray_project(random_field(g, rng, is_vector=True, decay=2.0))
        u = random_field(g, rng, is_vector=True, decay=2.0)
        v = random_field(g, rng, is_vector=True, decay=2.0)
        scale = float(seminorm(z, 1.0) * seminorm(u, 1.0) * seminorm(v, 1.0))
        worst = max(worst, abs(trilinear_form(z, u, v) + trilinear_form(z, v, u)) / scale,
                    abs(trilinear_form(z, v, v)) / scale)
    return CheckResult("skew_symmetry", worst, 1e-10)


def projector(seed: int = 0, count: int = 20, n: int = 64) -> CheckResult:
    """Leray projection is idempotent and its range is divergence-free."""
    g = make_grid(n, L)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(count):
        u = random_field(g, rng, is_vector=True)
        p = leray_project(u)
        pp = leray_project(p)
        worst = max(worst, float(l2_norm(pp - p) / l2_norm(p)))
        div = g.kx_d * p.value[0] + g.ky_d * p.value[1]
        worst = max(worst, float(np.max(np.abs(div))) / float(np.max(np.abs(p.value))))
    return CheckResult("projector_idempotency", worst, 1e-12)


def norm_equivalence(seed: int = 0, count: int = 100, n: int = 64) -> CheckResult:
    """``|f|_-1`` from Fourier weights against the quadrature pairing ``<f, (-Lap)^-1 f>``."""
    g = make_grid(n, L)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(count):
        dual, spectral = dual_norm_check(random_field(g, rng))
        worst = max(worst, abs(dual - spectral) / spectral)
    return CheckResult("norm_equivalence", worst, 1e-10)


def finetune_problem(n: int = 32, seed: int = 0):
    """A small random-backbone fine-tuning objective on a decaying turbulence input."""
    from .datagen import IcSpec, initial_vorticity
    from .model import StfnoConfig, StfnoModel
    from .timestepping import SolverConfig, march
    from .train import FinetuneConfig, finetune_objective

    g = make_grid(n, L)
    w = initial_vorticity(IcSpec("mcwilliams", seed=seed + 3, normalize_energy=1.0), g)
    solver = SolverConfig(dt=0.01, nu=1e-2)
    xs = []
    for _ in range(6):
        xs.append(w.physical())
        w = march(w, solver, 5)
    model = StfnoModel(StfnoConfig(n=n, L=L, d_t=6, tau_max=3, k_max=6, width=4, layers=1, seed=seed))
    fn, M0 = finetune_objective(model, np.array(xs), solver, 0.05, 4, FinetuneConfig(collocation=2))
    rng = np.random.default_rng(seed + 1)
    M = M0 + 1e-2 * (rng.standard_normal(M0.shape) + 1j * rng.standard_normal(M0.shape))
    return fn, M


def grad_check_finetune(seed: int = 0, n: int = 32, samples: int = 50) -> CheckResult:
    """Tape gradient of the fine-tuning loss against central differences.

    The loss is a low-degree polynomial in the multiplier, so a wide step keeps
    truncation negligible while holding roundoff well below the tolerance.
    """
    fn, M = finetune_problem(n, seed)
    err = ad.grad_check(fn, [M], eps=0.1, n_samples=samples, seed=seed)
    return CheckResult("grad_check", err, 1e-6)


CHECKS: dict[str, Callable[..., CheckResult]] = {
    "parseval": parseval,
    "skew_symmetry": skew_symmetry,
    "projector_idempotency": projector,
    "norm_equivalence": norm_equivalence,
    "grad_check": grad_check_finetune,
}


def run_all(seed: int = 0) -> list[CheckResult]:
    return [fn(seed=seed) for fn in CHECKS.values()]
