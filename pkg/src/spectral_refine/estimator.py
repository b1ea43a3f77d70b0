"""PDE residuals and the negative-norm a posteriori estimator."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .grid import SpectralField, SpectralTrajectory, _check_same, convection_vp, convection_vs, laplacian, leray_project
from .io import fmt
from .norms import neg_norm, neg_norm_sq
from .timestepping import SolverConfig, b_gamma


def residual_vs(omega: SpectralField, dt_omega: SpectralField, curl_f: SpectralField | None, nu: float,
                drag: float = 0.0) -> SpectralField:
    """``curl f - d_t omega - u . grad omega + nu Lap omega - drag omega``."""
    if omega.is_vector or dt_omega.is_vector:
        raise ValueError("residual_vs expects scalar fields")
    _check_same(omega, dt_omega, *([] if curl_f is None else [curl_f]))
    if not omega.is_mean_free():
        raise ValueError("residual_vs requires a mean-free vorticity")
    r = laplacian(omega) * nu - convection_vs(omega) - dt_omega
    if drag:
        r = r - omega * drag
    if curl_f is not None:
        r = r + curl_f
    return r


def residual_vp(u: SpectralField, dt_u: SpectralField, f: SpectralField | None, nu: float,
                drag: float = 0.0) -> SpectralField:
    """Solenoidal part of ``f - d_t u - (u . grad) u + nu Lap u - drag u``."""
    if not (u.is_vector and dt_u.is_vector):
        raise ValueError("residual_vp expects vector fields")
    _check_same(u, dt_u, *([] if f is None else [f]))
    r = laplacian(u) * nu - convection_vp(u) - dt_u
    if drag:
        r = r - u * drag
    if f is not None:
        r = r + f
    return leray_project(r)


def residual(field: SpectralField, dt_field: SpectralField, cfg: SolverConfig) -> SpectralField:
    fn = residual_vp if field.is_vector else residual_vs
    return fn(field, dt_field, cfg.forcing, cfg.nu, cfg.drag)


def eta_m(field: SpectralField, dt_field: SpectralField, cfg: SolverConfig, alpha: float = 0.0):
    """``||R||_{-1,alpha}`` of one snapshot (differentiable)."""
    return neg_norm(residual(field, dt_field, cfg), alpha)


def step_defect(u: SpectralField, u_next: SpectralField, gamma: int, dt: float, cfg: SolverConfig) -> SpectralField:
    """``(B(u) - u_next) / h`` with ``h = dt**gamma`` and ``B`` one fine solver step.

    When ``u_next`` is the candidate trajectory evaluated ``h`` later, this equals
    the PDE residual of the candidate up to ``O(h)``.
    """
    h = dt**gamma
    return (b_gamma(u, gamma, dt, cfg) - u_next) * (1.0 / h)


def step_defect_eta_sq(u: SpectralField, u_next: SpectralField, gamma: int, dt: float, cfg: SolverConfig,
                       alpha: float = 0.0):
    """Per-snapshot ``eta^2`` of the step defect; batched over leading axes."""
    return neg_norm_sq(step_defect(u, u_next, gamma, dt, cfg), alpha)


def centered_dt(traj: SpectralTrajectory) -> list[SpectralField]:
    """Second-order differences: centered inside, one-sided three-point at the ends."""
    if len(traj) < 3:
        raise ValueError("need at least three snapshots")
    if not traj.is_uniform():
        raise ValueError("centered_dt requires uniform spacing")
    h = traj.spacing
    s = traj.snapshots
    out = [(s[0] * -3.0 + s[1] * 4.0 - s[2]) * (0.5 / h)]
    out += [(s[i + 1] - s[i - 1]) * (0.5 / h) for i in range(1, len(s) - 1)]
    out.append((s[-1] * 3.0 - s[-2] * 4.0 + s[-3]) * (0.5 / h))
    return out


@dataclass
class EstimatorReport:
    times: np.ndarray
    eta: np.ndarray
    breakdown: dict[str, np.ndarray] = field(default_factory=dict)
    formulation: str = "vs"

    @property
    def eta_total(self) -> float:
        return float(np.sqrt(np.sum(self.eta**2)))

    def to_csv(self, path: str | Path) -> None:
        lines = ["t,eta"] + [f"{fmt(t)},{fmt(e)}" for t, e in zip(self.times, self.eta)]
        lines.append(f"total,{fmt(self.eta_total)}")
        Path(path).write_text("\n".join(lines) + "\n")


def _term_norms(u: SpectralField, dt_u: SpectralField, cfg: SolverConfig, alpha: float) -> dict[str, float]:
    conv = convection_vp(u) if u.is_vector else convection_vs(u)
    proj = leray_project if u.is_vector else (lambda f: f)
    terms = {"dt": dt_u, "convection": conv, "diffusion": laplacian(u) * cfg.nu}
    if cfg.forcing is not None:
        terms["forcing"] = cfg.forcing
    return {k: float(neg_norm(proj(v), alpha)) for k, v in terms.items()}


def eta_total(traj: SpectralTrajectory | list[SpectralField], dt_fields: list[SpectralField], cfg: SolverConfig,
              alpha: float = 0.0, times: np.ndarray | None = None) -> EstimatorReport:
    """Per-snapshot ``eta_m`` with a per-term breakdown; ``eta_total = sqrt(sum eta_m^2)``."""
    snaps = traj.snapshots if isinstance(traj, SpectralTrajectory) else list(traj)
    if len(snaps) != len(dt_fields):
        raise ValueError(f"{len(snaps)} snapshots but {len(dt_fields)} time derivatives")
    if times is None:
        times = traj.times if isinstance(traj, SpectralTrajectory) else np.arange(len(snaps), dtype=float)
    etas, parts = [], {}
    for u, d in zip(snaps, dt_fields):
        etas.append(float(eta_m(u, d, cfg, alpha)))
        for k, v in _term_norms(u, d, cfg, alpha).items():
            parts.setdefault(k, []).append(v)
    form = "vp" if snaps and snaps[0].is_vector else "vs"
    return EstimatorReport(np.asarray(times, dtype=float), np.array(etas),
                           {k: np.array(v) for k, v in parts.items()}, form)


def report_from_values(times, etas, formulation: str = "vs") -> EstimatorReport:
    return EstimatorReport(np.asarray(times, dtype=float), np.asarray(etas, dtype=float), {}, formulation)


def trajectory_report(traj: SpectralTrajectory, cfg: SolverConfig, alpha: float = 0.0) -> EstimatorReport:
    """Estimator for a discrete trajectory with centered-difference time derivatives."""
    return eta_total(traj, centered_dt(traj), cfg, alpha)
