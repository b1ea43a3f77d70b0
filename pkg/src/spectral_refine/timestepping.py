"""IMEX time marching for the vorticity and velocity formulations.

Convection (and forcing) is explicit; viscosity and linear drag are implicit
and diagonal in Fourier space. Both schemes run unchanged on tape variables,
which is what makes the fine-step operator used in fine-tuning differentiable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from . import autodiff as ad
from .grid import (
    SpectralField,
    SpectralTrajectory,
    convection_vp,
    convection_vs,
    inverse,
    leray_project,
)

SCHEMES = ("imex_rk4", "rk2_cn")


class BlowUpError(RuntimeError):
    def __init__(self, t: float, reason: str = "non-finite values"):
        super().__init__(f"solver blow-up at t={t:.6g}: {reason}")
        self.t = t


@dataclass(frozen=True)
class SolverConfig:
    scheme: str = "rk2_cn"
    dt: float = 1e-3
    nu: float = 1e-3
    forcing: SpectralField | None = None
    drag: float = 0.0
    growth_limit: float = 1e6

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}; expected one of {SCHEMES}")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.nu > 0:
            raise ValueError("nu must be positive")
        if self.drag < 0:
            raise ValueError("drag must be nonnegative")


@dataclass(frozen=True)
class SolverState:
    t: float
    field: SpectralField


def _explicit_rhs(f: SpectralField, cfg: SolverConfig, convection: bool = True):
    """Explicit part of the right-hand side as a coefficient array."""
    if f.is_vector:
        rhs = ad.neg(leray_project(convection_vp(f)).coeffs) if convection else None
        force = None if cfg.forcing is None else leray_project(cfg.forcing).value
    else:
        rhs = ad.neg(convection_vs(f).coeffs) if convection else None
        force = None if cfg.forcing is None else cfg.forcing.value
    if force is not None:
        rhs = force if rhs is None else ad.add(rhs, force)
    return rhs


def _linear_rate(f: SpectralField, cfg: SolverConfig) -> np.ndarray:
    return cfg.nu * f.grid.k_sq + cfg.drag


def _combine(base, h: float, incr, lin: np.ndarray, mode: str):
    """Solve one diagonal implicit stage: ``(1 + a h L) y = (1 - b h L) base + h incr``."""
    if mode == "euler":
        num, den = base, 1.0 + h * lin
    else:
        num, den = ad.mul(base, 1.0 - 0.5 * h * lin), 1.0 + 0.5 * h * lin
    if incr is not None:
        num = ad.add(num, ad.mul(incr, h))
    return ad.mul(num, 1.0 / den)


def _project_if_vector(c, f: SpectralField):
    return leray_project(f.with_coeffs(c)).coeffs if f.is_vector else c


def _advance_coeffs(f: SpectralField, cfg: SolverConfig, h: float, convection: bool = True):
    lin = _linear_rate(f, cfg)
    w0 = f.coeffs
    E = lambda c: _explicit_rhs(f.with_coeffs(c), cfg, convection)
    fix = lambda c: _project_if_vector(c, f)

    if cfg.scheme == "rk2_cn":
        k1 = E(w0)
        w1 = fix(_combine(w0, h, k1, lin, "cn"))
        k2 = E(w1)
        incr = None if k1 is None else ad.mul(ad.add(k1, k2), 0.5)
        return fix(_combine(w0, h, incr, lin, "cn"))

    k1 = E(w0)
    w1 = fix(_combine(w0, 0.5 * h, k1, lin, "euler"))
    k2 = E(w1)
    w2 = fix(_combine(w0, 0.5 * h, k2, lin, "euler"))
    k3 = E(w2)
    w3 = fix(_combine(w0, h, k3, lin, "euler"))
    k4 = E(w3)
    if k1 is None:
        incr = None
    else:
        incr = ad.mul(ad.add(ad.add(k1, k4), ad.mul(ad.add(k2, k3), 2.0)), 1.0 / 6.0)
    return fix(_combine(w0, h, incr, lin, "euler"))


def _check(before, after, t: float, limit: float):
    v = ad.value_of(after)
    if not np.all(np.isfinite(v)):
        raise BlowUpError(t)
    n0 = float(np.sqrt(np.sum(np.abs(ad.value_of(before)) ** 2)))
    n1 = float(np.sqrt(np.sum(np.abs(v) ** 2)))
    if n0 > 0 and n1 > limit * n0:
        raise BlowUpError(t, f"norm grew by {n1 / n0:.3g}x in one step")


def step(state: SolverState, cfg: SolverConfig, *, convection: bool = True,
         dt: float | None = None) -> SolverState:
    """Advance one time step. ``convection=False`` keeps only the linear part."""
    h = cfg.dt if dt is None else dt
    f = state.field
    c = _advance_coeffs(f, cfg, h, convection)
    t = state.t + h
    _check(f.coeffs, c, t, cfg.growth_limit)
    return SolverState(t, f.with_coeffs(c))


def b_gamma(field: SpectralField, gamma: int, dt: float, cfg: SolverConfig) -> SpectralField:
    """One solver step of size ``dt**gamma``; differentiable when ``field`` is on a tape."""
    if int(gamma) != gamma or gamma < 2:
        raise ValueError("gamma must be an integer >= 2")
    return step(SolverState(0.0, field), cfg, dt=dt**gamma).field


def dt_approx(field: SpectralField, gamma: int, dt: float, cfg: SolverConfig) -> SpectralField:
    """Fine-step time derivative ``(B(u) - u) / dt**gamma``."""
    h = dt**gamma
    nxt = b_gamma(field, gamma, dt, cfg)
    return (nxt - field) * (1.0 / h)


def advance(state: SolverState, cfg: SolverConfig, t_end: float, record_every: int = 1,
            callback: Callable[[SolverState], None] | None = None) -> SpectralTrajectory:
    """March to ``t_end`` recording every ``record_every`` steps (initial state included)."""
    if not t_end > state.t:
        raise ValueError("t_end must exceed the current time")
    if record_every < 1:
        raise ValueError("record_every must be >= 1")
    n_steps = int(math.floor((t_end - state.t) / cfg.dt + 1e-9))
    n_rec = n_steps // record_every
    t0 = state.t
    times = [t0]
    snaps = [state.field]
    for i in range(1, n_rec * record_every + 1):
        state = step(state, cfg)
        state = SolverState(t0 + i * cfg.dt, state.field)
        if callback is not None:
            callback(state)
        if i % record_every == 0:
            times.append(state.t)
            snaps.append(state.field)
    return SpectralTrajectory(np.array(times), snaps)


def march(field: SpectralField, cfg: SolverConfig, n_steps: int, t0: float = 0.0) -> SpectralField:
    """Advance ``n_steps`` steps and return only the final field."""
    state = SolverState(t0, field)
    for i in range(n_steps):
        state = SolverState(t0 + (i + 1) * cfg.dt, step(state, cfg).field)
    return state.field


def cfl_dt(u: SpectralField, safety: float = 0.5) -> float:
    """``safety * dx / max|u|``; infinite for a motionless field."""
    if not u.is_vector:
        raise ValueError("cfl_dt expects a velocity field")
    if not 0 < safety <= 1:
        raise ValueError("safety must lie in (0, 1]")
    phys = ad.value_of(inverse(u))
    speed = float(np.max(np.sqrt(np.sum(phys**2, axis=-3))))
    if speed == 0:
        return math.inf
    return safety * u.grid.dx / speed


def with_dt(cfg: SolverConfig, dt: float) -> SolverConfig:
    return replace(cfg, dt=dt)
