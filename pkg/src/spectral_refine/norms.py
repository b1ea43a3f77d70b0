"""FFT-realized Sobolev norms, Bochner aggregates and radial spectra.

All norms are scaled so that the ``s = 0`` norm equals the physical
``L^2(0, L)^2`` norm: with ``c_k = F_k / n^2`` the normalized coefficients,
``||f||^2 = L^2 * sum_k w(k) |c_k|^2``. Wavenumbers are the scaled ``2*pi*j/L``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .grid import Grid, SpectralField, SpectralTrajectory, inverse_laplacian


@dataclass(frozen=True)
class NormSpec:
    """Weight ``(alpha + |k|^2)^s``; ``quotient`` drops the mean mode."""

    s: float
    alpha: float = 1.0
    quotient: bool = False

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be nonnegative")
        if self.s < 0 and self.alpha == 0 and not self.quotient:
            object.__setattr__(self, "quotient", True)


@dataclass(frozen=True)
class SpectrumCurve:
    k_bins: np.ndarray
    values: np.ndarray

    def total(self) -> float:
        return float(np.sum(self.values))


def _reduce_axes(f: SpectralField) -> tuple[int, ...]:
    return (-3, -2, -1) if f.is_vector else (-2, -1)


def weighted_sq(f: SpectralField, weight: np.ndarray):
    """``L^2 * sum w |c|^2`` over the spatial (and component) axes; tape-aware."""
    g = f.grid
    scale = (g.L / g.n**2) ** 2
    return ad.sum_(ad.mul(ad.abs2(f.coeffs), weight * scale), axis=_reduce_axes(f))


def _sqrt(x):
    return ad.power(x, 0.5) if ad.is_var(x) else np.sqrt(x)


def _require_mean_free(f: SpectralField, what: str):
    if not f.is_mean_free():
        raise ValueError(f"{what} requires a mean-free field")


def _weight(grid: Grid, spec: NormSpec) -> np.ndarray:
    base = spec.alpha + grid.k_sq
    w = np.zeros_like(base)
    nz = base > 0
    w[nz] = base[nz] ** spec.s
    if spec.quotient:
        w[0, 0] = 0.0
    return w


def sobolev_norm(f: SpectralField, spec: NormSpec | float):
    """``(sum (alpha + |k|^2)^s |f_k|^2)^(1/2)``; a bare ``s`` means ``alpha = 1``."""
    if not isinstance(spec, NormSpec):
        spec = NormSpec(float(spec))
    if spec.s < 0 and spec.alpha == 0:
        _require_mean_free(f, "a negative norm without regularization")
    return _sqrt(weighted_sq(f, _weight(f.grid, spec)))


def seminorm(f: SpectralField, s: float):
    """``(sum_{k != 0} |k|^{2s} |f_k|^2)^(1/2)``."""
    return sobolev_norm(f, NormSpec(float(s), alpha=0.0, quotient=True))


def l2_norm(f: SpectralField):
    return _sqrt(weighted_sq(f, np.ones(f.grid.k_sq.shape)))


def neg_norm_sq(f: SpectralField, alpha: float = 0.0):
    if alpha == 0:
        _require_mean_free(f, "neg_norm with alpha=0")
    return weighted_sq(f, _weight(f.grid, NormSpec(-1.0, alpha=float(alpha), quotient=True)))


def neg_norm(f: SpectralField, alpha: float = 0.0):
    """Regularized ``H^-1`` norm ``(sum_{k != 0} (alpha + |k|^2)^-1 |f_k|^2)^(1/2)``."""
    return _sqrt(neg_norm_sq(f, alpha))


def dual_norm_check(f: SpectralField) -> tuple[float, float]:
    """Dual norm through ``<f, (-Lap)^-1 f>`` by grid quadrature, next to ``|f|_-1``."""
    _require_mean_free(f, "dual_norm_check")
    psi = inverse_laplacian(f)
    g = f.grid
    fp = f.physical()
    pp = psi.physical()
    pairing = float(np.sum(fp * pp)) * g.dx**2
    return float(np.sqrt(max(pairing, 0.0))), float(seminorm(f, -1.0))


def bochner_norm(traj: SpectralTrajectory, s: float | NormSpec = 0.0, p: float = 2) -> float:
    """``L^p`` in time of the spatial ``H^s`` norm; ``p=2`` uses the rectangle rule ``dt * sum``."""
    if len(traj) == 0:
        raise ValueError("empty trajectory")
    vals = np.array([float(sobolev_norm(f, s)) for f in traj.snapshots])
    if p == np.inf:
        return float(np.max(vals))
    if p != 2:
        raise ValueError("p must be 2 or inf")
    if not traj.is_uniform():
        raise ValueError("bochner_norm requires uniform time spacing")
    dt = traj.spacing if len(traj) > 1 else 1.0
    return float(np.sqrt(dt * np.sum(vals**2)))


def rel_l2(a: SpectralField, b: SpectralField):
    nb = l2_norm(b)
    if np.any(ad.value_of(nb) == 0):
        raise ValueError("reference field has zero norm")
    return l2_norm(a - b) / nb if not ad.is_var(nb) else ad.mul(l2_norm(a - b), ad.power(nb, -1.0))


def _shell_sum(grid: Grid, dens: np.ndarray) -> SpectrumCurve:
    bins = np.rint(grid.int_k).astype(int)
    kmax = int(bins.max())
    vals = np.bincount(bins.ravel(), weights=dens.ravel(), minlength=kmax + 1)
    return SpectrumCurve(np.arange(kmax + 1, dtype=float), vals)


def enstrophy_spectrum(omega: SpectralField) -> SpectrumCurve:
    """Shell sums of ``L^2 |omega_k|^2`` over ``k - 1/2 <= |j| < k + 1/2``."""
    if omega.is_vector:
        raise ValueError("enstrophy_spectrum expects a scalar vorticity")
    g = omega.grid
    dens = (g.L / g.n**2) ** 2 * np.abs(omega.value) ** 2
    return _shell_sum(g, dens)


def energy_spectrum(u: SpectralField) -> SpectrumCurve:
    """Shell sums of ``L^2 |u_k|^2 / 2`` (both components)."""
    if not u.is_vector:
        raise ValueError("energy_spectrum expects a velocity field")
    g = u.grid
    dens = 0.5 * (g.L / g.n**2) ** 2 * np.sum(np.abs(u.value) ** 2, axis=-3)
    return _shell_sum(g, dens)


def fit_slope(curve: SpectrumCurve, k_lo: float, k_hi: float) -> float:
    """Least-squares slope of ``log E`` against ``log k`` on ``[k_lo, k_hi]``."""
    sel = (curve.k_bins >= k_lo) & (curve.k_bins <= k_hi) & (curve.values > 0) & (curve.k_bins > 0)
    if np.count_nonzero(sel) < 2:
        raise ValueError(f"no usable spectrum bins in [{k_lo}, {k_hi}]")
    slope, _ = np.polyfit(np.log(curve.k_bins[sel]), np.log(curve.values[sel]), 1)
    return float(slope)
