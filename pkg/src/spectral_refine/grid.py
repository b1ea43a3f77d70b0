"""Periodic grids, spectral fields and the differential operators built on them.

Coefficients use the full-spectrum ``numpy.fft`` layout: forward transforms
are unnormalized and inverse transforms divide by ``n**2``. Physical arrays are
indexed ``[..., i, j]`` with ``x = i*dx`` and ``y = j*dx``; a vector field
stacks its two components on axis ``-3``.

Every operator accepts coefficient arrays that are either numpy arrays or
:class:`~spectral_refine.autodiff.Var`, so solver steps and residuals can be
recorded on a tape.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from . import autodiff as ad


@dataclass(frozen=True, eq=False)
class Grid:
    """Uniform square grid on the periodic box ``[0, L)^2``."""

    n: int
    L: float = 1.0

    def __post_init__(self):
        if int(self.n) != self.n or self.n % 2 or self.n < 8:
            raise ValueError(f"grid size must be an even integer >= 8, got {self.n}")
        if not self.L > 0:
            raise ValueError(f"domain length must be positive, got {self.L}")

    @property
    def dx(self) -> float:
        return self.L / self.n

    @cached_property
    def index(self) -> np.ndarray:
        """Signed integer mode indices in FFT order."""
        return np.fft.fftfreq(self.n, d=1.0 / self.n)

    @cached_property
    def kx(self) -> np.ndarray:
        return np.broadcast_to(self.index[:, None] * (2 * np.pi / self.L), (self.n, self.n))

    @cached_property
    def ky(self) -> np.ndarray:
        return np.broadcast_to(self.index[None, :] * (2 * np.pi / self.L), (self.n, self.n))

    @cached_property
    def k_sq(self) -> np.ndarray:
        return self.kx**2 + self.ky**2

    @cached_property
    def inv_k_sq(self) -> np.ndarray:
        out = np.zeros_like(self.k_sq)
        np.divide(1.0, self.k_sq, out=out, where=self.k_sq > 0)
        return out

    @cached_property
    def kx_d(self) -> np.ndarray:
        """First-derivative wavenumbers; the Nyquist row is zeroed so odd
        derivatives of real fields stay real."""
        return np.where(self.index[:, None] == -self.n // 2, 0.0, self.kx)

    @cached_property
    def ky_d(self) -> np.ndarray:
        return np.where(self.index[None, :] == -self.n // 2, 0.0, self.ky)

    @cached_property
    def inv_k_sq_d(self) -> np.ndarray:
        k2 = self.kx_d**2 + self.ky_d**2
        out = np.zeros_like(k2)
        np.divide(1.0, k2, out=out, where=k2 > 0)
        return out

    @cached_property
    def nyquist_free(self) -> np.ndarray:
        keep = self.index != -self.n // 2
        return keep[:, None] & keep[None, :]

    @cached_property
    def dealias_mask(self) -> np.ndarray:
        keep = np.abs(self.index) < self.n / 3
        return keep[:, None] & keep[None, :]

    @cached_property
    def int_k(self) -> np.ndarray:
        """Integer-index radius ``|j|`` per mode, used for shell binning."""
        return np.sqrt(self.index[:, None] ** 2 + self.index[None, :] ** 2)

    @cached_property
    def coords(self) -> tuple[np.ndarray, np.ndarray]:
        x1 = np.arange(self.n) * self.dx
        return np.meshgrid(x1, x1, indexing="ij")

    def same_as(self, other: "Grid") -> bool:
        return self.n == other.n and self.L == other.L

    def __repr__(self):
        return f"Grid(n={self.n}, L={self.L})"


def make_grid(n: int, L: float = 1.0) -> Grid:
    return Grid(n, float(L))


@dataclass(frozen=True, eq=False)
class SpectralField:
    """Fourier coefficients of a scalar field or of a 2-component vector field."""

    coeffs: object
    grid: Grid
    is_vector: bool = False

    def __post_init__(self):
        shape = ad.value_of(self.coeffs).shape
        n = self.grid.n
        if shape[-2:] != (n, n):
            raise ValueError(f"coefficient array {shape} does not match {self.grid}")
        if self.is_vector and (len(shape) < 3 or shape[-3] != 2):
            raise ValueError("vector field needs a component axis of length 2 at position -3")

    @property
    def value(self) -> np.ndarray:
        return ad.value_of(self.coeffs)

    def with_coeffs(self, coeffs) -> "SpectralField":
        return SpectralField(coeffs, self.grid, self.is_vector)

    def physical(self, n_out: int | None = None) -> np.ndarray:
        return ad.value_of(inverse(self, n_out))

    def mean_coeff(self) -> np.ndarray:
        """Normalized ``k = 0`` coefficient(s)."""
        return self.value[..., 0, 0] / self.grid.n**2

    def is_mean_free(self, tol: float = 1e-12) -> bool:
        v = self.value
        scale = max(1.0, float(np.max(np.abs(v))) / self.grid.n**2) if v.size else 1.0
        return bool(np.all(np.abs(self.mean_coeff()) <= tol * scale))

    def __add__(self, other: "SpectralField") -> "SpectralField":
        _check_same(self, other)
        return self.with_coeffs(ad.add(self.coeffs, other.coeffs))

    def __sub__(self, other: "SpectralField") -> "SpectralField":
        _check_same(self, other)
        return self.with_coeffs(ad.add(self.coeffs, ad.neg(other.coeffs)))

    def __mul__(self, c) -> "SpectralField":
        return self.with_coeffs(ad.mul(self.coeffs, c))

    __rmul__ = __mul__


@dataclass(frozen=True, eq=False)
class SpectralTrajectory:
    times: np.ndarray
    snapshots: list

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        if t.ndim != 1 or len(t) != len(self.snapshots):
            raise ValueError("times and snapshots must align")
        if len(t) > 1 and np.any(np.diff(t) <= 0):
            raise ValueError("times must be strictly increasing")
        object.__setattr__(self, "times", t)

    def __len__(self):
        return len(self.snapshots)

    @property
    def grid(self) -> Grid:
        return self.snapshots[0].grid

    @property
    def spacing(self) -> float:
        if len(self.times) < 2:
            return 0.0
        return float(self.times[1] - self.times[0])

    def is_uniform(self, rtol: float = 1e-12) -> bool:
        if len(self.times) < 3:
            return True
        d = np.diff(self.times)
        return bool(np.all(np.abs(d - d[0]) <= rtol * max(abs(d[0]), np.max(np.abs(self.times)))))

    def stacked(self) -> np.ndarray:
        return np.stack([s.value for s in self.snapshots])


def _check_same(*fields: SpectralField):
    g0 = fields[0].grid
    for f in fields[1:]:
        if not g0.same_as(f.grid):
            raise ValueError(f"grid mismatch: {g0} vs {f.grid}")


def _require_scalar(f: SpectralField, op: str):
    if f.is_vector:
        raise ValueError(f"{op} expects a scalar field")


def _require_vector(f: SpectralField, op: str):
    if not f.is_vector:
        raise ValueError(f"{op} expects a vector field")


# ------------------------------------------------------------------ transforms


def transform(field, grid: Grid | None = None, is_vector: bool = False) -> SpectralField:
    """Forward transform of a real physical array (``[..., n, n]``)."""
    arr = field if ad.is_var(field) else np.asarray(field, dtype=float)
    shape = ad.value_of(arr).shape
    if len(shape) < 2 or shape[-1] != shape[-2]:
        raise ValueError(f"physical field must be square, got shape {shape}")
    if grid is None:
        grid = make_grid(shape[-1])
    elif grid.n != shape[-1]:
        raise ValueError(f"field of size {shape[-1]} does not match {grid}")
    return SpectralField(ad.fft2(arr), grid, is_vector)


def _resample_axis(c, n_in: int, n_out: int, axis: int):
    """Spectral zero-padding (``n_out > n_in``) or truncation along one axis.

    On upsampling the Nyquist coefficient is split evenly between ``+-n_in/2`` so
    the interpolant stays real; on truncation the new Nyquist mode is dropped.
    """
    src = np.zeros(n_out, dtype=int)
    w = np.zeros(n_out)
    if n_out > n_in:
        # every input mode is kept; an even input's Nyquist is split between +-n_in/2
        k = np.fft.fftfreq(n_in, 1.0 / n_in).astype(int)
        src[np.mod(k, n_out)] = np.arange(n_in)
        w[np.mod(k, n_out)] = 1.0
        if n_in % 2 == 0:
            h = n_in // 2
            src[h] = src[n_out - h] = h
            w[h] = w[n_out - h] = 0.5
    else:
        # keep the output's proper modes; an even output drops its Nyquist
        k = np.fft.fftfreq(n_out, 1.0 / n_out).astype(int)
        proper = np.abs(k) < n_out / 2
        src[proper] = np.mod(k[proper], n_in)
        w[proper] = 1.0
    w *= n_out / n_in
    shape = [1] * ad.value_of(c).ndim
    shape[axis] = n_out
    return ad.mul(ad.take(c, src, axis), w.reshape(shape))


def resample_coeffs(coeffs, n_in: int, n_out: int):
    if n_out == n_in:
        return coeffs
    c = _resample_axis(coeffs, n_in, n_out, -2)
    return _resample_axis(c, n_in, n_out, -1)


def resample(f: SpectralField, n_out: int) -> SpectralField:
    """Spectral interpolation or truncation onto an ``n_out`` grid of the same box."""
    grid = make_grid(n_out, f.grid.L)
    return SpectralField(resample_coeffs(f.coeffs, f.grid.n, n_out), grid, f.is_vector)


def inverse(f: SpectralField, n_out: int | None = None):
    """Inverse transform, optionally onto a finer grid by trigonometric interpolation."""
    n = f.grid.n
    if n_out is None:
        n_out = n
    if n_out < n:
        raise ValueError(f"n_out={n_out} below the field resolution {n}")
    c = resample_coeffs(f.coeffs, n, n_out)
    return ad.real(ad.ifft2(c))


# ------------------------------------------------------------------- operators


def dealias(f: SpectralField) -> SpectralField:
    return f.with_coeffs(ad.mul(f.coeffs, f.grid.dealias_mask))


def _ddx(c, grid: Grid):
    return ad.mul(c, 1j * grid.kx_d)


def _ddy(c, grid: Grid):
    return ad.mul(c, 1j * grid.ky_d)


def _comp(c, i: int):
    return ad.getitem(c, (Ellipsis, i, slice(None), slice(None)))


def inverse_laplacian(omega: SpectralField) -> SpectralField:
    """Streamfunction ``psi`` with ``-Lap psi = omega`` and zero mean."""
    _require_scalar(omega, "inverse_laplacian")
    if not omega.is_mean_free():
        raise ValueError("inverse_laplacian requires a mean-free field")
    return omega.with_coeffs(ad.mul(omega.coeffs, omega.grid.inv_k_sq))


def rot_grad(psi: SpectralField) -> SpectralField:
    """Velocity ``(d_y psi, -d_x psi)``."""
    _require_scalar(psi, "rot_grad")
    g = psi.grid
    u = ad.stack([_ddy(psi.coeffs, g), ad.neg(_ddx(psi.coeffs, g))], axis=-3)
    return SpectralField(u, g, True)


def gradient(f: SpectralField) -> SpectralField:
    _require_scalar(f, "gradient")
    g = f.grid
    return SpectralField(ad.stack([_ddx(f.coeffs, g), _ddy(f.coeffs, g)], axis=-3), g, True)


def curl2d(u: SpectralField) -> SpectralField:
    """Scalar vorticity ``d_x u2 - d_y u1``."""
    _require_vector(u, "curl2d")
    g = u.grid
    w = ad.add(_ddx(_comp(u.coeffs, 1), g), ad.neg(_ddy(_comp(u.coeffs, 0), g)))
    return SpectralField(w, g, False)


def divergence(u: SpectralField) -> SpectralField:
    _require_vector(u, "divergence")
    g = u.grid
    return SpectralField(ad.add(_ddx(_comp(u.coeffs, 0), g), _ddy(_comp(u.coeffs, 1), g)), g, False)


def laplacian(f: SpectralField) -> SpectralField:
    return f.with_coeffs(ad.mul(f.coeffs, -f.grid.k_sq))


def leray_project(u: SpectralField) -> SpectralField:
    """Remove the gradient part: ``u - k (k.u)/|k|^2`` for ``k != 0``."""
    _require_vector(u, "leray_project")
    g = u.grid
    ux, uy = _comp(u.coeffs, 0), _comp(u.coeffs, 1)
    kdotu = ad.add(ad.mul(ux, g.kx_d * g.inv_k_sq_d), ad.mul(uy, g.ky_d * g.inv_k_sq_d))
    px = ad.add(ux, ad.neg(ad.mul(kdotu, g.kx_d)))
    py = ad.add(uy, ad.neg(ad.mul(kdotu, g.ky_d)))
    return SpectralField(ad.stack([px, py], axis=-3), g, True)


def _to_phys(c):
    return ad.real(ad.ifft2(c))


def convection_vs(omega: SpectralField) -> SpectralField:
    """De-aliased ``(Rot psi) . grad omega`` with ``-Lap psi = omega``.

    Both factors are restricted to the 2/3 band before the pointwise product,
    and the product is truncated again, so no aliased energy reaches the
    retained modes.
    """
    _require_scalar(omega, "convection_vs")
    g = omega.grid
    w = ad.mul(omega.coeffs, g.dealias_mask)
    psi = ad.mul(w, g.inv_k_sq)
    u1 = _to_phys(_ddy(psi, g))
    u2 = _to_phys(ad.neg(_ddx(psi, g)))
    wx = _to_phys(_ddx(w, g))
    wy = _to_phys(_ddy(w, g))
    prod = ad.add(ad.mul(u1, wx), ad.mul(u2, wy))
    return SpectralField(ad.mul(ad.fft2(prod), g.dealias_mask), g, False)


def convection_vp(u: SpectralField) -> SpectralField:
    """De-aliased ``(u . grad) u``, componentwise."""
    _require_vector(u, "convection_vp")
    g = u.grid
    c = ad.mul(u.coeffs, g.dealias_mask)
    u1, u2 = _to_phys(_comp(c, 0)), _to_phys(_comp(c, 1))
    dx = _to_phys(_ddx(c, g))
    dy = _to_phys(_ddy(c, g))
    prod = ad.add(ad.mul(ad.reshape(u1, _with_axis(u1)), dx), ad.mul(ad.reshape(u2, _with_axis(u2)), dy))
    return SpectralField(ad.mul(ad.fft2(prod), g.dealias_mask), g, True)


def _with_axis(x):
    s = ad.value_of(x).shape
    return s[:-2] + (1,) + s[-2:]


def _oversampled_n(n: int) -> int:
    return 2 * ((3 * n // 2 + 3) // 2)


def trilinear_form(z: SpectralField, u: SpectralField, v: SpectralField) -> float:
    """``c(z, u, v) = int ((z . grad) u) . v`` by quadrature on a >= 3n/2 grid."""
    for f, name in ((z, "z"), (u, "u"), (v, "v")):
        _require_vector(f, f"trilinear_form argument {name}")
    _check_same(z, u, v)
    g = z.grid
    m = _oversampled_n(g.n)
    up = lambda c: np.real(np.fft.ifft2(resample_coeffs(ad.value_of(c), g.n, m)))
    zc, uc, vc = z.value, u.value, v.value
    z1, z2 = up(zc[..., 0, :, :]), up(zc[..., 1, :, :])
    total = 0.0
    for i in range(2):
        dux = up(1j * g.kx_d * uc[..., i, :, :])
        duy = up(1j * g.ky_d * uc[..., i, :, :])
        total = total + np.sum((z1 * dux + z2 * duy) * up(vc[..., i, :, :]), axis=(-2, -1))
    return total * (g.L / m) ** 2


def random_field(grid: Grid, rng: np.random.Generator, is_vector: bool = False,
                 batch: tuple = (), mean_free: bool = True, decay: float = 0.0) -> SpectralField:
    """Random real field without Nyquist content.

    ``decay > 0`` scales each mode by ``(1 + |j|^2)^(-decay/2)`` (integer index),
    which makes the field smooth enough for quadrature-based checks.
    """
    shape = tuple(batch) + ((2,) if is_vector else ()) + (grid.n, grid.n)
    c = np.fft.fft2(rng.standard_normal(shape)) * grid.nyquist_free
    if decay:
        c = c * (1.0 + grid.int_k**2) ** (-decay / 2)
    if mean_free:
        c[..., 0, 0] = 0.0
    return SpectralField(c, grid, is_vector)
