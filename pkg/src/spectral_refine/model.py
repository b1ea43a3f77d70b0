"""Trajectory-to-trajectory spatiotemporal Fourier neural operator (toy scale).

Layout conventions: a latent trajectory is ``[channels, time, n, n]``; inputs
are ``[ell, n, n]`` (vorticity) or ``[ell, 2, n, n]`` (velocity). Every
operation is spectral in space or pointwise, so the model can be evaluated on
any grid at least as fine as the one it was built for.

The output layer ``K_S`` multiplies the full space-time spectrum of a single
reduced channel by ``1 + M``. The reduced latent is mirrored in time before the
transform, so the resulting trigonometric series is smooth across the window
ends and can be evaluated at any time inside the window. The prediction is
anchored on the last input snapshot: ``u(s) = u_last + S(s) - S(0)`` where
``s`` in ``[0, 1]`` is the normalized position inside the output window.
"""

from __future__ import annotations

import zlib
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Callable, Mapping

import numpy as np

from . import autodiff as ad
from .grid import Grid, SpectralField, _resample_axis, leray_project, make_grid
from .io import read_sfc1, write_sfc1

N_POS = 5  # t, cos/sin of x, cos/sin of y


@dataclass(frozen=True)
class StfnoConfig:
    layers: int = 2
    width: int = 8
    d_t: int = 10
    tau_max: int = 5
    k_max: int = 8
    t_pad: float = 0.25
    helmholtz: bool = False
    formulation: str = "vs"
    activation: str = "gelu"
    layer_norm: bool = True
    mirror: bool = True
    n: int = 64
    L: float = 1.0
    seed: int = 0
    lift_modes: int = 0  # 0 means k_max

    def __post_init__(self):
        if self.layers < 0 or self.width < 1 or self.d_t < 2:
            raise ValueError("invalid layer count, width or latent time size")
        if not 1 <= self.tau_max <= self.d_t // 2:
            raise ValueError("tau_max must lie in [1, d_t/2]")
        if not 1 <= self.k_max <= self.n // 2:
            raise ValueError("k_max must lie in [1, n/2]")
        if self.formulation not in ("vs", "vp"):
            raise ValueError("formulation must be 'vs' or 'vp'")
        if self.activation not in ("gelu", "identity"):
            raise ValueError("activation must be 'gelu' or 'identity'")
        if self.t_pad < 0:
            raise ValueError("t_pad must be nonnegative")
        if self.helmholtz and self.width % 2:
            raise ValueError("the Helmholtz layer needs an even width")

    @property
    def channels(self) -> int:
        return 2 if self.formulation == "vp" else 1

    @property
    def n_lift_modes(self) -> int:
        return self.lift_modes or self.k_max

    @property
    def ks_len(self) -> int:
        return 2 * self.d_t if self.mirror else self.d_t


@dataclass
class SpectralConvParams:
    R: np.ndarray  # [4 blocks, tau_max, k_max, k_max, d_v, d_v] complex
    W: np.ndarray  # [d_v + 1, d_v]


class StfnoModel:
    """Configuration plus an ordered parameter dictionary and a trainable set."""

    def __init__(self, cfg: StfnoConfig, params: Mapping[str, np.ndarray] | None = None):
        self.cfg = cfg
        self.params: dict[str, np.ndarray] = dict(params) if params is not None else init_params(cfg)
        self.trainable: set[str] = set(self.params)

    @property
    def grid(self) -> Grid:
        return make_grid(self.cfg.n, self.cfg.L)

    def freeze(self, keep: tuple[str, ...] = ("ks.M",)) -> None:
        """Freeze every group except ``keep`` (the fine-tunable output layer by default)."""
        missing = [k for k in keep if k not in self.params]
        if missing:
            raise KeyError(f"unknown parameters {missing}")
        self.trainable = set(keep)

    def unfreeze(self) -> None:
        self.trainable = set(self.params)

    def copy(self) -> "StfnoModel":
        m = StfnoModel(self.cfg, {k: v.copy() for k, v in self.params.items()})
        m.trainable = set(self.trainable)
        return m

    def n_params(self) -> int:
        return int(sum(v.size * (2 if np.iscomplexobj(v) else 1) for v in self.params.values()))

    def checksum(self, names=None) -> int:
        names = sorted(self.params) if names is None else names
        crc = 0
        for k in names:
            crc = zlib.crc32(np.ascontiguousarray(self.params[k]).tobytes(), crc)
        return crc

    def spectral_conv_params(self, i: int) -> SpectralConvParams:
        return SpectralConvParams(self.params[f"conv{i}.R"], self.params[f"conv{i}.W"])


def init_params(cfg: StfnoConfig) -> dict[str, np.ndarray]:
    """Deterministic initialization from ``cfg.seed``."""
    rng = np.random.Generator(np.random.Philox(cfg.seed))
    d, c = cfg.width, cfg.channels
    km = cfg.n_lift_modes
    p: dict[str, np.ndarray] = {}
    p["lift.A"] = rng.standard_normal((d, c)) / np.sqrt(c)
    p["lift.b"] = np.zeros(d)
    p["lift.D"] = np.zeros((d, 2 * km - 1, 2 * km - 1), dtype=complex)
    p["lift.Wp"] = rng.standard_normal((d, N_POS)) * 0.1
    p["lift.gamma"] = np.ones(d)
    p["lift.beta"] = np.zeros(d)
    scale = 1.0 / (d * d)
    shape = (4, cfg.tau_max, cfg.k_max, cfg.k_max, d, d)
    for i in range(cfg.layers):
        p[f"conv{i}.R"] = scale * (rng.random(shape) + 1j * rng.random(shape))
        W = np.zeros((d + 1, d))
        W[:d] = np.eye(d) + rng.standard_normal((d, d)) / np.sqrt(d) * 0.5
        p[f"conv{i}.W"] = W
    p["proj.q"] = rng.standard_normal((c, d)) / np.sqrt(d)
    p["proj.b"] = np.zeros(c)
    p["ks.M"] = np.zeros((c, cfg.ks_len, cfg.n, cfg.n), dtype=complex)
    return p


# ------------------------------------------------------------------ helpers


def _signed_rows(k: int, n: int) -> np.ndarray:
    """Array indices of the signed modes ``-k+1 .. k-1`` in FFT order."""
    return np.concatenate([np.arange(k), np.arange(n - k + 1, n)])


def _activation(cfg: StfnoConfig):
    return ad.gelu if cfg.activation == "gelu" else (lambda x: x)


def positional_features(d_t: int, n: int) -> np.ndarray:
    """``[N_POS, d_t, n, n]``: normalized latent time and the first Fourier mode in x and y."""
    t = np.linspace(0.0, 1.0, d_t)
    x = np.arange(n) * (2 * np.pi / n)
    T = np.broadcast_to(t[:, None, None], (d_t, n, n))
    cx = np.broadcast_to(np.cos(x)[None, :, None], (d_t, n, n))
    sx = np.broadcast_to(np.sin(x)[None, :, None], (d_t, n, n))
    cy = np.broadcast_to(np.cos(x)[None, None, :], (d_t, n, n))
    sy = np.broadcast_to(np.sin(x)[None, None, :], (d_t, n, n))
    return np.stack([T, cx, sx, cy, sy])


def _channels_first(x, cfg: StfnoConfig):
    """Input trajectory to ``[C, ell, n, n]``."""
    if cfg.formulation == "vp":
        return ad.moveaxis(x, 1, 0)
    return ad.reshape(x, (1,) + ad.value_of(x).shape)


def layer_norm(v, gamma, beta, eps: float = 1e-5):
    """Normalize over the channel axis (axis 0) at every space-time point."""
    mu = ad.mean(v, axis=0, keepdims=True)
    xc = ad.add(v, ad.neg(mu))
    var = ad.mean(ad.mul(xc, xc), axis=0, keepdims=True)
    y = ad.mul(xc, ad.power(ad.add(var, eps), -0.5))
    return ad.add(ad.mul(y, ad.reshape(gamma, (-1, 1, 1, 1))), ad.reshape(beta, (-1, 1, 1, 1)))


def _helmholtz(v, n: int, L: float):
    """Project channel pairs ``(2i, 2i+1)`` of a latent onto divergence-free fields."""
    d, t = ad.value_of(v).shape[:2]
    vv = ad.moveaxis(ad.reshape(v, (d // 2, 2, t, n, n)), 2, 1)  # [d/2, t, 2, n, n]
    f = SpectralField(ad.fft2(vv), make_grid(n, L), is_vector=True)
    out = ad.real(ad.ifft2(leray_project(f).coeffs))
    return ad.reshape(ad.moveaxis(out, 1, 2), (d, t, n, n))


# ------------------------------------------------------------------ layers


def lift(x, params: Mapping, cfg: StfnoConfig):
    """Map ``ell >= 2`` input snapshots to a ``[d_v, d_t, n, n]`` latent."""
    xv = ad.value_of(x)
    ell = xv.shape[0]
    if ell < 2:
        raise ValueError("lifting needs at least two input snapshots")
    n = xv.shape[-1]
    xc = _channels_first(x, cfg)  # [C, ell, n, n]
    v = ad.einsum("dc,ctxy->dtxy", params["lift.A"], xc)
    v = ad.add(v, ad.reshape(params["lift.b"], (-1, 1, 1, 1)))
    pad = int(np.ceil(cfg.t_pad * ell))
    if pad:
        wrap = ad.getitem(v, (slice(None), slice(0, pad)))
        v = ad.concatenate([v, wrap], axis=1)
    m = ell + pad
    vt = ad.fftn(v, axes=(1,))
    vt = _resample_axis(vt, m, cfg.d_t, axis=1) if m != cfg.d_t else vt
    v = ad.real(ad.ifftn(vt, axes=(1,)))
    # depthwise global spatial convolution on the retained modes, identity elsewhere
    km = cfg.n_lift_modes
    rows = _signed_rows(km, n)
    idx = (slice(None), rows[:, None], rows[None, :])
    D = ad.scatter(params["lift.D"], (cfg.width, n, n), idx)
    vs = ad.fft2(v)
    vs = ad.add(vs, ad.mul(vs, ad.reshape(D, (cfg.width, 1, n, n))))
    v = ad.real(ad.ifft2(vs))
    pos = positional_features(cfg.d_t, n)
    v = ad.add(v, ad.einsum("dp,ptxy->dtxy", params["lift.Wp"], pos))
    if cfg.layer_norm:
        v = layer_norm(v, params["lift.gamma"], params["lift.beta"])
    return v


def _blocks(cfg: StfnoConfig, d_t: int, n: int):
    tm, km = cfg.tau_max, cfg.k_max
    ts = (slice(0, tm), slice(d_t - tm, d_t))
    xs = (slice(0, km), slice(n - km, n))
    return [(t, x, slice(0, km)) for t in ts for x in xs]


def spectral_conv(v, R, W, cfg: StfnoConfig):
    """``W v + Re F^-1(R . F v)`` over the retained space-time mode blocks."""
    vv = ad.value_of(v)
    d, d_t, n = vv.shape[0], vv.shape[1], vv.shape[-1]
    Rv = ad.value_of(R)
    if Rv.shape[1] > d_t // 2 or Rv.shape[2] > n // 2 or Rv.shape[1] > d_t or Rv.shape[2] > n:
        raise ValueError("retained modes exceed the latent size")
    V = ad.fftn(v, axes=(1, 2, 3))
    out = None
    for b, (ts, xs, ys) in enumerate(_blocks(cfg, d_t, n)):
        Vb = ad.getitem(V, (slice(None), ts, xs, ys))
        Yb = ad.einsum("itxy,txyio->otxy", Vb, ad.getitem(R, b))
        Y = ad.scatter(Yb, (d, d_t, n, n), (slice(None), ts, xs, ys))
        out = Y if out is None else ad.add(out, Y)
    spec = ad.real(ad.ifftn(out, axes=(1, 2, 3)))
    Wv = ad.value_of(W)
    lin = ad.einsum("io,itxy->otxy", ad.getitem(W, slice(0, Wv.shape[0] - 1)), v)
    lin = ad.add(lin, ad.reshape(ad.getitem(W, Wv.shape[0] - 1), (-1, 1, 1, 1)))
    return ad.add(lin, spec)


def backbone(v, params: Mapping, cfg: StfnoConfig):
    act = _activation(cfg)
    n = ad.value_of(v).shape[-1]
    for i in range(cfg.layers):
        v = act(spectral_conv(v, params[f"conv{i}.R"], params[f"conv{i}.W"], cfg))
        if cfg.helmholtz:
            v = _helmholtz(v, n, cfg.L)
    return v


def reduce_channels(v, params: Mapping):
    """Pointwise reduction ``[d_v, d_t, n, n] -> [C, d_t, n, n]``."""
    c = ad.einsum("cd,dtxy->ctxy", params["proj.q"], v)
    return ad.add(c, ad.reshape(params["proj.b"], (-1, 1, 1, 1)))


def resize_multiplier(M, n_from: int, n_to: int):
    """Carry a spatial multiplier to another grid by signed index (Nyquist copied to both sides)."""
    if n_from == n_to:
        return M
    j = np.fft.fftfreq(n_to, 1.0 / n_to).astype(int)
    h = n_from // 2
    src = np.where(np.abs(j) <= h, np.mod(j, n_from), 0)
    keep = (np.abs(j) <= h).astype(float)
    if n_to < n_from:
        keep[n_to // 2] = 0.0
    out = ad.mul(ad.take(M, src, -2), keep[:, None])
    return ad.mul(ad.take(out, src, -1), keep[None, :])


def time_matrix(s: np.ndarray, d_t: int, mirror: bool = True, deriv: bool = False) -> np.ndarray:
    """Rows evaluate the temporal series of the (mirrored) latent at window positions ``s``.

    Latent sample ``i`` sits at ``s_i = (i + 1/2) / d_t``. The result has shape
    ``[len(s), N]`` and acts on the temporal DFT (length ``N``) of the latent.
    ``deriv`` returns the rows of the ``d/ds`` derivative instead.
    """
    N = 2 * d_t if mirror else d_t
    k = np.fft.fftfreq(N, 1.0 / N)
    theta = 2 * np.pi * np.outer(np.asarray(s, dtype=float) * d_t - 0.5, k) / N
    E = np.exp(1j * theta) / N
    if deriv:
        E = E * (2j * np.pi * d_t / N) * k
    if N % 2 == 0:
        th = theta[:, N // 2]
        E[:, N // 2] = (-np.pi * d_t * np.sin(th) if deriv else np.cos(th)) / N
    return E


def output_positions(n_t_out: int) -> np.ndarray:
    return np.arange(1, n_t_out + 1) / n_t_out


def ks_spectrum(c, cfg: StfnoConfig):
    """Space-time spectrum of the (mirrored) reduced latent, the input of the ``1 + M`` multiplier."""
    if cfg.mirror:
        rev = ad.take(c, np.arange(cfg.d_t - 1, -1, -1), 1)
        c = ad.concatenate([c, rev], axis=1)
    return ad.fftn(c, axes=(1, 2, 3))


def ks_series(c, M, cfg: StfnoConfig, s: np.ndarray, anchor: bool = True, deriv: bool = False):
    """Evaluate ``K_S`` on the reduced latent ``c`` ``[C, d_t, n, n]`` at positions ``s``.

    Returns spatial Fourier coefficients ``[C, len(s), n, n]`` of
    ``S(s) - S(0)`` (``anchor``), ``S(s)``, or ``dS/ds`` (``deriv``).
    """
    n = ad.value_of(c).shape[-1]
    C = ks_spectrum(c, cfg)
    Mn = resize_multiplier(M, cfg.n, n)
    C = ad.add(C, ad.mul(C, Mn))
    E = time_matrix(s, cfg.d_t, cfg.mirror, deriv)
    if anchor and not deriv:
        E = E - time_matrix(np.zeros(1), cfg.d_t, cfg.mirror)
    Z = ad.einsum("jk,ckxy->cjxy", E, C)  # spatial DFT of a complex field
    return ad.fft2(ad.real(ad.ifft2(Z)))


def project(latent, u_last, n_t_out: int, n_out: int, params: Mapping, cfg: StfnoConfig,
            reduced: bool = False, s: np.ndarray | None = None, deriv: bool = False):
    """Output trajectory coefficients ``[n_t_out, n_out, n_out]`` (or ``[n_t_out, 2, ...]``).

    ``latent`` is the backbone output, or the reduced channel when ``reduced``.
    ``u_last`` holds the spatial coefficients of the last input snapshot. The
    output positions default to ``s_j = j / n_t_out``; ``deriv`` returns ``du/ds``.
    """
    c = latent if reduced else reduce_channels(latent, params)
    n = ad.value_of(c).shape[-1]
    if n_out < n:
        raise ValueError(f"n_out={n_out} below the model grid {n}")
    if n_t_out < 1:
        raise ValueError("n_t_out must be positive")
    pos = output_positions(n_t_out) if s is None else np.asarray(s, dtype=float)
    corr = ks_series(c, params["ks.M"], cfg, pos, deriv=deriv)  # [C, T, n, n]
    # the flows conserve their spatial mean, so the correction carries none
    no_mean = np.ones((n, n))
    no_mean[0, 0] = 0.0
    corr = ad.mul(corr, no_mean)
    if cfg.formulation == "vp":
        corr = ad.moveaxis(corr, 0, 1)  # [T, 2, n, n]
        corr = leray_project(SpectralField(corr, make_grid(n, cfg.L), True)).coeffs
    else:
        corr = ad.getitem(corr, 0)
    out = corr if deriv else ad.add(corr, ad.reshape(u_last, (1,) + ad.value_of(u_last).shape))
    if n_out != n:
        out = _resample_axis(_resample_axis(out, n, n_out, -2), n, n_out, -1)
    return out


def latent_of(model: StfnoModel, x, params: Mapping | None = None):
    p = model.params if params is None else params
    return backbone(lift(x, p, model.cfg), p, model.cfg)


def forward(model: StfnoModel, x, n_t_out: int, n_out: int | None = None, params: Mapping | None = None):
    """Predict ``n_t_out`` snapshots on an ``n_out`` grid; returns spatial coefficients.

    ``x`` is the physical input trajectory. ``params`` may hold tape variables.
    """
    p = model.params if params is None else params
    xv = ad.value_of(x)
    n = xv.shape[-1]
    if n < model.cfg.n and model.cfg.k_max > n // 2:
        raise ValueError("input grid too coarse for the retained modes")
    v = latent_of(model, x, p)
    u_last = ad.fft2(ad.getitem(x, -1))
    return project(v, u_last, n_t_out, n if n_out is None else n_out, p, model.cfg)


def predict_physical(model: StfnoModel, x: np.ndarray, n_t_out: int, n_out: int | None = None) -> np.ndarray:
    return np.real(np.fft.ifft2(forward(model, x, n_t_out, n_out)))


def rollout_baseline(step_fn: Callable[[np.ndarray], np.ndarray], x: np.ndarray, k: int) -> np.ndarray:
    """Autoregressive roll-out: append each predicted snapshot to a sliding input window."""
    window = np.array(x, copy=True)
    preds = []
    for _ in range(k):
        nxt = np.asarray(step_fn(window))
        preds.append(nxt)
        window = np.concatenate([window[1:], nxt[None]], axis=0)
    if not preds:
        return np.zeros((0,) + window.shape[1:])
    return np.stack(preds)


def stfno_step(model: StfnoModel) -> Callable[[np.ndarray], np.ndarray]:
    """One-snapshot step from an ST-FNO evaluated at the first output position."""
    return lambda w: predict_physical(model, w, 1)[0]


# ------------------------------------------------------------------ checkpoints


def save_checkpoint(model: StfnoModel, path: str | Path) -> None:
    arrays = {f"param/{k}": v for k, v in model.params.items()}
    cfg = asdict(model.cfg)
    arrays["config"] = np.array([_encode_cfg_value(cfg[f.name]) for f in fields(StfnoConfig)], dtype=float)
    write_sfc1(path, arrays)


_STR_FIELDS = {"formulation": ("vs", "vp"), "activation": ("gelu", "identity")}


def _encode_cfg_value(v) -> float:
    for opts in _STR_FIELDS.values():
        if isinstance(v, str) and v in opts:
            return float(opts.index(v))
    return float(v)


def load_checkpoint(path: str | Path) -> StfnoModel:
    data = read_sfc1(path)
    raw = data.pop("config")
    kw = {}
    for f, v in zip(fields(StfnoConfig), raw):
        if f.name in _STR_FIELDS:
            kw[f.name] = _STR_FIELDS[f.name][int(v)]
        elif f.type in ("bool",):
            kw[f.name] = bool(v)
        elif f.type in ("int",):
            kw[f.name] = int(v)
        else:
            kw[f.name] = float(v)
    cfg = StfnoConfig(**kw)
    params = {k[len("param/"):]: v for k, v in data.items() if k.startswith("param/")}
    return StfnoModel(cfg, params)


def manifest(model: StfnoModel) -> list[tuple[str, tuple[int, ...], str]]:
    return [(k, v.shape, "c128" if np.iscomplexobj(v) else "f64") for k, v in model.params.items()]
