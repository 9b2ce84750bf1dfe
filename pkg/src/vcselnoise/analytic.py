"""Closed-form Stokes noise spectra and a linear-response oracle.

Spectral densities follow the symmetric-Fourier convention
<x_W y_W'> = (x y)_W delta(W + W'), so a white source with time-domain
correlation m delta(t - t') has flat density m.

Two coefficient sets are available for the polarization-block spectra:

``"rederived"`` (default)
    Coefficients obtained by solving the linear response system exactly.
    Agrees with :func:`linear_response_oracle` to rounding.
``"published"``
    The coefficient set as it appears in the literature, kept verbatim for
    comparison. Relative to the linear response it carries an overall factor
    of 4 on s22, s33 and s23, the term ``(alpha*omega_p - Gamma_s/2)`` in a3
    where ``(alpha*omega_p - gamma*(r-1)/4)`` is required, the opposite sign
    of ``Gamma_s`` and of ``kappa_a`` in a23, and the opposite sign of the
    leading ``gamma_s * r * (...)`` term in b23. s11 is identical in both.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import DerivedParams, LaserParams, derive, drift_matrices

VARIANTS = ("rederived", "published")


class SingularSpectrumError(ArithmeticError):
    """A spectral denominator or response matrix vanished on the grid."""


@dataclass(frozen=True)
class FrequencyGrid:
    omegas: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.omegas, dtype=float)
        if w.ndim != 1 or w.size == 0:
            raise ValueError("frequency grid must be a non-empty 1-D array")
        if not np.all(np.isfinite(w)):
            raise ValueError("frequency grid contains non-finite values")
        if w.size > 1 and not np.all(np.diff(w) > 0):
            raise ValueError("frequency grid must be strictly increasing")
        w.setflags(write=False)
        object.__setattr__(self, "omegas", w)

    @classmethod
    def linear(cls, start: float, stop: float, count: int) -> "FrequencyGrid":
        return cls(np.linspace(start, stop, int(count)))

    @classmethod
    def log(cls, start: float, stop: float, count: int) -> "FrequencyGrid":
        return cls(np.geomspace(start, stop, int(count)))

    def __len__(self):
        return self.omegas.size


def _as_grid(grid) -> FrequencyGrid:
    return grid if isinstance(grid, FrequencyGrid) else FrequencyGrid(np.atleast_1d(grid))


@dataclass(frozen=True)
class SourceSpectra:
    s_common: float
    s_DD: float
    s_dd: float


def source_densities(kappa_x, gamma, gamma_s, r, p, c):
    """Flat source densities (s_common, s_DD, s_dd) from raw scalars."""
    scale = kappa_x * gamma / c
    return (
        scale * (r * r - 1.0),
        scale * r * (r - 0.5 * p),
        scale * r * (gamma_s / gamma + r - 1.0),
    )


def source_spectra(params: LaserParams, derived: DerivedParams | None = None) -> SourceSpectra:
    d = derived or derive(params)
    sc, sD, sd = source_densities(
        d.kappa_x, params.gamma, params.gamma_s, params.pump_r, params.pump_p, params.c_sat
    )
    return SourceSpectra(s_common=sc, s_DD=sD, s_dd=sd)


@dataclass(frozen=True)
class SpectraCoefficients:
    a2: float
    b2: float
    a3: float
    b3: float
    a23: float
    b23: float
    # kept for the denominators
    kappa_a: float
    omega_p: float
    kappa: float
    kappa_x: float
    gamma: float
    gamma_s: float
    Gamma_s: float
    alpha: float
    r: float

    def lambda1(self, omega):
        w2 = np.asarray(omega, dtype=float) ** 2
        g, r = self.gamma, self.r
        return (w2 - 2.0 * g * self.kappa_x * (r - 1.0)) ** 2 + w2 * (g * r) ** 2

    def lambda_(self, omega):
        w2 = np.asarray(omega, dtype=float) ** 2
        ka, wp, g, r = self.kappa_a, self.omega_p, self.gamma, self.r
        first = -0.25 * w2 + ka * ka + wp * wp - ka * self.gamma_s + 0.5 * g * (r - 1.0) * (self.kappa - ka)
        second = (
            w2 * (ka - 0.25 * self.Gamma_s)
            + g * (r - 1.0) * self.kappa_x * (self.alpha * wp - ka)
            + self.Gamma_s * (ka * ka + wp * wp)
        )
        return w2 * first ** 2 + second ** 2


def coefficients(params: LaserParams, derived: DerivedParams | None = None,
                 variant: str = "rederived") -> SpectraCoefficients:
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    d = derived or derive(params)
    k, ka, wp, al = params.kappa, params.kappa_a, params.omega_p, params.alpha
    g, gs, r = params.gamma, params.gamma_s, params.pump_r
    kx, Gs = d.kappa_x, d.Gamma_s
    rm, rp = r - 1.0, r + 1.0
    aniso = wp * wp + ka * ka
    mix = wp + al * ka
    tilt = al * wp - ka

    a2 = (aniso + 0.25 * Gs * Gs) * rp + g * rm * (0.25 * al * al * r * Gs + (al * wp - kx) * rp)
    b2 = (
        gs * gs * aniso * rp
        + gs * g * rm * (r * mix * mix + 2.0 * k * tilt * rp)
        + (g * rm) ** 2 * (k * k * rp * (al * al + 1.0) - mix * mix)
    )
    b3 = Gs * Gs * rp * aniso + g * rm * Gs * (r * (al * al * wp * wp - ka * ka) + 2.0 * ka * tilt)
    b23_tail = g * rm * (mix * tilt + rp * (al * al + 1.0) * k * wp)
    b23_body = rp * (wp * tilt + k * mix)

    if variant == "published":
        a3 = (aniso + 0.25 * gs * gs) * rp + (al * wp - 0.5 * Gs) * rm * rp * g + 0.25 * g * rm * r * Gs
        a23 = al * (Gs + 2.0 * rp * (k - ka))
        b23 = gs * (r * mix * tilt + b23_body) + b23_tail
    else:
        a3 = (aniso + 0.25 * gs * gs) * rp + (al * wp - 0.25 * g * rm) * rm * rp * g + 0.25 * g * rm * r * Gs
        a23 = al * (2.0 * rp * kx - Gs)
        b23 = gs * (-r * mix * tilt + b23_body) + b23_tail

    return SpectraCoefficients(
        a2=a2, b2=b2, a3=a3, b3=b3, a23=a23, b23=b23,
        kappa_a=ka, omega_p=wp, kappa=k, kappa_x=kx, gamma=g, gamma_s=gs,
        Gamma_s=Gs, alpha=al, r=r,
    )


@dataclass(frozen=True)
class StokesSpectra:
    grid: FrequencyGrid
    s11: np.ndarray
    s22: np.ndarray
    s33: np.ndarray
    s23: np.ndarray
    s12: np.ndarray
    s13: np.ndarray
    source: str = "closed_form"

    @property
    def omegas(self) -> np.ndarray:
        return self.grid.omegas

    def component(self, name: str) -> np.ndarray:
        return getattr(self, name)


SPECTRA_COMPONENTS = ("s11", "s22", "s33", "s23")


def stokes_spectra_closed_form(params: LaserParams, derived: DerivedParams | None = None,
                               grid=None, variant: str = "rederived") -> StokesSpectra:
    """Evaluate the closed-form spectra on ``grid`` (angular GHz)."""
    if grid is None:
        raise ValueError("a frequency grid is required")
    grid = _as_grid(grid)
    d = derived or derive(params)
    co = coefficients(params, d, variant)
    w = grid.omegas
    w2 = w * w
    g, r, p = params.gamma, params.pump_r, params.pump_p
    nk = d.n_x * d.kappa_x

    lam1 = co.lambda1(w)
    lam = co.lambda_(w)
    if np.any(lam1 <= 0) or np.any(lam <= 0):
        bad = w[(lam1 <= 0) | (lam <= 0)]
        raise SingularSpectrumError(
            f"spectral denominator vanishes at omega = {bad[:5].tolist()} (marginal stability)"
        )

    s11 = nk * (2.0 * w2 * (r + 1.0) + g * g * r * (p - p * r + 4.0)) / lam1
    # published prefactor 2 n_x kappa_x; the exact response gives a quarter of it
    pref = 2.0 * nk if variant == "published" else 0.5 * nk
    quartic = 0.25 * w2 * w2 * (r + 1.0)
    s22 = pref * (quartic + co.a2 * w2 + co.b2) / lam
    s33 = pref * (quartic + co.a3 * w2 + co.b3) / lam
    s23 = pref * g * (r - 1.0) * (0.25 * co.a23 * w2 + co.b23) / lam
    zeros = np.zeros_like(w)
    return StokesSpectra(grid, s11, s22, s33, s23, zeros, zeros.copy(), source=f"closed_form:{variant}")


def response_matrix(params: LaserParams, derived: DerivedParams, omegas) -> np.ndarray:
    """Coefficient matrices M(W) of the Fourier-domain response M x_W = xi_W.

    Written directly from the algebraic form of the fluctuation equations,
    in (S1, D, S2, S3, d) order. Shape (len(omegas), 5, 5), complex.
    """
    w = np.atleast_1d(np.asarray(omegas, dtype=float))
    g, r = params.gamma, params.pump_r
    ka, wp, al = params.kappa_a, params.omega_p, params.alpha
    kx, Gs = derived.kappa_x, derived.Gamma_s
    iw = 1j * w
    M = np.zeros((w.size, 5, 5), dtype=complex)
    # -iW S1 - gamma(r-1) D = xi_S1
    M[:, 0, 0] = -iw
    M[:, 0, 1] = -g * (r - 1.0)
    # (-iW + gamma r) D + 2 kappa_x S1 = xi_D
    M[:, 1, 1] = -iw + g * r
    M[:, 1, 0] = 2.0 * kx
    # -(iW + 2 kappa_a) S2 + 2 omega_p S3 + alpha gamma (r-1) d = xi_S2
    M[:, 2, 2] = -(iw + 2.0 * ka)
    M[:, 2, 3] = 2.0 * wp
    M[:, 2, 4] = al * g * (r - 1.0)
    # -(iW + 2 kappa_a) S3 - 2 omega_p S2 + gamma (r-1) d = xi_S3
    M[:, 3, 3] = -(iw + 2.0 * ka)
    M[:, 3, 2] = -2.0 * wp
    M[:, 3, 4] = g * (r - 1.0)
    # (-iW + Gamma_s) d - 2 kappa_x S3 = xi_d
    M[:, 4, 4] = -iw + Gs
    M[:, 4, 3] = -2.0 * kx
    return M


def linear_response_oracle(params: LaserParams, derived: DerivedParams | None = None,
                           diffusion=None, grid=None) -> StokesSpectra:
    """Spectra from S(W) = T(W) m T(W)^H with T = M(W)^-1, solved numerically."""
    from .noise_sim import diffusion_matrix

    if grid is None:
        raise ValueError("a frequency grid is required")
    grid = _as_grid(grid)
    d = derived or derive(params)
    m = diffusion_matrix(source_spectra(params, d)).m if diffusion is None else np.asarray(
        getattr(diffusion, "m", diffusion), dtype=float)
    M = response_matrix(params, d, grid.omegas)
    try:
        if np.any(M[:, :2, 2:]) or np.any(M[:, 2:, :2]):
            T = np.linalg.inv(M)
        else:
            # decoupled (S1, D) and (S2, S3, d) systems: invert blockwise
            T = np.zeros_like(M)
            T[:, :2, :2] = np.linalg.inv(M[:, :2, :2])
            T[:, 2:, 2:] = np.linalg.inv(M[:, 2:, 2:])
    except np.linalg.LinAlgError:
        raise SingularSpectrumError("response matrix exactly singular on the grid") from None
    # 1-norm condition number, exact once the inverse is known
    cond = np.abs(M).sum(axis=-2).max(axis=-1) * np.abs(T).sum(axis=-2).max(axis=-1)
    bad = ~np.isfinite(cond) | (cond > 1e14)
    if np.any(bad):
        raise SingularSpectrumError(f"response matrix singular at omega = {grid.omegas[bad][:5].tolist()}")
    S = T @ m @ np.conj(np.swapaxes(T, -1, -2))
    S = S.real
    return StokesSpectra(
        grid,
        s11=S[:, 0, 0].copy(),
        s22=S[:, 2, 2].copy(),
        s33=S[:, 3, 3].copy(),
        s23=S[:, 2, 3].copy(),
        s12=S[:, 0, 2].copy(),
        s13=S[:, 0, 3].copy(),
        source="oracle",
    )


def spectra_deviation(a: StokesSpectra, b: StokesSpectra) -> dict:
    """Pointwise relative deviation of ``a`` from ``b`` per component.

    Auto-spectra are compared relative to ``b``; the cross-spectrum, which
    changes sign, relative to sqrt(s22 * s33) of ``b``.
    """
    out = {}
    for name in ("s11", "s22", "s33"):
        ref = np.abs(b.component(name))
        out[name] = np.abs(a.component(name) - b.component(name)) / np.maximum(ref, np.finfo(float).tiny)
    scale = np.sqrt(np.abs(b.s22 * b.s33))
    out["s23"] = np.abs(a.s23 - b.s23) / np.maximum(scale, np.finfo(float).tiny)
    return out


def cross_correlation_C(spectra: StokesSpectra) -> np.ndarray:
    """Normalized cross-correlation (s11 - s22) / (s11 + s22); NaN where undefined."""
    num = spectra.s11 - spectra.s22
    den = spectra.s11 + spectra.s22
    out = np.full_like(den, np.nan, dtype=float)
    ok = den > 0
    out[ok] = num[ok] / den[ok]
    return out


def relaxation_peak_estimate(params: LaserParams) -> float:
    """Frequency minimizing lambda1: sqrt(2 gamma kappa_x (r-1) - (gamma r)^2 / 2)."""
    d = derive(params)
    g, r = params.gamma, params.pump_r
    v = 2.0 * g * d.kappa_x * (r - 1.0) - 0.5 * (g * r) ** 2
    return float(np.sqrt(v)) if v > 0 else 0.0


def relaxation_peak(params: LaserParams) -> float:
    """Exact argmax over W >= 0 of the intensity-noise spectrum s11.

    s11 is (a X + b) / ((X - X0)^2 + B X) in X = W^2; setting the derivative
    to zero leaves a quadratic in X.
    """
    d = derive(params)
    g, r, p = params.gamma, params.pump_r, params.pump_p
    a = 2.0 * (r + 1.0)
    b = g * g * r * (p - p * r + 4.0)
    x0 = 2.0 * g * d.kappa_x * (r - 1.0)
    B = (g * r) ** 2
    # -a X^2 - 2 b X + (a x0^2 + 2 x0 b - B b) = 0
    const = a * x0 * x0 + 2.0 * x0 * b - B * b
    disc = b * b + a * const
    if disc < 0:
        return 0.0
    X = (-b + np.sqrt(disc)) / a
    return float(np.sqrt(X)) if X > 0 else 0.0
