"""Welch-type spectral estimates of simulated Stokes fluctuations.

Normalization: with X_i(W) = sum_n w_n x_i(t_n) exp(i W t_n) dt over a
segment of length T, the estimate Re[X_i conj(X_k)] / (T U), U = mean(w^2),
has expectation (x_i x_k)_W in the symmetric-Fourier convention, so white
noise of strength m gives a flat estimate m.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import integrate
from scipy.signal import get_window

from .analytic import FrequencyGrid, stokes_spectra_closed_form
from .model import LaserParams, derive
from .noise_sim import IDX, Ensemble, NoiseFactor, SimConfig, simulate_linear

PAIRS = {
    "s11": ("S1", "S1"),
    "s22": ("S2", "S2"),
    "s33": ("S3", "S3"),
    "s23": ("S2", "S3"),
    "s12": ("S1", "S2"),
    "s13": ("S1", "S3"),
    "s32": ("S3", "S2"),
}
MIN_SEGMENT = 64


@dataclass
class SpectraEstimate:
    """Running sums of periodograms over independent units; merge-able in any order.

    A unit is a whole trajectory (its segments averaged first) or a single
    segment. Trajectories are independent by construction, so their spread
    gives honest standard errors even when segments overlap.
    """

    omegas: np.ndarray
    count: int = 0
    n_segments: int = 0
    unit: str = "trajectory"
    sums: dict = field(default_factory=dict)
    sumsqs: dict = field(default_factory=dict)
    n_traj: int = 0
    window: str = "hann"
    segment_len: float = 0.0

    @property
    def grid(self) -> FrequencyGrid:
        return FrequencyGrid(self.omegas)

    @property
    def spacing(self) -> float:
        return float(self.omegas[1] - self.omegas[0])

    def mean(self, name: str) -> np.ndarray:
        if self.count == 0:
            raise ValueError("empty estimate")
        return self.sums[name] / self.count

    def stderr(self, name: str) -> np.ndarray:
        if self.count < 2:
            return np.full_like(self.omegas, np.inf)
        mu = self.mean(name)
        var = (self.sumsqs[name] - self.count * mu * mu) / (self.count - 1)
        return np.sqrt(np.maximum(var, 0.0) / self.count)

    def merge(self, other: "SpectraEstimate") -> "SpectraEstimate":
        if other.count == 0:
            return self
        if self.count == 0:
            return other
        if self.omegas.shape != other.omegas.shape or not np.allclose(self.omegas, other.omegas):
            raise ValueError("cannot merge estimates on different grids")
        if self.unit != other.unit:
            raise ValueError(f"cannot merge {self.unit}-unit and {other.unit}-unit estimates")
        return SpectraEstimate(
            omegas=self.omegas,
            count=self.count + other.count,
            n_segments=self.n_segments + other.n_segments,
            unit=self.unit,
            sums={k: self.sums[k] + other.sums[k] for k in self.sums},
            sumsqs={k: self.sumsqs[k] + other.sumsqs[k] for k in self.sumsqs},
            n_traj=self.n_traj + other.n_traj,
            window=self.window,
            segment_len=self.segment_len,
        )


def segment_periodograms(x: np.ndarray, dt: float, n_seg: int, window: str = "hann",
                         overlap: float = 0.0):
    """Periodogram blocks of a (n_traj, n_samples, n_comp) array.

    Returns ``(omegas, X, norm)`` with X of shape (n_traj, n_segments,
    n_freq, n_comp) so that Re[X_i conj X_k] / norm is the estimate.
    """
    if n_seg < MIN_SEGMENT:
        raise ValueError(f"segment has {n_seg} samples; at least {MIN_SEGMENT} are required")
    n_traj, n_samples, n_comp = x.shape
    if n_seg > n_samples:
        raise ValueError(f"segment ({n_seg} samples) longer than the record ({n_samples})")
    w = np.ones(n_seg) if window == "rectangular" else get_window(window, n_seg, fftbins=True)
    step = max(1, int(round(n_seg * (1.0 - overlap))))
    starts = np.arange(0, n_samples - n_seg + 1, step)
    segs = np.stack([x[:, s:s + n_seg, :] for s in starts], axis=1)  # traj, seg, n, comp
    segs = segs * w[None, None, :, None]
    X = np.fft.rfft(segs, axis=2) * dt
    T = n_seg * dt
    norm = T * float(np.mean(w * w))
    omegas = 2.0 * np.pi * np.fft.rfftfreq(n_seg, d=dt)
    return omegas, X, norm


def estimate(ens: Ensemble, window: str = "hann", segment_len: float | None = None,
             overlap: float = 0.0, unit: str | None = None) -> SpectraEstimate:
    """Auto- and cross-spectra of (S1, S2, S3) averaged over segments and trajectories.

    Parameters
    ----------
    ens : Ensemble
        Post-burn-in trajectories.
    window : {"hann", "rectangular"}
    segment_len : float, optional
        Segment length in ns; defaults to the whole record.
    overlap : float
        Fractional segment overlap in [0, 1).
    unit : {"trajectory", "segment"}, optional
        Statistical unit for the standard error. Defaults to "trajectory"
        when the ensemble has at least two trajectories.
    """
    if window not in ("hann", "rectangular"):
        raise ValueError(f"window must be 'hann' or 'rectangular', got {window!r}")
    if not 0.0 <= overlap < 1.0:
        raise ValueError(f"overlap must lie in [0, 1), got {overlap}")
    if unit is None:
        unit = "trajectory" if ens.n_traj >= 2 else "segment"
    if unit not in ("trajectory", "segment"):
        raise ValueError(f"unit must be 'trajectory' or 'segment', got {unit!r}")
    n_seg = ens.n_samples if segment_len is None else int(round(segment_len / ens.dt))
    comps = ("S1", "S2", "S3")
    x = ens.x[:, :, [IDX[c] for c in comps]]
    omegas, X, norm = segment_periodograms(x, ens.dt, n_seg, window, overlap)
    col = {c: i for i, c in enumerate(comps)}
    sums, sumsqs = {}, {}
    for name, (a, b) in PAIRS.items():
        p = (X[..., col[a]] * np.conj(X[..., col[b]])).real / norm
        p = p.mean(axis=1) if unit == "trajectory" else p.reshape(-1, p.shape[-1])
        sums[name] = p.sum(axis=0)
        sumsqs[name] = (p * p).sum(axis=0)
    return SpectraEstimate(
        omegas=omegas, count=p.shape[0], n_segments=X.shape[0] * X.shape[1], unit=unit,
        sums=sums, sumsqs=sumsqs, n_traj=ens.n_traj,
        window=window, segment_len=n_seg * ens.dt,
    )


def run_estimate(drift, factor: NoiseFactor, cfg: SimConfig, window: str = "hann",
                 segment_len: float | None = None, batch_size: int = 16,
                 params: LaserParams | None = None, with_variance: bool = False,
                 overlap: float = 0.0):
    """Simulate ``cfg.n_traj`` trajectories in batches and merge their estimates.

    Memory stays bounded by one batch. With ``with_variance`` the
    per-trajectory second moments of (S1, S2, S3) are also returned.
    """
    total = None
    moments = []
    for lo in range(0, cfg.n_traj, batch_size):
        idx = np.arange(lo, min(cfg.n_traj, lo + batch_size))
        ens = simulate_linear(drift, factor, cfg, traj_indices=idx, params=params)
        est = estimate(ens, window=window, segment_len=segment_len, overlap=overlap,
                       unit="trajectory")
        total = est if total is None else total.merge(est)
        if with_variance:
            moments.append(_second_moments(ens))
    if with_variance:
        return total, np.concatenate(moments, axis=0)
    return total


def _second_moments(ens: Ensemble) -> np.ndarray:
    x = ens.x[:, :, [IDX["S1"], IDX["S2"], IDX["S3"]]]
    return np.mean(x * x, axis=1)


def closed_form_variance(params: LaserParams, variant: str = "rederived") -> dict:
    """(1/2 pi) * integral of s11, s22, s33 over the whole real line."""
    d = derive(params)
    scale = max(1.0, 2.0 * d.Gamma_s, 4.0 * np.sqrt(2.0 * params.gamma * d.kappa_x * (params.pump_r - 1.0)))

    def f(w, name):
        return getattr(stokes_spectra_closed_form(params, d, np.array([w]), variant), name)[0]

    out = {}
    for name in ("s11", "s22", "s33"):
        near, _ = integrate.quad(f, 0.0, scale, args=(name,), limit=400, epsabs=0.0, epsrel=1e-10)
        far, _ = integrate.quad(f, scale, np.inf, args=(name,), limit=400, epsabs=0.0, epsrel=1e-10)
        out[name] = (near + far) / np.pi  # even integrand: (1/2pi) * 2 * int_0^inf
    return out


@dataclass
class VarianceReport:
    sample: dict
    stderr: dict
    predicted: dict
    z: dict

    @property
    def max_abs_z(self) -> float:
        return float(max(abs(v) for v in self.z.values()))

    def flagged(self, threshold: float = 5.0) -> list:
        return [k for k, v in self.z.items() if abs(v) > threshold]


def variance_check(ens_or_moments, params: LaserParams, variant: str = "rederived") -> VarianceReport:
    """Compare time-domain variances with the integrated closed-form spectra.

    Accepts an :class:`Ensemble` or a (n_traj, 3) array of per-trajectory
    second moments of (S1, S2, S3); the standard error is the spread across
    trajectories.
    """
    mom = _second_moments(ens_or_moments) if isinstance(ens_or_moments, Ensemble) else np.asarray(ens_or_moments)
    pred = closed_form_variance(params, variant)
    names = ("s11", "s22", "s33")
    sample, se, z = {}, {}, {}
    n = mom.shape[0]
    for i, name in enumerate(names):
        sample[name] = float(np.mean(mom[:, i]))
        se[name] = float(np.std(mom[:, i], ddof=1) / np.sqrt(n)) if n > 1 else float("inf")
        diff = sample[name] - pred[name]
        if se[name] == 0.0:
            z[name] = 0.0 if diff == 0.0 else float(np.sign(diff) * np.inf)
        else:
            z[name] = diff / se[name]
    return VarianceReport(sample=sample, stderr=se, predicted=pred, z=z)
