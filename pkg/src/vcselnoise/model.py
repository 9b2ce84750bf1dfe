"""Laser parameters, x-polarized steady state, linearized drift and stability.

Units: rates in GHz (1/ns), time in ns, field amplitudes in photon^(1/2).
The analysis frequency Omega is an angular frequency in rad/ns and is
reported as "GHz" throughout, following the usual convention for rates.

State ordering for every 5-vector in the package is (S1, D, S2, S3, d):
the intensity/inversion block first, then the polarization block.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

STATE_LABELS = ("dS1", "dD", "dS2", "dS3", "dd")


class BelowThresholdError(ValueError):
    """Raised when an operation needs a lasing (r > 1) steady state."""


@dataclass(frozen=True)
class LaserParams:
    """Physical inputs of the spin-flip model.

    Defaults reproduce the reference parameter set used for the
    relaxation-oscillation and cross-correlation figures
    (kappa=300, omega_p=1, alpha=-3, gamma=1, gamma_s=100, kappa_a=0, r=1.04)
    with Poissonian pumping.

    ``c_sat`` defaults to ``gamma / 2``; with that choice the mean x-mode
    photon number equals ``r - 1`` (photon numbers in saturation units).
    """

    kappa: float = 300.0
    kappa_a: float = 0.0
    omega_p: float = 1.0
    gamma: float = 1.0
    gamma_s: float = 100.0
    alpha: float = -3.0
    pump_r: float = 1.04
    pump_p: float = 0.0
    c_sat: float | None = None

    def __post_init__(self):
        if self.c_sat is None:
            object.__setattr__(self, "c_sat", 0.5 * self.gamma)
        if not self.kappa > 0:
            raise ValueError(f"kappa must be > 0, got {self.kappa}")
        if not self.gamma > 0:
            raise ValueError(f"gamma must be > 0, got {self.gamma}")
        if not self.gamma_s >= self.gamma:
            raise ValueError(
                f"gamma_s must be >= gamma (spin-flip rate is non-negative), "
                f"got gamma_s={self.gamma_s}, gamma={self.gamma}"
            )
        if not 0.0 <= self.pump_p <= 1.0:
            raise ValueError(f"pump_p must lie in [0, 1], got {self.pump_p}")
        if not self.c_sat > 0:
            raise ValueError(f"c_sat must be > 0, got {self.c_sat}")
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if not np.isfinite(v):
                raise ValueError(f"{f.name} must be finite, got {v}")

    def replace(self, **changes) -> "LaserParams":
        return dataclasses.replace(self, **changes)

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass(frozen=True)
class DerivedParams:
    kappa_x: float
    delta_x: float
    gamma_c: float
    Gamma_s: float
    mu_th: float
    mu: float
    Q: float
    n_x: float
    D_st: float


def derive(params: LaserParams) -> DerivedParams:
    """Derived constants of the x-polarized steady state.

    Raises
    ------
    BelowThresholdError
        If ``pump_r <= 1``; the linearized model has no lasing state there.
    """
    r = params.pump_r
    if not r > 1.0:
        raise BelowThresholdError(f"pump_r must exceed 1 (threshold), got {r}")
    g = params.gamma
    c = params.c_sat
    kappa_x = params.kappa + params.kappa_a
    mu_th = g * kappa_x / c
    n_x = g * (r - 1.0) / (2.0 * c)
    return DerivedParams(
        kappa_x=kappa_x,
        delta_x=params.omega_p + params.alpha * kappa_x,
        gamma_c=0.5 * (params.gamma_s - g),
        Gamma_s=params.gamma_s + g * (r - 1.0),
        mu_th=mu_th,
        mu=r * mu_th,
        Q=np.sqrt(0.5 * n_x),
        n_x=n_x,
        D_st=kappa_x / c,
    )


@dataclass(frozen=True)
class DriftMatrices:
    """Linearized drift, split into the two decoupled blocks.

    ``block1`` acts on (dS1, dD); ``block2`` on (dS2, dS3, dd).
    """

    block1: np.ndarray
    block2: np.ndarray

    @property
    def full(self) -> np.ndarray:
        """5x5 drift in (S1, D, S2, S3, d) order."""
        a = np.zeros((5, 5))
        a[:2, :2] = self.block1
        a[2:, 2:] = self.block2
        return a


def drift_matrices(derived: DerivedParams, params: LaserParams) -> DriftMatrices:
    g, r = params.gamma, params.pump_r
    ka, wp, al = params.kappa_a, params.omega_p, params.alpha
    kx, Gs = derived.kappa_x, derived.Gamma_s
    block1 = np.array([
        [0.0, g * (r - 1.0)],
        [-2.0 * kx, -g * r],
    ])
    block2 = np.array([
        [2.0 * ka, -2.0 * wp, -al * g * (r - 1.0)],
        [2.0 * wp, 2.0 * ka, -g * (r - 1.0)],
        [0.0, 2.0 * kx, -Gs],
    ])
    return DriftMatrices(block1=block1, block2=block2)


@dataclass(frozen=True)
class StabilityReport:
    max_real_eig_block1: float
    max_real_eig_block2: float
    eigenvalues_block1: np.ndarray = field(repr=False)
    eigenvalues_block2: np.ndarray = field(repr=False)

    @property
    def stable(self) -> bool:
        return max(self.max_real_eig_block1, self.max_real_eig_block2) < 0.0

    @property
    def slowest_decay(self) -> float:
        """Magnitude of the least negative real part (1/ns)."""
        return -max(self.max_real_eig_block1, self.max_real_eig_block2)

    @property
    def max_abs_eig(self) -> float:
        ev = np.concatenate([self.eigenvalues_block1, self.eigenvalues_block2])
        return float(np.max(np.abs(ev)))


def stability(drift: DriftMatrices) -> StabilityReport:
    e1 = np.linalg.eigvals(drift.block1)
    e2 = np.linalg.eigvals(drift.block2)
    return StabilityReport(
        max_real_eig_block1=float(np.max(e1.real)),
        max_real_eig_block2=float(np.max(e2.real)),
        eigenvalues_block1=e1,
        eigenvalues_block2=e2,
    )


def relaxation_frequency(params: LaserParams) -> float:
    """Damped relaxation-oscillation frequency, Im of the block-1 eigenvalue."""
    d = derive(params)
    g, r = params.gamma, params.pump_r
    disc = 2.0 * g * d.kappa_x * (r - 1.0) - 0.25 * (g * r) ** 2
    return float(np.sqrt(disc)) if disc > 0 else 0.0


# ---------------------------------------------------------------------------
# Nonlinear rotating-frame model
# ---------------------------------------------------------------------------

@dataclass
class FieldState:
    """Circular field amplitudes and inversions; arrays broadcast together."""

    a_plus: np.ndarray
    a_minus: np.ndarray
    D: np.ndarray
    d: np.ndarray

    def copy(self) -> "FieldState":
        return FieldState(
            np.array(self.a_plus, dtype=complex),
            np.array(self.a_minus, dtype=complex),
            np.array(self.D, dtype=float),
            np.array(self.d, dtype=float),
        )


def steady_state(params: LaserParams, derived: DerivedParams | None = None) -> FieldState:
    d = derived or derive(params)
    q = complex(d.Q)
    return FieldState(np.array(q), np.array(q), np.array(d.D_st), np.array(0.0))


def nonlinear_rhs(state: FieldState, params: LaserParams, derived: DerivedParams) -> FieldState:
    """Deterministic adiabatic equations in the frame rotating at ``delta_x``.

    The field is written as a(t) exp(-i delta_x t), so the lasing solution
    a_+ = a_- = Q, D = kappa_x / c, d = 0 is a fixed point.
    """
    ap, am, D, dd = state.a_plus, state.a_minus, state.D, state.d
    c = params.c_sat
    gain = c * (1.0 - 1j * params.alpha)
    couple = params.kappa_a + 1j * params.omega_p
    rot = 1j * derived.delta_x - params.kappa
    ip = np.abs(ap) ** 2
    im = np.abs(am) ** 2
    s_sum = ip + im
    s_diff = ip - im
    dap = rot * ap - couple * am + gain * (D + dd) * ap
    dam = rot * am - couple * ap + gain * (D - dd) * am
    dD = derived.mu - params.gamma * D - 2.0 * c * D * s_sum - 2.0 * c * dd * s_diff
    ddd = -params.gamma_s * dd - 2.0 * c * D * s_diff - 2.0 * c * dd * s_sum
    return FieldState(dap, dam, dD, ddd)


def stokes(a_plus, a_minus):
    """Stokes parameters (S0, S1, S2, S3) of circular amplitudes.

    S3 is oriented as |a_-|^2 - |a_+|^2, which makes the inversion
    difference d relax towards +2 kappa_x S3 / Gamma_s in the linearized
    polarization block.
    """
    ap = np.asarray(a_plus)
    am = np.asarray(a_minus)
    ip = np.abs(ap) ** 2
    im = np.abs(am) ** 2
    cross = np.conj(am) * ap
    return ip + im, 2.0 * cross.real, 2.0 * cross.imag, im - ip


def stokes_velocity(state: FieldState, rate: FieldState):
    """Time derivative of (S1, S2, S3) along ``rate`` (chain rule)."""
    ap, am = state.a_plus, state.a_minus
    dap, dam = rate.a_plus, rate.a_minus
    s1 = 2.0 * (np.conj(dap) * am + np.conj(ap) * dam).real
    s2 = 2.0 * (np.conj(dam) * ap + np.conj(am) * dap).imag
    s3 = 2.0 * ((np.conj(am) * dam).real - (np.conj(ap) * dap).real)
    return s1, s2, s3


def _pack(state: FieldState) -> np.ndarray:
    return np.array([
        np.real(state.a_plus), np.imag(state.a_plus),
        np.real(state.a_minus), np.imag(state.a_minus),
        state.D, state.d,
    ], dtype=float)


def _unpack(x: np.ndarray) -> FieldState:
    return FieldState(x[0] + 1j * x[1], x[2] + 1j * x[3], x[4], x[5])


def _stokes_coords(x: np.ndarray) -> np.ndarray:
    s = _unpack(x)
    _, s1, s2, s3 = stokes(s.a_plus, s.a_minus)
    return np.array([s1, s.D, s2, s3, s.d], dtype=float)


def _stokes_rate(x: np.ndarray, params: LaserParams, derived: DerivedParams) -> np.ndarray:
    s = _unpack(x)
    rate = nonlinear_rhs(s, params, derived)
    s1, s2, s3 = stokes_velocity(s, rate)
    return np.array([s1, rate.D, s2, s3, rate.d], dtype=float)


def numerical_stokes_drift(params: LaserParams, derived: DerivedParams | None = None,
                           rel_step: float = 1e-2) -> np.ndarray:
    """Finite-difference linearization of the nonlinear model in Stokes form.

    Differentiates the Stokes velocity along each of the six real field
    directions at the fixed point and maps back through the (rank-5) Stokes
    coordinate Jacobian; the common-phase direction drops out. The velocity
    is a cubic polynomial in the state, so a Richardson-extrapolated central
    difference is exact up to rounding and a large step is used.
    """
    d = derived or derive(params)
    x0 = _pack(steady_state(params, d))
    scales = np.array([d.Q, d.Q, d.Q, d.Q, d.D_st, d.D_st])

    def central(fun, j, h):
        e = np.zeros(6)
        e[j] = h
        return (fun(x0 + e) - fun(x0 - e)) / (2.0 * h)

    def richardson(fun, j):
        h = rel_step * scales[j]
        return (4.0 * central(fun, j, 0.5 * h) - central(fun, j, h)) / 3.0

    rate = lambda x: _stokes_rate(x, params, d)
    G = np.column_stack([richardson(rate, j) for j in range(6)])
    P = np.column_stack([richardson(_stokes_coords, j) for j in range(6)])
    return G @ np.linalg.pinv(P)


def sample_stable_params(rng: np.random.Generator, max_tries: int = 1000) -> LaserParams:
    """Draw a random lasing parameter set whose linearized dynamics are stable.

    Ranges span weak to strong birefringence, both dichroism signs, either
    sign of alpha and pump levels from just above threshold to 10x.
    """
    for _ in range(max_tries):
        gamma = float(rng.uniform(0.2, 5.0))
        params = LaserParams(
            kappa=float(rng.uniform(20.0, 1000.0)),
            kappa_a=float(rng.uniform(-2.0, 0.5)),
            omega_p=float(rng.uniform(-30.0, 30.0)),
            gamma=gamma,
            gamma_s=gamma * float(np.exp(rng.uniform(0.0, np.log(500.0)))),
            alpha=float(rng.uniform(-6.0, 6.0)),
            pump_r=float(1.0 + np.exp(rng.uniform(np.log(0.01), np.log(9.0)))),
            pump_p=float(rng.uniform(0.0, 1.0)),
            c_sat=gamma * float(rng.uniform(0.1, 2.0)),
        )
        if stability(drift_matrices(derive(params), params)).stable:
            return params
    raise RuntimeError("no stable parameter set found")
