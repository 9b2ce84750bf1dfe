"""White-noise diffusion, its factorization, and stochastic integration.

Every trajectory owns a Philox stream keyed by (seed, trajectory index), so
an ensemble is identical whether it is produced in one call or split into
batches, in any order.
"""
from __future__ import annotations

import csv
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import numba
import numpy as np
from scipy.linalg import expm

from .analytic import SourceSpectra
from .model import (
    STATE_LABELS,
    DerivedParams,
    DriftMatrices,
    LaserParams,
    derive,
    drift_matrices,
    stability,
    stokes,
)

IDX = {"S1": 0, "D": 1, "S2": 2, "S3": 3, "d": 4}
SCHEMES = ("exact", "euler")
_CHUNK = 1 << 16


class NotPositiveSemidefinite(ValueError):
    """Diffusion matrix has no real factorization (non-classical noise)."""

    def __init__(self, message, index=None, schur_value=None):
        super().__init__(message)
        self.index = index
        self.schur_value = schur_value


class StepSizeError(ValueError):
    pass


class UnstableParametersError(ValueError):
    pass


class SimulationDivergedError(RuntimeError):
    pass


@dataclass(frozen=True)
class DiffusionMatrix:
    m: np.ndarray
    pump_r: float | None = None
    pump_p: float | None = None


def diffusion_matrix(src: SourceSpectra, pump_r=None, pump_p=None) -> DiffusionMatrix:
    m = np.zeros((5, 5))
    s1, D, s2, s3, d = (IDX[k] for k in ("S1", "D", "S2", "S3", "d"))
    m[s1, s1] = m[s2, s2] = m[s3, s3] = src.s_common
    m[D, D] = src.s_DD
    m[d, d] = src.s_dd
    m[s1, D] = m[D, s1] = -src.s_common
    m[s3, d] = m[d, s3] = src.s_common
    return DiffusionMatrix(m, pump_r=pump_r, pump_p=pump_p)


def diffusion_for(params: LaserParams, derived: DerivedParams | None = None) -> DiffusionMatrix:
    from .analytic import source_spectra

    d = derived or derive(params)
    return diffusion_matrix(source_spectra(params, d), pump_r=params.pump_r, pump_p=params.pump_p)


@dataclass(frozen=True)
class NoiseFactor:
    l: np.ndarray

    @property
    def rank(self) -> int:
        return self.l.shape[1]


def pivoted_cholesky(m: np.ndarray, rel_tol: float = 1e-12):
    """Diagonal-pivoted Cholesky of a symmetric matrix.

    Returns ``(l, residual, remaining, tol)``: ``l`` is n-by-k with
    ``l @ l.T + residual == m``, ``remaining`` lists the indices never
    pivoted and ``tol`` is the absolute pivot threshold used.
    """
    m = np.asarray(m, dtype=float)
    n = m.shape[0]
    tol = rel_tol * max(float(np.trace(m)), 0.0)
    S = m.copy()
    remaining = list(range(n))
    cols = []
    while remaining:
        diag = np.array([S[i, i] for i in remaining])
        j = remaining[int(np.argmax(diag))]
        if S[j, j] <= tol:
            break
        col = np.zeros(n)
        col[remaining] = S[remaining, j] / np.sqrt(S[j, j])
        cols.append(col)
        S -= np.outer(col, col)
        remaining.remove(j)
    l = np.column_stack(cols) if cols else np.zeros((n, 0))
    return l, S, remaining, tol


def factorize(dm: DiffusionMatrix | np.ndarray, rel_tol: float = 1e-12) -> NoiseFactor:
    """Real factor ``l`` with ``l @ l.T == m``.

    Raises
    ------
    NotPositiveSemidefinite
        When a Schur complement goes negative beyond ``rel_tol * trace``.
        For the intensity block this is the condition p*r <= 2.
    """
    m = dm.m if isinstance(dm, DiffusionMatrix) else np.asarray(dm, dtype=float)
    l, S, remaining, tol = pivoted_cholesky(m, rel_tol)
    if remaining:
        sub = S[np.ix_(remaining, remaining)]
        worst = remaining[int(np.argmin(np.diag(sub)))]
        if np.min(np.diag(sub)) < -tol or np.max(np.abs(sub)) > tol:
            value = float(S[worst, worst])
            msg = (
                f"diffusion matrix is not positive semidefinite: Schur complement "
                f"for {STATE_LABELS[worst]} is {value:.6g} (tolerance {tol:.3g})"
            )
            if worst in (IDX["S1"], IDX["D"]):
                msg += (
                    "; the intensity/inversion block [[A, -A], [-A, B]] requires B >= A, "
                    "i.e. p*r <= 2"
                )
                if isinstance(dm, DiffusionMatrix) and dm.pump_r is not None:
                    msg += f" (here p*r = {dm.pump_p * dm.pump_r:.6g})"
                msg += ". Sub-shot-noise pumping cannot be sampled as real Gaussian noise."
            raise NotPositiveSemidefinite(msg, index=worst, schur_value=value)
    return NoiseFactor(l)


@dataclass(frozen=True)
class SimConfig:
    dt: float = 0.002
    t_total: float = 800.0
    n_traj: int = 10
    seed: int = 0
    burn_in: float | None = None
    scheme: str = "exact"
    max_step_ratio: float = 0.1

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt must be > 0, got {self.dt}")
        if not self.t_total > 0:
            raise ValueError(f"t_total must be > 0, got {self.t_total}")
        if int(self.n_traj) < 1:
            raise ValueError(f"n_traj must be >= 1, got {self.n_traj}")
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if self.burn_in is not None and self.burn_in < 0:
            raise ValueError("burn_in must be >= 0")

    def resolved_burn_in(self, slowest_decay: float) -> float:
        """Burn-in span; defaults to 10 / |max real eigenvalue|."""
        if self.burn_in is not None:
            return float(self.burn_in)
        return 10.0 / slowest_decay

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class Ensemble:
    t: np.ndarray
    x: np.ndarray  # (n_traj, n_samples, 5), order (S1, D, S2, S3, d)
    dt: float
    config: SimConfig
    traj_index: np.ndarray
    sub_seeds: list
    params: dict | None = None
    kind: str = "linear"
    meta: dict = field(default_factory=dict)

    @property
    def n_traj(self) -> int:
        return self.x.shape[0]

    @property
    def n_samples(self) -> int:
        return self.x.shape[1]

    def component(self, name: str) -> np.ndarray:
        return self.x[:, :, IDX[name]]

    def to_csv(self, directory, prefix: str = "traj") -> list[Path]:
        out = Path(directory)
        out.mkdir(parents=True, exist_ok=True)
        paths = []
        for i, k in enumerate(self.traj_index):
            p = out / f"{prefix}_{int(k):05d}.csv"
            tmp = p.with_suffix(".csv.tmp")
            with tmp.open("w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(("t",) + STATE_LABELS)
                for n in range(self.n_samples):
                    w.writerow([repr(float(self.t[n]))] + [repr(float(v)) for v in self.x[i, n]])
            tmp.replace(p)
            paths.append(p)
        return paths


def trajectory_stream(seed: int, index: int):
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(index),))
    state = ss.generate_state(2, dtype=np.uint64)
    sub_seed = (int(state[0]) << 64) | int(state[1])
    return np.random.Generator(np.random.Philox(ss)), sub_seed


def discretize(a: np.ndarray, m: np.ndarray, dt: float, scheme: str):
    """One-step propagator F and noise factor G with x' = F x + G w, w ~ N(0, I).

    ``exact`` uses the matrix exponential and the exact step covariance
    (Van Loan block exponential); ``euler`` is Euler-Maruyama.
    """
    n = a.shape[0]
    if scheme == "euler":
        F = np.eye(n) + a * dt
        G = factorize(m).l * np.sqrt(dt)
        return F, G
    blk = np.zeros((2 * n, 2 * n))
    blk[:n, :n] = -a
    blk[:n, n:] = m
    blk[n:, n:] = a.T
    E = expm(blk * dt)
    F = E[n:, n:].T
    Qd = F @ E[:n, n:]
    Qd = 0.5 * (Qd + Qd.T)
    G = factorize(Qd).l if np.any(m) else np.zeros((n, 0))
    return F, G


@numba.njit(cache=True)
def _propagate_linear(F, G, x, noise, out, start, n_skip):
    n, k = F.shape[0], G.shape[1]
    y = np.empty(n)
    for s in range(noise.shape[0]):
        for i in range(n):
            acc = 0.0
            for j in range(n):
                acc += F[i, j] * x[j]
            for j in range(k):
                acc += G[i, j] * noise[s, j]
            y[i] = acc
        for i in range(n):
            x[i] = y[i]
        idx = start + s + 1 - n_skip
        if 0 <= idx < out.shape[0]:
            for i in range(n):
                out[idx, i] = x[i]


def _time_axis(cfg: SimConfig, slowest_decay: float):
    n_total = int(round(cfg.t_total / cfg.dt))
    burn = cfg.resolved_burn_in(slowest_decay)
    if cfg.t_total < 10.0 * burn:
        raise ValueError(
            f"t_total ({cfg.t_total} ns) must be at least 10x the burn-in ({burn:.4g} ns)"
        )
    n_skip = int(round(burn / cfg.dt))
    n_rec = n_total - n_skip
    t = (n_skip + np.arange(n_rec)) * cfg.dt
    return n_total, n_skip, t


def _check_sim(drift: DriftMatrices, cfg: SimConfig):
    rep = stability(drift)
    if not rep.stable:
        raise UnstableParametersError(
            f"linearized dynamics unstable (max Re eig: block1 {rep.max_real_eig_block1:.4g}, "
            f"block2 {rep.max_real_eig_block2:.4g})"
        )
    if cfg.scheme == "euler" and cfg.dt * rep.max_abs_eig >= cfg.max_step_ratio:
        raise StepSizeError(
            f"dt * max|eig| = {cfg.dt * rep.max_abs_eig:.4g} exceeds {cfg.max_step_ratio} "
            f"for the Euler-Maruyama scheme; reduce dt below {cfg.max_step_ratio / rep.max_abs_eig:.3g} ns"
        )
    return rep


def simulate_linear(drift: DriftMatrices, factor: NoiseFactor, cfg: SimConfig,
                    traj_indices=None, params: LaserParams | None = None) -> Ensemble:
    """Integrate the linearized Stokes SDE from x = 0, discarding burn-in."""
    rep = _check_sim(drift, cfg)
    a = drift.full
    m = factor.l @ factor.l.T
    F, G = discretize(a, m, cfg.dt, cfg.scheme)
    n_total, n_skip, t = _time_axis(cfg, rep.slowest_decay)
    idx = np.arange(cfg.n_traj) if traj_indices is None else np.asarray(traj_indices, dtype=int)
    x_out = np.empty((idx.size, t.size, 5))
    seeds = []
    k = G.shape[1]
    for row, ti in enumerate(idx):
        rng, sub = trajectory_stream(cfg.seed, ti)
        seeds.append(sub)
        x = np.zeros(5)
        if n_skip == 0:
            x_out[row, 0] = x
        for start in range(0, n_total, _CHUNK):
            steps = min(_CHUNK, n_total - start)
            noise = rng.standard_normal((steps, k))
            _propagate_linear(F, G, x, noise, x_out[row], start, n_skip)
    return Ensemble(
        t=t, x=x_out, dt=cfg.dt, config=cfg, traj_index=idx, sub_seeds=seeds,
        params=params.as_dict() if params is not None else None, kind=f"linear:{cfg.scheme}",
    )


@numba.njit(cache=True)
def _propagate_nonlinear(state, consts, G, noise, out, start, n_skip, limits):
    """Euler-Maruyama for the rotating-frame field/inversion equations.

    ``state`` = [Re a+, Im a+, Re a-, Im a-, D, d]; ``consts`` packs
    (kappa, kappa_a, omega_p, gamma, gamma_s, alpha, c, mu, delta_x, dt, Q,
    n_x, D_st). Returns the step at which the state left ``limits`` or -1.
    """
    kappa, kappa_a, omega_p, gamma, gamma_s, alpha, c, mu, delta_x, dt, Q, n_x, D_st = (
        consts[0], consts[1], consts[2], consts[3], consts[4], consts[5], consts[6],
        consts[7], consts[8], consts[9], consts[10], consts[11], consts[12])
    ap = complex(state[0], state[1])
    am = complex(state[2], state[3])
    D = state[4]
    d = state[5]
    gain = c * complex(1.0, -alpha)
    couple = complex(kappa_a, omega_p)
    rot = complex(-kappa, delta_x)
    k = G.shape[1]
    eta = np.empty(5)
    inv4q = 1.0 / (4.0 * Q)
    for s in range(noise.shape[0]):
        for i in range(5):
            acc = 0.0
            for j in range(k):
                acc += G[i, j] * noise[s, j]
            eta[i] = acc
        ip = ap.real * ap.real + ap.imag * ap.imag
        im = am.real * am.real + am.imag * am.imag
        ssum = ip + im
        sdiff = ip - im
        dap = rot * ap - couple * am + gain * (D + d) * ap
        dam = rot * am - couple * ap + gain * (D - d) * am
        dD = mu - gamma * D - 2.0 * c * D * ssum - 2.0 * c * d * sdiff
        ddd = -gamma_s * d - 2.0 * c * D * sdiff - 2.0 * c * d * ssum
        xi_p = complex((eta[0] - eta[3]) * inv4q, eta[2] * inv4q)
        xi_m = complex((eta[0] + eta[3]) * inv4q, -eta[2] * inv4q)
        ap = ap + dap * dt + xi_p
        am = am + dam * dt + xi_m
        D = D + dD * dt + eta[1]
        d = d + ddd * dt + eta[4]
        if (abs(ap) > limits[0] or abs(am) > limits[0] or abs(D) > limits[1]
                or abs(d) > limits[1] or not np.isfinite(D)):
            state[0] = ap.real
            state[1] = ap.imag
            state[2] = am.real
            state[3] = am.imag
            state[4] = D
            state[5] = d
            return start + s + 1
        idx = start + s + 1 - n_skip
        if 0 <= idx < out.shape[0]:
            ip = ap.real * ap.real + ap.imag * ap.imag
            im = am.real * am.real + am.imag * am.imag
            cross = am.conjugate() * ap
            out[idx, 0] = 2.0 * cross.real - n_x
            out[idx, 1] = D - D_st
            out[idx, 2] = 2.0 * cross.imag
            out[idx, 3] = im - ip
            out[idx, 4] = d
    state[0] = ap.real
    state[1] = ap.imag
    state[2] = am.real
    state[3] = am.imag
    state[4] = D
    state[5] = d
    return -1


def simulate_nonlinear(params: LaserParams, derived: DerivedParams | None, factor: NoiseFactor,
                       cfg: SimConfig, initial=None, traj_indices=None) -> Ensemble:
    """Euler-Maruyama integration of the nonlinear equations with frozen noise.

    Noise increments are sampled from the steady-state diffusion and mapped
    onto the circular fields through the steady amplitude, so the linearized
    dynamics of this integrator coincide with :func:`simulate_linear` under
    the ``euler`` scheme. Records Stokes fluctuations about the steady state.

    ``initial`` is an optional :class:`~vcselnoise.model.FieldState`; the
    default start is the steady state.
    """
    d = derived or derive(params)
    drift = drift_matrices(d, params)
    rep = _check_sim(drift, dataclasses.replace(cfg, scheme="euler"))
    n_total, n_skip, t = _time_axis(cfg, rep.slowest_decay)
    G = factor.l * np.sqrt(cfg.dt)
    consts = np.array([
        params.kappa, params.kappa_a, params.omega_p, params.gamma, params.gamma_s,
        params.alpha, params.c_sat, d.mu, d.delta_x, cfg.dt, d.Q, d.n_x, d.D_st,
    ])
    limits = np.array([1e3 * max(d.Q, 1e-300), 1e3 * d.D_st])
    idx = np.arange(cfg.n_traj) if traj_indices is None else np.asarray(traj_indices, dtype=int)
    x_out = np.empty((idx.size, t.size, 5))
    seeds = []
    for row, ti in enumerate(idx):
        rng, sub = trajectory_stream(cfg.seed, ti)
        seeds.append(sub)
        if initial is None:
            st = np.array([d.Q, 0.0, d.Q, 0.0, d.D_st, 0.0])
        else:
            st = np.array([
                np.real(initial.a_plus), np.imag(initial.a_plus),
                np.real(initial.a_minus), np.imag(initial.a_minus),
                float(initial.D), float(initial.d),
            ], dtype=float)
        if n_skip == 0:
            _, s1, s2, s3 = stokes(st[0] + 1j * st[1], st[2] + 1j * st[3])
            x_out[row, 0] = (s1 - d.n_x, st[4] - d.D_st, s2, s3, st[5])
        for start in range(0, n_total, _CHUNK):
            steps = min(_CHUNK, n_total - start)
            noise = rng.standard_normal((steps, factor.rank))
            bad = _propagate_nonlinear(st, consts, G, noise, x_out[row], start, n_skip, limits)
            if bad >= 0:
                raise SimulationDivergedError(
                    f"trajectory {int(ti)} left 1e3 x steady scale at t = {bad * cfg.dt:.4g} ns"
                )
    return Ensemble(
        t=t, x=x_out, dt=cfg.dt, config=cfg, traj_index=idx, sub_seeds=seeds,
        params=params.as_dict(), kind="nonlinear:euler",
    )
