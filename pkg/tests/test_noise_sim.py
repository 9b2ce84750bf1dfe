import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vcselnoise.analytic import SourceSpectra, source_spectra
from vcselnoise.model import LaserParams, derive, drift_matrices, relaxation_frequency, steady_state
from vcselnoise.noise_sim import (
    IDX,
    NoiseFactor,
    NotPositiveSemidefinite,
    SimConfig,
    SimulationDivergedError,
    StepSizeError,
    UnstableParametersError,
    diffusion_for,
    diffusion_matrix,
    discretize,
    factorize,
    pivoted_cholesky,
    simulate_linear,
    simulate_nonlinear,
    trajectory_stream,
)

FIG = LaserParams()
D = derive(FIG)
DRIFT = drift_matrices(D, FIG)
FACTOR = factorize(diffusion_for(FIG, D))
SHORT = SimConfig(dt=0.002, t_total=40.0, n_traj=3, seed=11, burn_in=4.0)


def test_diffusion_reference_entries():
    m = diffusion_for(FIG, D).m
    assert m[IDX["S1"], IDX["S1"]] == pytest.approx(48.96)
    assert m[IDX["S1"], IDX["D"]] == pytest.approx(-48.96)
    assert m[IDX["S3"], IDX["d"]] == pytest.approx(48.96)
    assert m[IDX["S2"], IDX["S2"]] == m[IDX["S3"], IDX["S3"]] == m[IDX["S1"], IDX["S1"]]
    assert m[IDX["D"], IDX["D"]] == pytest.approx(648.96)
    zero_pattern = np.ones((5, 5), bool)
    for i, j in [("S1", "S1"), ("D", "D"), ("S2", "S2"), ("S3", "S3"), ("d", "d"),
                 ("S1", "D"), ("D", "S1"), ("S3", "d"), ("d", "S3")]:
        zero_pattern[IDX[i], IDX[j]] = False
    assert not np.any(m[zero_pattern])


def test_zero_sources():
    m = diffusion_matrix(SourceSpectra(0.0, 0.0, 0.0)).m
    assert not np.any(m)
    assert factorize(m).rank == 0


@settings(max_examples=100, deadline=None)
@given(a=st.floats(0, 1e3), b=st.floats(0, 1e3), c=st.floats(0, 1e3))
def test_diffusion_symmetric(a, b, c):
    m = diffusion_matrix(SourceSpectra(a, b, c)).m
    np.testing.assert_array_equal(m, m.T)


@settings(max_examples=200, deadline=None)
@given(r=st.floats(1.001, 30.0), p=st.floats(0.0, 1.0), gs=st.floats(1.0, 1000.0))
def test_factorization_reconstructs(r, p, gs):
    prm = LaserParams(pump_r=r, pump_p=p, gamma_s=gs)
    dm = diffusion_for(prm)
    if p * r > 2.0 + 1e-9:
        with pytest.raises(NotPositiveSemidefinite):
            factorize(dm)
        return
    f = factorize(dm)
    err = np.linalg.norm(f.l @ f.l.T - dm.m) / np.linalg.norm(dm.m)
    assert err <= 1e-10


def test_psd_examples():
    factorize(diffusion_for(FIG.replace(pump_p=1.0)))  # p*r = 1.04
    with pytest.raises(NotPositiveSemidefinite) as exc:
        factorize(diffusion_for(FIG.replace(pump_p=1.0, pump_r=6.0)))
    msg = str(exc.value)
    assert "p*r <= 2" in msg and "6" in msg
    assert exc.value.schur_value < 0


def test_frontier_is_sharp():
    for r in (1.5, 2.0, 4.0, 10.0):
        p_edge = 2.0 / r
        if p_edge * (1 + 1e-6) <= 1.0:
            factorize(diffusion_for(FIG.replace(pump_r=r, pump_p=p_edge * (1 - 1e-6))))
            with pytest.raises(NotPositiveSemidefinite):
                factorize(diffusion_for(FIG.replace(pump_r=r, pump_p=p_edge * (1 + 1e-6))))


def test_pivoted_cholesky_generic():
    rng = np.random.default_rng(3)
    b = rng.standard_normal((6, 3))
    m = b @ b.T
    l, resid, remaining, tol = pivoted_cholesky(m)
    assert l.shape[1] == 3
    np.testing.assert_allclose(l @ l.T, m, atol=1e-10 * np.trace(m))
    with pytest.raises(NotPositiveSemidefinite):
        factorize(np.diag([1.0, -1.0]))


def test_discretize_schemes():
    a = DRIFT.full
    m = diffusion_for(FIG, D).m
    F, G = discretize(a, m, 1e-4, "euler")
    np.testing.assert_allclose(F, np.eye(5) + a * 1e-4)
    Fe, Ge = discretize(a, m, 1e-4, "exact")
    from scipy.linalg import expm
    np.testing.assert_allclose(Fe, expm(a * 1e-4), rtol=1e-12, atol=1e-14)
    # exact covariance approaches m dt for small steps
    np.testing.assert_allclose(Ge @ Ge.T / 1e-4, m, rtol=5e-2, atol=1e-2 * np.abs(m).max())
    with pytest.raises(ValueError):
        SimConfig(scheme="midpoint")


def test_exact_scheme_stationary_covariance():
    """The exact one-step map preserves the Lyapunov covariance."""
    from scipy.linalg import solve_continuous_lyapunov
    a = DRIFT.full
    m = diffusion_for(FIG, D).m
    sigma = solve_continuous_lyapunov(a, -m)
    F, G = discretize(a, m, 0.01, "exact")
    np.testing.assert_allclose(F @ sigma @ F.T + G @ G.T, sigma, rtol=1e-9, atol=1e-9 * np.abs(sigma).max())
    assert sigma[IDX["S1"], IDX["S1"]] == pytest.approx(24.538461538, rel=1e-8)


def test_zero_factor_gives_zero():
    ens = simulate_linear(DRIFT, NoiseFactor(np.zeros((5, 0))), SHORT)
    assert not np.any(ens.x)


def test_determinism_and_batch_invariance():
    a = simulate_linear(DRIFT, FACTOR, SHORT)
    b = simulate_linear(DRIFT, FACTOR, SHORT)
    np.testing.assert_array_equal(a.x, b.x)
    parts = [simulate_linear(DRIFT, FACTOR, SHORT, traj_indices=[i]) for i in (2, 0, 1)]
    np.testing.assert_array_equal(parts[1].x[0], a.x[0])
    np.testing.assert_array_equal(parts[2].x[0], a.x[1])
    np.testing.assert_array_equal(parts[0].x[0], a.x[2])
    assert len(set(a.sub_seeds)) == 3
    c = simulate_linear(DRIFT, FACTOR, SHORT.__class__(**{**SHORT.as_dict(), "seed": 12}))
    assert not np.array_equal(a.x, c.x)


def test_chunk_boundary_invariance(monkeypatch):
    import vcselnoise.noise_sim as ns
    a = simulate_linear(DRIFT, FACTOR, SHORT)
    monkeypatch.setattr(ns, "_CHUNK", 997)
    b = ns.simulate_linear(DRIFT, FACTOR, SHORT)
    # the random stream is consumed in the same order, only blocked differently
    np.testing.assert_allclose(a.x, b.x, rtol=0, atol=0)


def test_streams_distinct():
    r0, s0 = trajectory_stream(5, 0)
    r1, s1 = trajectory_stream(5, 1)
    assert s0 != s1
    assert r0.standard_normal() != r1.standard_normal()


def test_time_axis_and_shapes():
    ens = simulate_linear(DRIFT, FACTOR, SHORT)
    assert ens.x.shape == (3, ens.t.size, 5)
    assert ens.t[0] == pytest.approx(4.0) and np.allclose(np.diff(ens.t), SHORT.dt)
    assert ens.n_samples == round((40.0 - 4.0) / 0.002)


def test_burn_in_guard_and_default():
    with pytest.raises(ValueError, match="burn-in"):
        simulate_linear(DRIFT, FACTOR, SimConfig(t_total=100.0, n_traj=1))  # default burn-in ~78 ns
    assert SimConfig().resolved_burn_in(0.1274) == pytest.approx(78.49, rel=1e-3)


def test_step_guard_euler_only():
    cfg = SimConfig(dt=0.002, t_total=20.0, n_traj=1, burn_in=1.0, scheme="euler")
    with pytest.raises(StepSizeError):
        simulate_linear(DRIFT, FACTOR, cfg)
    simulate_linear(DRIFT, FACTOR, SimConfig(dt=0.002, t_total=20.0, n_traj=1, burn_in=1.0))


def test_unstable_rejected():
    p = FIG.replace(kappa_a=5.0, omega_p=0.0)
    d = derive(p)
    with pytest.raises(UnstableParametersError):
        simulate_linear(drift_matrices(d, p), FACTOR, SHORT)


def test_linear_stationarity():
    cfg = SimConfig(dt=0.002, t_total=400.0, n_traj=8, seed=3, burn_in=40.0)
    ens = simulate_linear(DRIFT, FACTOR, cfg)
    # trajectory means are independent; compare their average with its spread
    means = ens.x.mean(axis=1)
    z = means.mean(axis=0) / (means.std(axis=0, ddof=1) / np.sqrt(ens.n_traj))
    assert np.all(np.abs(z) < 3 * 1.5)  # 8 units: t-distribution tails are wider than normal


def test_csv_dump(tmp_path):
    ens = simulate_linear(DRIFT, FACTOR, SimConfig(dt=0.002, t_total=2.0, n_traj=2, burn_in=0.2))
    paths = ens.to_csv(tmp_path)
    assert len(paths) == 2
    lines = paths[0].read_text().splitlines()
    assert lines[0] == "t,dS1,dD,dS2,dS3,dd"
    assert len(lines) == ens.n_samples + 1
    row = np.array(lines[5].split(","), dtype=float)
    assert row[0] == ens.t[4] and np.array_equal(row[1:], ens.x[0, 4])


# --- nonlinear --------------------------------------------------------------

def test_nonlinear_steady_start_constant():
    cfg = SimConfig(dt=0.0005, t_total=5.0, n_traj=1, burn_in=0.0, scheme="euler")
    ens = simulate_nonlinear(FIG, D, NoiseFactor(np.zeros((5, 0))), cfg)
    assert np.max(np.abs(ens.x)) < 1e-12 * max(D.n_x, D.D_st)


def test_nonlinear_rings_at_relaxation_frequency():
    cfg = SimConfig(dt=0.0005, t_total=20.0, n_traj=1, burn_in=0.0, scheme="euler")
    st0 = steady_state(FIG, D)
    st0.D = st0.D * (1 + 1e-4)
    ens = simulate_nonlinear(FIG, D, NoiseFactor(np.zeros((5, 0))), cfg, initial=st0)
    x, t = ens.component("S1")[0], ens.t
    assert abs(x[0]) < 1e-12 * D.n_x
    sgn = np.signbit(x[1:])
    k = np.nonzero(sgn[1:] != sgn[:-1])[0] + 1
    tc = t[k] - x[k] * (t[k + 1] - t[k]) / (x[k + 1] - x[k])
    freq = np.pi / np.mean(np.diff(tc))
    assert freq == pytest.approx(relaxation_frequency(FIG), rel=0.02)
    # and it decays
    assert np.abs(x[-4000:]).max() < 0.1 * np.abs(x[:4000]).max()


def test_nonlinear_matches_linear_at_small_noise():
    from vcselnoise.spectra_est import estimate
    p = FIG.replace(c_sat=1e-12)
    d = derive(p)
    f = factorize(diffusion_for(p, d))
    cfg = SimConfig(dt=0.001, t_total=200.0, n_traj=4, burn_in=20.0, scheme="euler")
    nl = estimate(simulate_nonlinear(p, d, f, cfg), "hann", 50.0)
    li = estimate(simulate_linear(drift_matrices(d, p), f, cfg), "hann", 50.0)
    band = (nl.omegas >= 0.5) & (nl.omegas <= 20.0)
    for n in ("s11", "s22", "s33"):
        assert np.max(np.abs(nl.mean(n) / li.mean(n) - 1)[band]) < 0.1


def test_nonlinear_divergence_detected():
    cfg = SimConfig(dt=0.0005, t_total=5.0, n_traj=1, burn_in=0.0, scheme="euler")
    big = NoiseFactor(FACTOR.l * 1e6)
    with pytest.raises(SimulationDivergedError):
        simulate_nonlinear(FIG, D, big, cfg)
