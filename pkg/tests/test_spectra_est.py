import numpy as np
import pytest

from vcselnoise.model import LaserParams, derive, drift_matrices
from vcselnoise.noise_sim import Ensemble, NoiseFactor, SimConfig, diffusion_for, factorize, simulate_linear
from vcselnoise.spectra_est import (
    closed_form_variance,
    estimate,
    run_estimate,
    segment_periodograms,
    variance_check,
)

FIG = LaserParams()
D = derive(FIG)
DRIFT = drift_matrices(D, FIG)
FACTOR = factorize(diffusion_for(FIG, D))


def _white(n_traj, n, dt, cov, seed=0):
    rng = np.random.default_rng(seed)
    l = np.linalg.cholesky(cov)
    x = rng.standard_normal((n_traj, n, 5)) @ l.T / np.sqrt(dt)
    cfg = SimConfig(dt=dt, t_total=n * dt, n_traj=n_traj, burn_in=0.0)
    return Ensemble(t=np.arange(n) * dt, x=x, dt=dt, config=cfg, traj_index=np.arange(n_traj),
                    sub_seeds=list(range(n_traj)))


@pytest.mark.parametrize("window", ["rectangular", "hann"])
def test_white_noise_calibration(window):
    """A white source of strength m gives a flat estimate m."""
    cov = np.eye(5)
    cov[2, 2], cov[3, 3] = 2.0, 3.0
    cov[2, 3] = cov[3, 2] = 1.2
    ens = _white(16, 8192, 0.01, cov)
    est = estimate(ens, window, segment_len=2.56)
    for name, ref in (("s11", 1.0), ("s22", 2.0), ("s33", 3.0), ("s23", 1.2), ("s12", 0.0)):
        m, se = est.mean(name)[1:-1], est.stderr(name)[1:-1]
        z = (m - ref) / se
        assert np.mean(np.abs(z) < 3) > 0.98
        assert np.mean(m) == pytest.approx(ref, abs=0.02 * max(ref, 1.0))


def test_grid_and_error_scaling():
    ens = _white(8, 4096, 0.01, np.eye(5))
    a = estimate(ens, "hann", segment_len=1.28)
    b = estimate(ens, "hann", segment_len=1.28, unit="segment")
    assert a.spacing == pytest.approx(2 * np.pi / 1.28)
    assert a.count == 8 and b.count == 8 * 32 and a.n_segments == b.n_segments == 256
    np.testing.assert_allclose(a.mean("s11"), b.mean("s11"), rtol=1e-12)
    # same data, same 1/sqrt(total segments) scaling whichever unit is used
    ratio = np.median(a.stderr("s11")[1:-1] / b.stderr("s11")[1:-1])
    assert ratio == pytest.approx(1.0, abs=0.3)
    c = estimate(_white(32, 4096, 0.01, np.eye(5), seed=1), "hann", segment_len=1.28)
    assert np.median(c.stderr("s11")[1:-1] / a.stderr("s11")[1:-1]) == pytest.approx(0.5, abs=0.1)


def test_zero_input():
    ens = _white(3, 1024, 0.01, np.eye(5))
    ens.x[:] = 0.0
    est = estimate(ens, "rectangular", segment_len=2.56)
    assert not np.any(est.mean("s11")) and not np.any(est.stderr("s11"))


def test_symmetry_and_reality():
    ens = simulate_linear(DRIFT, FACTOR, SimConfig(t_total=40.0, n_traj=2, burn_in=4.0))
    est = estimate(ens, "hann", segment_len=10.0)
    np.testing.assert_array_equal(est.mean("s23"), est.mean("s32"))
    assert est.mean("s11").dtype == float


def test_segment_validation():
    ens = _white(1, 1000, 0.01, np.eye(5))
    with pytest.raises(ValueError, match="at least 64"):
        estimate(ens, segment_len=0.5)
    with pytest.raises(ValueError, match="longer"):
        estimate(ens, segment_len=20.0)
    with pytest.raises(ValueError):
        estimate(ens, window="blackman")
    with pytest.raises(ValueError):
        segment_periodograms(ens.x, 0.01, 32)


def test_merge_order_independent():
    cfg = SimConfig(t_total=40.0, n_traj=6, burn_in=4.0, seed=5)
    whole = run_estimate(DRIFT, FACTOR, cfg, segment_len=10.0, batch_size=6)
    pieces = run_estimate(DRIFT, FACTOR, cfg, segment_len=10.0, batch_size=4)
    parts = [estimate(simulate_linear(DRIFT, FACTOR, cfg, traj_indices=[i]), segment_len=10.0, unit="trajectory")
             for i in (5, 3, 1, 0, 2, 4)]
    rev = parts[0]
    for p in parts[1:]:
        rev = rev.merge(p)
    for est in (pieces, rev):
        np.testing.assert_allclose(est.mean("s22"), whole.mean("s22"), rtol=1e-12)
        np.testing.assert_allclose(est.stderr("s22"), whole.stderr("s22"), rtol=1e-9)
    with pytest.raises(ValueError):
        whole.merge(estimate(simulate_linear(DRIFT, FACTOR, cfg, traj_indices=[0]), segment_len=5.0))


def test_windows_agree_on_smooth_spectrum():
    cfg = SimConfig(t_total=440.0, n_traj=24, burn_in=40.0, seed=2)
    ens = simulate_linear(DRIFT, FACTOR, cfg)
    h = estimate(ens, "hann", segment_len=100.0)
    r = estimate(ens, "rectangular", segment_len=100.0)
    band = (h.omegas > 8.0) & (h.omegas < 20.0)  # away from the resonances
    se = np.hypot(h.stderr("s11"), r.stderr("s11"))[band]
    assert np.mean(np.abs(h.mean("s11") - r.mean("s11"))[band] / se < 3) > 0.95


def test_closed_form_variance_matches_lyapunov():
    from scipy.linalg import solve_continuous_lyapunov
    sigma = solve_continuous_lyapunov(DRIFT.full, -diffusion_for(FIG, D).m)
    v = closed_form_variance(FIG)
    assert v["s11"] == pytest.approx(sigma[0, 0], rel=1e-8)
    assert v["s22"] == pytest.approx(sigma[2, 2], rel=1e-8)
    assert v["s33"] == pytest.approx(sigma[3, 3], rel=1e-8)


def test_variance_check_linear_sim():
    cfg = SimConfig(t_total=440.0, n_traj=24, burn_in=40.0, seed=9)
    ens = simulate_linear(DRIFT, FACTOR, cfg)
    rep = variance_check(ens, FIG)
    assert rep.max_abs_z < 3
    assert rep.flagged() == []


def test_variance_check_zero_noise():
    cfg = SimConfig(t_total=40.0, n_traj=3, burn_in=4.0)
    ens = simulate_linear(DRIFT, NoiseFactor(np.zeros((5, 0))), cfg)
    mom = np.mean(ens.x[:, :, [0, 2, 3]] ** 2, axis=1)
    assert not np.any(mom)
    zero = LaserParams(pump_r=1.04)
    rep = variance_check(mom, zero)
    assert all(v == 0.0 for v in rep.sample.values())


def test_variance_check_negative_control():
    cfg = SimConfig(t_total=440.0, n_traj=24, burn_in=40.0, seed=9)
    ens = simulate_linear(DRIFT, FACTOR, cfg)
    rep = variance_check(ens, FIG.replace(pump_r=1.2))
    assert rep.max_abs_z > 5 and rep.flagged()
