"""Command-line front end.

Exit codes: 0 success, 2 configuration error, 3 physics error (below
threshold, unstable, non-classical noise, divergence), 4 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import config as cfgmod
from .analytic import (
    SingularSpectrumError,
    cross_correlation_C,
    relaxation_peak,
    stokes_spectra_closed_form,
)
from .config import ConfigError, RunConfig
from .detection import UnsupportedGeometryError, detection_spectrum, squeezing_at_zero
from .model import BelowThresholdError, derive, drift_matrices, relaxation_frequency, stability
from .noise_sim import (
    NotPositiveSemidefinite,
    SimulationDivergedError,
    StepSizeError,
    UnstableParametersError,
    diffusion_for,
    factorize,
    simulate_linear,
)
from .spectra_est import run_estimate, variance_check

log = logging.getLogger("vcselnoise")

EXIT_OK, EXIT_CONFIG, EXIT_PHYSICS, EXIT_NUMERICAL = 0, 2, 3, 4
PHYSICS_ERRORS = (BelowThresholdError, UnstableParametersError, NotPositiveSemidefinite,
                  SimulationDivergedError)
NUMERICAL_ERRORS = (SingularSpectrumError, StepSizeError, FloatingPointError, np.linalg.LinAlgError)


# ---------------------------------------------------------------------------
# output helpers
# ---------------------------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _atomic_write(path: Path, text: str):
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def write_csv(path: Path, header, rows, meta: dict) -> Path:
    """Write a CSV and its ``.meta.json`` sidecar, each atomically."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    path.parent.mkdir(parents=True, exist_ok=True)
    _atomic_write(path, buf.getvalue())
    side = dict(meta, file=path.name, columns=list(header))
    _atomic_write(path.with_suffix(".meta.json"), json.dumps(side, indent=2, sort_keys=True) + "\n")
    log.info("wrote %s", path)
    return path


def _svg(path: Path, draw):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    with matplotlib.rc_context({"svg.hashsalt": "vcselnoise", "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(6.0, 4.0))
        draw(ax)
        fig.tight_layout()
        buf = io.StringIO()
        fig.savefig(buf, format="svg", metadata={"Date": None})
        plt.close(fig)
    _atomic_write(path, buf.getvalue())
    log.info("wrote %s", path)


def _physics(cfg: RunConfig):
    params = cfg.laser()
    d = derive(params)
    return params, d


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_spectra(cfg: RunConfig, out: Path) -> int:
    params, d = _physics(cfg)
    grid = cfg.grid()
    sp = stokes_spectra_closed_form(params, d, grid, cfg.variant)
    c = cross_correlation_C(sp)
    rows = zip(grid.omegas, sp.s11, sp.s22, sp.s33, sp.s23, c)
    meta = cfgmod.metadata(cfg, "spectra")
    write_csv(out / "spectra.csv", ("omega_ghz", "s11", "s22", "s33", "s23", "c_plus_minus"), rows, meta)
    if cfg.plot:
        def draw(ax):
            w = grid.omegas
            ax.semilogy(w, sp.s11, label="S1 (intensity)")
            ax.semilogy(w, sp.s22, label="S2")
            ax.semilogy(w, sp.s33, label="S3")
            ax.semilogy(w, np.abs(sp.s23), ":", label="|S2 S3 cross|")
            ax.set_xlabel("Omega (GHz)")
            ax.set_ylabel("spectral density")
            ax.legend()
        _svg(out / "spectra.svg", draw)
    return EXIT_OK


def cmd_simulate(cfg: RunConfig, out: Path) -> int:
    params, d = _physics(cfg)
    sim = cfg.sim()
    drift = drift_matrices(d, params)
    factor = factorize(diffusion_for(params, d))
    if cfg.dump_trajectories:
        ens = simulate_linear(drift, factor, sim, params=params)
        ens.to_csv(out / "trajectories")
    est, moments = run_estimate(drift, factor, sim, window=cfg.window, segment_len=cfg.segment_len,
                                batch_size=cfg.batch_size, params=params, with_variance=True,
                                overlap=cfg.overlap)
    w = est.omegas
    ref = stokes_spectra_closed_form(params, d, w, cfg.variant)
    names = ("s11", "s22", "s33", "s23")
    meta = cfgmod.metadata(cfg, "simulate", {
        "n_units": est.count, "n_segments": est.n_segments, "segment_len_ns": est.segment_len,
    })
    header = ["omega_ghz"]
    for n in names:
        header += [f"{n}_mean", f"{n}_stderr"]
    rows = []
    for i, wi in enumerate(w):
        row = [wi]
        for n in names:
            row += [est.mean(n)[i], est.stderr(n)[i]]
        rows.append(row)
    write_csv(out / "estimate.csv", header, rows, meta)

    crow = []
    band = (w >= cfg.band_min) & (w <= cfg.band_max)
    max_z = 0.0
    for i, wi in enumerate(w):
        for n in names:
            m, se, a = est.mean(n)[i], est.stderr(n)[i], getattr(ref, n)[i]
            z = (m - a) / se if se > 0 else (0.0 if m == a else float("inf"))
            if band[i]:
                max_z = max(max_z, abs(z))
            crow.append((wi, n, a, m, se, z))
    write_csv(out / "compare.csv", ("omega_ghz", "component", "analytic", "estimate", "stderr", "z"), crow, meta)

    vr = variance_check(moments, params, cfg.variant)
    write_csv(out / "variance.csv", ("component", "sample", "stderr", "predicted", "z"),
              [(n, vr.sample[n], vr.stderr[n], vr.predicted[n], vr.z[n]) for n in vr.sample], meta)
    print(f"max |z| over [{cfg.band_min}, {cfg.band_max}] GHz: {max_z:.3f}")
    print("variance z-scores: " + ", ".join(f"{k}={v:+.2f}" for k, v in vr.z.items()))
    return EXIT_OK


def cmd_detect(cfg: RunConfig, out: Path) -> int:
    params, d = _physics(cfg)
    grid = cfg.grid()
    sp = stokes_spectra_closed_form(params, d, grid, cfg.variant)
    meta = cfgmod.metadata(cfg, "detect")
    for name in cfg.geometries:
        ds = detection_spectrum(sp, name, params, d)
        write_csv(out / f"detect_{name}.csv", ("omega_ghz", "value"), zip(grid.omegas, ds.values), meta)
    n = int(np.floor((cfg.squeeze_r_max - cfg.squeeze_r_min) / cfg.squeeze_r_step + 1e-9)) + 1
    rs = cfg.squeeze_r_min + cfg.squeeze_r_step * np.arange(n)
    rows = [(r, *squeezing_at_zero(float(r))) for r in rs]
    write_csv(out / "squeezing.csv", ("r", "this_laser", "nondegenerate_ref", "short_lower_ref"), rows, meta)
    return EXIT_OK


def cmd_stability(cfg: RunConfig, out: Path) -> int:
    params, d = _physics(cfg)
    rep = stability(drift_matrices(d, params))
    rows = [("block1", e.real, e.imag) for e in rep.eigenvalues_block1]
    rows += [("block2", e.real, e.imag) for e in rep.eigenvalues_block2]
    write_csv(out / "stability.csv", ("block", "eig_real", "eig_imag"), rows,
              cfgmod.metadata(cfg, "stability", {"stable": rep.stable}))
    print(f"max Re eig block1 = {rep.max_real_eig_block1:.6g} GHz")
    print(f"max Re eig block2 = {rep.max_real_eig_block2:.6g} GHz")
    print("stable" if rep.stable else "UNSTABLE")
    return EXIT_OK if rep.stable else EXIT_PHYSICS


def _sweep_row(params, omega_max):
    nan = float("nan")
    try:
        d = derive(params)
    except BelowThresholdError:
        return (False, nan, nan, nan, nan, nan, nan, nan, nan)
    rep = stability(drift_matrices(d, params))
    if not rep.stable:
        return (False, rep.max_real_eig_block1, rep.max_real_eig_block2, nan, nan, nan, nan, nan, nan)
    peak = relaxation_peak(params)
    sp = stokes_spectra_closed_form(params, d, np.array([0.0, peak, omega_max]))
    phi0 = detection_spectrum(sp, "phi0", params, d).values[0]
    c = cross_correlation_C(sp)[2]
    return (True, rep.max_real_eig_block1, rep.max_real_eig_block2, relaxation_frequency(params),
            peak, sp.s11[1], sp.s11[0], phi0, c)


def cmd_sweep(cfg: RunConfig, out: Path) -> int:
    base = cfg.laser()
    rows = []
    for v in cfg.sweep_values:
        try:
            params = base.replace(**{cfg.sweep_param: v})
        except ValueError as exc:
            raise ConfigError(f"sweep_values: {cfg.sweep_param}={v!r}: {exc}") from None
        rows.append((v,) + _sweep_row(params, cfg.omega_max))
    header = (cfg.sweep_param, "stable", "max_re_eig_block1", "max_re_eig_block2", "relax_freq",
              "s11_peak_omega", "s11_peak", "s11_zero", "detect_phi0_zero", "c_plus_minus_at_omega_max")
    write_csv(out / "sweep.csv", header, rows, cfgmod.metadata(cfg, "sweep"))
    return EXIT_OK


def cmd_reproduce_figures(cfg: RunConfig, out: Path) -> int:
    """Full-power and cross-correlation curves on a log frequency grid."""
    params, d = _physics(cfg)
    grid = cfg.grid()
    red = stokes_spectra_closed_form(params, d, grid, "rederived")
    pub = stokes_spectra_closed_form(params, d, grid, "published")
    meta = cfgmod.metadata(cfg, "reproduce-figures")
    w = grid.omegas
    write_csv(out / "full_power.csv", ("omega_ghz", "s11", "s11_plus_s22", "s11_plus_s22_published"),
              zip(w, red.s11, red.s11 + red.s22, pub.s11 + pub.s22), meta)
    c_red, c_pub = cross_correlation_C(red), cross_correlation_C(pub)
    write_csv(out / "cross_correlation.csv", ("omega_ghz", "c_plus_minus", "c_plus_minus_published"),
              zip(w, c_red, c_pub), meta)
    if cfg.plot:
        def full(ax):
            ax.semilogy(w, red.s11, label="S1 (full power)")
            ax.semilogy(w, red.s11 + red.s22, label="S1 + S2 (circular components)")
            ax.semilogy(w, pub.s11 + pub.s22, "--", label="S1 + S2, printed coefficients")
            ax.set_xlabel("Omega (GHz)")
            ax.set_ylabel("spectral density")
            ax.legend()

        def corr(ax):
            ax.plot(w, c_red, label="C+- (linear response)")
            ax.plot(w, c_pub, "--", label="C+-, printed coefficients")
            ax.axhline(0.0, color="0.6", lw=0.5)
            ax.set_xlabel("Omega (GHz)")
            ax.set_ylabel("C+-")
            ax.legend()
        _svg(out / "full_power.svg", full)
        _svg(out / "cross_correlation.svg", corr)
    return EXIT_OK


COMMANDS = {
    "spectra": cmd_spectra,
    "simulate": cmd_simulate,
    "detect": cmd_detect,
    "stability": cmd_stability,
    "sweep": cmd_sweep,
    "reproduce-figures": cmd_reproduce_figures,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="vcselnoise",
        description="Stokes-parameter noise spectra, simulation and detection for spin-flip VCSELs.",
    )
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", help="JSON config, or a .meta.json sidecar from an earlier run")
    ap.add_argument("--seed", type=int, help="master RNG seed (overrides config)")
    ap.add_argument("--out-dir", help="output directory (overrides config)")
    ap.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                    help="override any config key; VALUE is parsed as JSON")
    ap.add_argument("--no-plot", action="store_true", help="skip SVG output")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def resolve_config(args) -> RunConfig:
    cfg = cfgmod.load(args.config) if args.config else RunConfig().validate()
    overrides = dict(cfgmod.parse_override(s) for s in args.set)
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out_dir is not None:
        overrides["out_dir"] = args.out_dir
    if args.no_plot:
        overrides["plot"] = False
    return cfgmod.apply_overrides(cfg, overrides) if overrides else cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = resolve_config(args)
        if args.command == "reproduce-figures" and not args.config and not any(
                s.startswith(("grid_scale=", "omega_")) for s in args.set):
            cfg = cfg.replace(grid_scale="log", omega_min=0.05, omega_max=1000.0, omega_count=2048)
        out = Path(cfg.out_dir)
        return COMMANDS[args.command](cfg, out)
    except (ConfigError, UnsupportedGeometryError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except PHYSICS_ERRORS as exc:
        print(f"physics error: {exc}", file=sys.stderr)
        return EXIT_PHYSICS
    except NUMERICAL_ERRORS as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
