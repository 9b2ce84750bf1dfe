"""Balanced polarization detection of Stokes noise and squeezing benchmarks.

A polarizing beamsplitter at angle ``phi`` (optionally behind a phase plate
shifting by ``theta``) splits the beam onto two photodiodes. The normalized
difference-current spectrum equals 1 at the shot-noise level; values below
1 mean squeezing.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .analytic import FrequencyGrid, StokesSpectra
from .model import BelowThresholdError, DerivedParams, LaserParams, derive


@dataclass(frozen=True)
class DetectionGeometry:
    name: str
    phi: float
    theta: float | None
    weight: float  # prefactor in units of kappa / n_x
    terms: tuple  # (coefficient, spectrum name) pairs


GEOMETRIES = {
    g.name: g
    for g in (
        DetectionGeometry("phi0", 0.0, None, 2.0, ((1.0, "s11"),)),
        DetectionGeometry("phi45_theta0", np.pi / 4, 0.0, 2.0, ((1.0, "s22"),)),
        DetectionGeometry("phi45_theta90", np.pi / 4, np.pi / 2, 2.0, ((1.0, "s33"),)),
        DetectionGeometry("phi45_theta45", np.pi / 4, np.pi / 4, 1.0,
                          ((1.0, "s22"), (1.0, "s33"), (2.0, "s23"))),
        DetectionGeometry("phi22_theta0", np.pi / 8, 0.0, 1.0,
                          ((1.0, "s11"), (1.0, "s22"), (2.0, "s12"))),
        DetectionGeometry("phi22_theta90", np.pi / 8, np.pi / 2, 1.0,
                          ((1.0, "s11"), (1.0, "s33"), (2.0, "s13"))),
    )
}


class UnsupportedGeometryError(ValueError):
    """Raised for a (phi, theta) combination without a detection formula."""


def geometry(name_or_angles) -> DetectionGeometry:
    """Look up a geometry by name or by a ``(phi, theta)`` pair.

    ``theta`` is ignored (may be None) for ``phi = 0``.
    """
    if isinstance(name_or_angles, DetectionGeometry):
        return name_or_angles
    if isinstance(name_or_angles, str):
        try:
            return GEOMETRIES[name_or_angles]
        except KeyError:
            raise UnsupportedGeometryError(
                f"unknown geometry {name_or_angles!r}; supported: {', '.join(GEOMETRIES)}"
            ) from None
    phi, theta = name_or_angles
    for g in GEOMETRIES.values():
        if np.isclose(phi, g.phi, atol=1e-12) and (
            g.theta is None or (theta is not None and np.isclose(theta, g.theta, atol=1e-12))
        ):
            return g
    raise UnsupportedGeometryError(f"no detection formula for phi={phi}, theta={theta}")


@dataclass(frozen=True)
class DetectionSpectrum:
    grid: FrequencyGrid
    values: np.ndarray
    geometry: DetectionGeometry

    @property
    def omegas(self) -> np.ndarray:
        return self.grid.omegas


def detection_spectrum(spectra: StokesSpectra, geom, params: LaserParams,
                       derived: DerivedParams | None = None) -> DetectionSpectrum:
    """Shot-noise-normalized difference-current spectrum for one geometry.

    The prefactor uses the bare cavity rate ``kappa`` (not ``kappa_x``).
    """
    g = geometry(geom)
    d = derived or derive(params)
    total = sum(coef * spectra.component(name) for coef, name in g.terms)
    values = 1.0 + g.weight * params.kappa / d.n_x * total
    return DetectionSpectrum(grid=spectra.grid, values=np.asarray(values, dtype=float), geometry=g)


def squeezing_at_zero(r):
    """Zero-frequency intensity-noise levels for regular pumping.

    Returns ``(this_laser, nondegenerate_ref, short_lower_ref)``: this
    model with equally living levels, a laser without level degeneracy,
    and a laser with a short-lived lower level. Plain arithmetic, so exact
    rationals (``fractions.Fraction``) are supported.
    """
    if isinstance(r, LaserParams):
        r = r.pump_r
    if not r > 1:
        raise BelowThresholdError(f"pump_r must exceed 1, got {r}")
    x = (5 - r) / (r - 1)
    ratio = r / (r - 1)
    return (1 + x * ratio / 2, 1 + x / 2, 1 + (3 - r) / (r - 1) * ratio)
