"""Stokes-parameter noise of spin-flip VCSELs with equally living laser levels.

Three mutually checking paths to the fluctuation spectra: closed forms
(:mod:`vcselnoise.analytic`), a frequency-domain linear-response solve
(:func:`vcselnoise.analytic.linear_response_oracle`) and Monte-Carlo
simulation (:mod:`vcselnoise.noise_sim`, :mod:`vcselnoise.spectra_est`).
"""

__version__ = "0.1.0"
