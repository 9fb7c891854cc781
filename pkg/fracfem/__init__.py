"""fracfem: Galerkin finite elements for time-fractional subdiffusion.

Solves the homogeneous Caputo subdiffusion equation on the unit interval and
unit square with P1 standard-Galerkin and lumped-mass elements:
- Mittag-Leffler evaluation for the exact per-mode solution operators
- spectral (sine series) reference solutions, including Dirac initial data
- exact semidiscrete solves, contour inversion and the L1 time stepper
- convergence tables against the reference, with golden-value comparisons
"""

__version__ = "0.1.0"
