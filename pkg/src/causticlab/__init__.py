"""causticlab: geometric-optics caustic analysis and correction.

Submodules:

- ``phase_space``     symplectic 4x4 ray transport at a screen
- ``lens_model``      exact biconvex lens tracing and its caustic
- ``caustic_geometry`` envelope criteria, surface measure, curvature ODE
- ``wavefront``       pupil aberrations, generating function, Strehl
- ``catastrophe``     normal forms, bifurcation sets, classification
- ``corrector``       balancing, gradient descent, the topological loop
- ``cli``             command-line entry point
"""

__version__ = "0.1.0"

from . import (  # noqa: F401
    catastrophe,
    caustic_geometry,
    corrector,
    lens_model,
    phase_space,
    wavefront,
)
