"""Random-current representation of ferromagnetic Ising models at desk scale.

Subpackages cover coupling models and finite regions, the current algebra,
exact small-graph oracles, worm and spin Monte Carlo samplers, percolation
analysis of duplicated currents, and torus Fourier / transience diagnostics.
"""

__version__ = "0.1.0"

from .model import (
    CouplingModel,
    CouplingTerm,
    Region,
    build_box,
    build_region,
    build_torus,
    ghost_coupling,
    hamiltonian,
    mode_energy,
    validate,
)

__all__ = [
    "CouplingModel",
    "CouplingTerm",
    "Region",
    "build_box",
    "build_region",
    "build_torus",
    "ghost_coupling",
    "hamiltonian",
    "mode_energy",
    "validate",
    "__version__",
]
