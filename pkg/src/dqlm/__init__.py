"""Exact diagonalization and analytic verification for dissipative
U(1) quantum link models: Liouvillian spectra under open, periodic and
twisted boundaries, exact steady states and eigenoperators, quench
dynamics, and the hierarchical / two-dimensional generalizations."""

__version__ = "0.1.0"

from .lattice import LatticeLayout, SparseOperator, build_layout

__all__ = ["LatticeLayout", "SparseOperator", "build_layout", "__version__"]
