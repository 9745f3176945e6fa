"""Periodic-torus toolkit for quasiconvex elastodynamics: spectral calculus,
stored energies, quasiconvexity probes, a pseudospectral solver and
relative-entropy / Young-measure diagnostics."""

__version__ = "0.1.0"
