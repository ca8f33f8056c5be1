"""First integrals of partial Hamiltonian systems."""

__version__ = "0.1.0"
