"""Lattice coupling of Liouville and sinh-Gordon fields to the Gaussian free field."""

__version__ = "0.1.0"
