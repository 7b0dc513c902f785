"""Dichotomies, dichotomy spectra, Fredholm indices and index-bundle
invariants for parametrized discrete dynamical systems on the integer
lattice."""

from __future__ import annotations

__version__ = "0.1.0"
