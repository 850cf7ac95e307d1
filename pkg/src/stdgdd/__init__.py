"""Space-time DG solver toolkit with two-level Schwarz preconditioning and
adaptive selection of the domain decomposition."""
from __future__ import annotations

__version__ = "0.1.0"
